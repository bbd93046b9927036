//! Optimization loop: Adam, temperature annealing, learning-rate halving on
//! a validation plateau and the moving-average prior update.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Activation, MlpSpec};
use crate::error::{check_len, Error, Result};
use crate::model::{
    draw_batch_noise, sqvae_loss_with_noise, vq_loss_and_grad, ModelGrads, ModelParams,
    PriorVector, Regularizer, PRIOR_FLOOR,
};
use crate::quantizer::CategoricalPosterior;

/// Losses above this magnitude abort training.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    SqStochastic,
    VqDeterministic,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::SqStochastic => "sq_stochastic",
            TrainMode::VqDeterministic => "vq_deterministic",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sq_stochastic" => Ok(TrainMode::SqStochastic),
            "vq_deterministic" => Ok(TrainMode::VqDeterministic),
            other => Err(Error::Parameter(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_halve_patience_epochs: usize,
    pub anneal_rate: f64,
    pub alpha_ema: f64,
    pub lambda_mix: f64,
    pub mode: TrainMode,
    pub seed: u64,
    /// Starting value of the observation log-variance.
    pub init_log_sigma2: f64,
    /// Starting value of the dequantization log-variance.
    pub init_log_sigma_psi2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            lr_halve_patience_epochs: 3,
            anneal_rate: 1e-5,
            alpha_ema: 0.9,
            lambda_mix: 0.0,
            mode: TrainMode::SqStochastic,
            seed: 0,
            init_log_sigma2: 0.0,
            init_log_sigma_psi2: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::Parameter(format!(
                "batch_size must lie in [1, {n}], got {}",
                self.batch_size
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Parameter(format!("lr must be finite and > 0, got {}", self.lr)));
        }
        if !(self.anneal_rate.is_finite() && self.anneal_rate >= 0.0) {
            return Err(Error::Parameter(format!(
                "anneal_rate must be finite and >= 0, got {}",
                self.anneal_rate
            )));
        }
        for (name, v) in [
            ("init_log_sigma2", self.init_log_sigma2),
            ("init_log_sigma_psi2", self.init_log_sigma_psi2),
        ] {
            if !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be finite, got {v}")));
            }
        }
        for (name, v) in [("alpha_ema", self.alpha_ema), ("lambda_mix", self.lambda_mix)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parameter(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Encoder/decoder shapes plus codebook size.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub encoder: MlpSpec,
    pub decoder: MlpSpec,
    pub k: usize,
}

impl Architecture {
    /// Tanh MLPs with `enc_layers` / `dec_layers` affine layers and a common
    /// hidden width.
    pub fn mlp(
        data_dim: usize,
        latent_dim: usize,
        hidden: usize,
        enc_layers: usize,
        dec_layers: usize,
        k: usize,
    ) -> Result<Self> {
        if enc_layers == 0 || dec_layers == 0 {
            return Err(Error::Parameter("networks need at least one layer".into()));
        }
        let widths = |from: usize, to: usize, layers: usize| {
            let mut w = vec![from];
            w.extend(std::iter::repeat_n(hidden, layers - 1));
            w.push(to);
            w
        };
        Ok(Architecture {
            encoder: MlpSpec::uniform(widths(data_dim, latent_dim, enc_layers), Activation::Tanh)?,
            decoder: MlpSpec::uniform(widths(latent_dim, data_dim, dec_layers), Activation::Tanh)?,
            k,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ModelParams> {
        ModelParams::init(self.encoder.clone(), self.decoder.clone(), self.k, rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub tau: f64,
    pub lr: f64,
    pub prior: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    /// Objective on the full training set before the first update.
    pub initial_train_loss: Option<f64>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,tau,lr\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.12e},{:.12e},{:.12e},{:.12e}",
                e.epoch, e.train_loss, e.val_loss, e.tau, e.lr
            );
        }
        out
    }
}

/// First and second moment estimates for Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected update of a flat parameter vector.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        check_len("parameters", self.m.len(), params.len())?;
        check_len("gradients", self.m.len(), grads.len())?;
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at index {i}")));
        }
        self.apply(params, grads, lr);
        Ok(())
    }

    fn apply(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

/// Adam step on a model; non-finite gradients are reported by block name.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelGrads,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let flat_grads = grads.flatten();
    check_len("gradients", params.num_trainable(), flat_grads.len())?;
    check_len("optimizer state", params.num_trainable(), state.m.len())?;
    for block in params.layout() {
        if let Some(i) = flat_grads[block.range.clone()]
            .iter()
            .position(|g| !g.is_finite())
        {
            return Err(Error::Numeric(format!(
                "non-finite gradient in {} (entry {i})",
                block.name
            )));
        }
    }
    let mut flat = params.flatten();
    state.apply(&mut flat, &flat_grads, lr);
    params.load_flat(&flat)
}

/// `tau = exp(-rate * step)`.
pub fn anneal_temperature(step: u64, rate: f64) -> f64 {
    (-rate * step as f64).exp()
}

/// `pi <- (1 - alpha) pi + alpha mean_n q_n`, floored and renormalized.
pub fn update_prior_ema(
    prior: &PriorVector,
    batch_post: &CategoricalPosterior,
    alpha: f64,
) -> Result<PriorVector> {
    check_len("batch posterior width", prior.k(), batch_post.k())?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let n = batch_post.n() as f64;
    let mut mean = vec![0.0; prior.k()];
    for row in batch_post.iter_rows() {
        for (m, q) in mean.iter_mut().zip(row) {
            *m += q / n;
        }
    }
    let mut pi: Vec<f64> = prior
        .probs()
        .iter()
        .zip(&mean)
        .map(|(p, m)| ((1.0 - alpha) * p + alpha * m).max(PRIOR_FLOOR))
        .collect();
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(PriorVector::from_unchecked(pi))
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub prior: PriorVector,
    pub history: TrainHistory,
}

struct Objective<'a> {
    config: &'a TrainConfig,
}

impl Objective<'_> {
    fn regularizer<'p>(&self, prior: &'p PriorVector) -> Regularizer<'p> {
        if self.config.lambda_mix > 0.0 {
            Regularizer::Mixed {
                prior,
                lambda_mix: self.config.lambda_mix,
            }
        } else {
            Regularizer::Entropy
        }
    }

    /// Full-set objective in chunks, with noise from a dedicated stream so
    /// that evaluation does not perturb the training stream.
    fn evaluate(
        &self,
        params: &ModelParams,
        data: &[Vec<f64>],
        tau: f64,
        prior: &PriorVector,
        seed: u64,
    ) -> Result<f64> {
        let chunk = self.config.batch_size.max(1);
        let mut total = 0.0;
        match self.config.mode {
            TrainMode::SqStochastic => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for c in data.chunks(chunk) {
                    let noise = draw_batch_noise(c.len(), params.k(), &mut rng);
                    let (loss, _) =
                        sqvae_loss_with_noise(params, c, tau, self.regularizer(prior), &noise)?;
                    total += loss * c.len() as f64;
                }
            }
            TrainMode::VqDeterministic => {
                for c in data.chunks(chunk) {
                    total += vq_loss_and_grad(params, c)?.0 * c.len() as f64;
                }
            }
        }
        Ok(total / data.len() as f64)
    }
}

fn eval_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15_u64.wrapping_mul(epoch as u64 + 1)
}

/// Train a fresh model. Deterministic in `(config, data, validation)`.
///
/// When `validation` is `None` the plateau schedule watches the training
/// objective instead.
pub fn train(
    config: &TrainConfig,
    data: &[Vec<f64>],
    validation: Option<&[Vec<f64>]>,
    arch: &Architecture,
) -> Result<TrainOutcome> {
    check_data(config, data, validation, arch.encoder.input_dim())?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = arch.init(&mut rng)?;
    params.log_sigma2 = config.init_log_sigma2;
    params.log_sigma_psi2 = config.init_log_sigma_psi2;
    params.beta_q = params.training_beta();
    train_loop(config, data, validation, params, rng)
}

/// Continue training from given parameters with a fresh optimizer state.
/// The variance initializations in `config` are not applied.
pub fn train_from(
    config: &TrainConfig,
    data: &[Vec<f64>],
    validation: Option<&[Vec<f64>]>,
    params: ModelParams,
) -> Result<TrainOutcome> {
    check_data(config, data, validation, params.data_dim())?;
    train_loop(config, data, validation, params, ChaCha8Rng::seed_from_u64(config.seed))
}

fn check_data(
    config: &TrainConfig,
    data: &[Vec<f64>],
    validation: Option<&[Vec<f64>]>,
    dim: usize,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Parameter("empty training set".into()));
    }
    config.validate(data.len())?;
    if let Some(i) = data
        .iter()
        .chain(validation.unwrap_or(&[]))
        .position(|x| x.len() != dim)
    {
        return Err(Error::Parameter(format!(
            "data row {i} has the wrong dimension (expected {dim})"
        )));
    }
    Ok(())
}

fn train_loop(
    config: &TrainConfig,
    data: &[Vec<f64>],
    validation: Option<&[Vec<f64>]>,
    mut params: ModelParams,
    mut rng: ChaCha8Rng,
) -> Result<TrainOutcome> {
    let mut prior = PriorVector::uniform(params.k());
    let objective = Objective { config };
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            params,
            prior,
            history,
        });
    }
    history.initial_train_loss = Some(objective.evaluate(
        &params,
        data,
        1.0,
        &prior,
        eval_seed(config.seed, 0),
    )?);

    let mut adam = AdamState::new(params.num_trainable());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut lr = config.lr;
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut step: u64 = 0;
    let mut batch: Vec<Vec<f64>> = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut tau = anneal_temperature(step, config.anneal_rate);
        for idx in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| data[i].clone()));
            tau = anneal_temperature(step, config.anneal_rate);
            let (loss, grads) = match config.mode {
                TrainMode::SqStochastic => {
                    let noise = draw_batch_noise(batch.len(), params.k(), &mut rng);
                    let (loss, mut tape) = sqvae_loss_with_noise(
                        &params,
                        &batch,
                        tau,
                        objective.regularizer(&prior),
                        &noise,
                    )?;
                    let grads = tape.backward()?;
                    if config.lambda_mix > 0.0 {
                        prior = update_prior_ema(&prior, &tape.posteriors()?, config.alpha_ema)?;
                    }
                    (loss, grads)
                }
                TrainMode::VqDeterministic => vq_loss_and_grad(&params, &batch)?,
            };
            if !loss.is_finite() || loss.abs() > DIVERGENCE_THRESHOLD {
                return Err(Error::Diverged {
                    epoch,
                    loss,
                    history: Box::new(history),
                });
            }
            epoch_loss += loss * batch.len() as f64;
            adam_step(&mut params, &grads, &mut adam, lr)?;
            step += 1;
        }
        let train_loss = epoch_loss / data.len() as f64;
        let val_loss = match validation {
            Some(v) if !v.is_empty() => {
                objective.evaluate(&params, v, tau, &prior, eval_seed(config.seed, epoch))?
            }
            _ => train_loss,
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            tau,
            lr,
            prior: prior.probs().to_vec(),
        });
        if val_loss < best {
            best = val_loss;
            stale = 0;
        } else {
            stale += 1;
            if config.lr_halve_patience_epochs > 0 && stale >= config.lr_halve_patience_epochs {
                lr *= 0.5;
                stale = 0;
            }
        }
    }
    if config.mode == TrainMode::SqStochastic {
        params.beta_q = params.training_beta();
    }
    Ok(TrainOutcome {
        params,
        prior,
        history,
    })
}
