//! Encoder/decoder composition, the reconstruction loss `l_0`, the Gaussian
//! SQ-VAE objective and the data-dependent prior regularizers.
//!
//! The objective for one sample `x` with latent `z = f(x)` is
//!
//! ```text
//! d/2 log s2 + ||x - g(zhat)||^2 / (2 s2) + sum_k q_k ||z - e_k||^2 / (2 s2_psi) + R(q)
//! ```
//!
//! where `q` is the softmax posterior at inverse temperature `1 / (2 s2_psi)`,
//! `zhat` is the Gumbel-softmax mixture of codebook entries and `R(q)` is the
//! negative entropy, optionally mixed with a KL term against a prior.

use std::ops::Range;

use rand::Rng;

use crate::diffcore::{mlp_forward, mlp_forward_taped, GradTape, MlpSpec};
use crate::error::{check_len, Error, Result};
use crate::quantizer::{
    deterministic_posterior, gumbel_noise, gumbel_softmax_with_noise, log_softmax,
    quantize_straight_through, stochastic_posterior, validate_probs, CategoricalPosterior,
    Codebook, IndexDistribution, COMMITMENT_WEIGHT,
};

/// Smallest prior mass accepted by KL consumers.
pub const PRIOR_FLOOR: f64 = 1e-12;

/// Scale of the uniform codebook initialization.
const CODEBOOK_INIT_SCALE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosteriorMode {
    Deterministic,
    Stochastic,
}

/// All learned quantities of a quantized autoencoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder_spec: MlpSpec,
    pub encoder: Vec<f64>,
    pub decoder_spec: MlpSpec,
    pub decoder: Vec<f64>,
    pub codebook: Codebook,
    /// Decoder observation log-variance.
    pub log_sigma2: f64,
    /// Dequantization log-variance.
    pub log_sigma_psi2: f64,
    /// Inverse temperature of the stochastic posterior at evaluation time.
    pub beta_q: f64,
}

/// A named contiguous range of the flattened parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: &'static str,
    pub range: Range<usize>,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(
        encoder_spec: MlpSpec,
        decoder_spec: MlpSpec,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_len(
            "decoder input width",
            encoder_spec.output_dim(),
            decoder_spec.input_dim(),
        )?;
        check_len(
            "decoder output width",
            encoder_spec.input_dim(),
            decoder_spec.output_dim(),
        )?;
        if k == 0 {
            return Err(Error::Parameter("codebook size must be >= 1".into()));
        }
        let encoder = encoder_spec.init_params(rng);
        let decoder = decoder_spec.init_params(rng);
        let codebook = Codebook::random(k, encoder_spec.output_dim(), CODEBOOK_INIT_SCALE, rng)?;
        let mut params = ModelParams {
            encoder_spec,
            encoder,
            decoder_spec,
            decoder,
            codebook,
            log_sigma2: 0.0,
            log_sigma_psi2: 0.0,
            beta_q: 0.0,
        };
        params.beta_q = params.training_beta();
        Ok(params)
    }

    pub fn data_dim(&self) -> usize {
        self.encoder_spec.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.codebook.dz()
    }

    pub fn k(&self) -> usize {
        self.codebook.k()
    }

    /// Inverse temperature implied by the dequantization variance,
    /// `1 / (2 s2_psi)`.
    pub fn training_beta(&self) -> f64 {
        0.5 * (-self.log_sigma_psi2).exp()
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        mlp_forward(&self.encoder_spec, &self.encoder, x)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        mlp_forward(&self.decoder_spec, &self.decoder, z)
    }

    /// `g(e_j)` for every code, clamped into the unit box.
    pub fn decoded_codes(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.k())
            .map(|j| {
                let mut y = self.decode(self.codebook.entry(j))?;
                y.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                Ok(y)
            })
            .collect()
    }

    pub fn posterior(&self, x: &[f64], mode: PosteriorMode) -> Result<IndexDistribution> {
        let z = self.encode(x)?;
        match mode {
            PosteriorMode::Deterministic => deterministic_posterior(&z, &self.codebook),
            PosteriorMode::Stochastic => stochastic_posterior(&z, &self.codebook, self.beta_q),
        }
    }

    pub fn posteriors(&self, xs: &[Vec<f64>], mode: PosteriorMode) -> Result<CategoricalPosterior> {
        let rows = xs
            .iter()
            .map(|x| self.posterior(x, mode))
            .collect::<Result<Vec<_>>>()?;
        CategoricalPosterior::from_distributions(&rows)
    }

    pub fn layout(&self) -> Vec<ParamBlock> {
        let sizes = [
            ("encoder", self.encoder.len()),
            ("decoder", self.decoder.len()),
            ("codebook", self.codebook.entries().as_slice().len()),
            ("log_sigma2", 1),
            ("log_sigma_psi2", 1),
        ];
        let mut off = 0;
        sizes
            .iter()
            .map(|&(name, len)| {
                let block = ParamBlock {
                    name,
                    range: off..off + len,
                };
                off += len;
                block
            })
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_trainable());
        flat.extend_from_slice(&self.encoder);
        flat.extend_from_slice(&self.decoder);
        flat.extend_from_slice(self.codebook.entries().as_slice());
        flat.push(self.log_sigma2);
        flat.push(self.log_sigma_psi2);
        flat
    }

    pub fn num_trainable(&self) -> usize {
        self.encoder.len() + self.decoder.len() + self.codebook.entries().as_slice().len() + 2
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("flat parameters", self.num_trainable(), flat.len())?;
        let (e, rest) = flat.split_at(self.encoder.len());
        let (d, rest) = rest.split_at(self.decoder.len());
        let (c, rest) = rest.split_at(self.codebook.entries().as_slice().len());
        self.encoder.copy_from_slice(e);
        self.decoder.copy_from_slice(d);
        self.codebook.entries_mut().as_mut_slice().copy_from_slice(c);
        self.log_sigma2 = rest[0];
        self.log_sigma_psi2 = rest[1];
        Ok(())
    }
}

/// A distribution over codebook indices used as a (possibly data-dependent)
/// prior.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorVector {
    pi: Vec<f64>,
}

impl PriorVector {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        validate_probs(&pi)?;
        Ok(PriorVector { pi })
    }

    pub fn uniform(k: usize) -> Self {
        PriorVector {
            pi: vec![1.0 / k as f64; k],
        }
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.pi
    }

    pub(crate) fn from_unchecked(pi: Vec<f64>) -> Self {
        PriorVector { pi }
    }

    fn check_floor(&self) -> Result<()> {
        match self.pi.iter().position(|&p| p < PRIOR_FLOOR) {
            Some(k) => Err(Error::Parameter(format!(
                "prior entry {k} = {:e} is below the floor {PRIOR_FLOOR:e}",
                self.pi[k]
            ))),
            None => Ok(()),
        }
    }
}

fn expected_sq_error(x: &[f64], post: &IndexDistribution, codes: &[Vec<f64>]) -> f64 {
    post.probs()
        .iter()
        .zip(codes)
        .filter(|(&q, _)| q > 0.0)
        .map(|(&q, y)| q * crate::diffcore::sq_dist(x, y))
        .sum()
}

/// `E_{q(J|x)} ||x - g(e_J)||^2`, summed exactly over the `K` outcomes with
/// decoder outputs clamped into the unit box.
pub fn reconstruction_loss_l0(params: &ModelParams, x: &[f64], mode: PosteriorMode) -> Result<f64> {
    check_len("data vector", params.data_dim(), x.len())?;
    let codes = params.decoded_codes()?;
    let post = params.posterior(x, mode)?;
    Ok(expected_sq_error(x, &post, &codes))
}

/// Per-point `l_0` for a batch, decoding the codebook once.
pub fn reconstruction_losses(
    params: &ModelParams,
    xs: &[Vec<f64>],
    mode: PosteriorMode,
) -> Result<Vec<f64>> {
    let codes = params.decoded_codes()?;
    xs.iter()
        .map(|x| {
            check_len("data vector", params.data_dim(), x.len())?;
            let post = params.posterior(x, mode)?;
            Ok(expected_sq_error(x, &post, &codes))
        })
        .collect()
}

pub fn mean_reconstruction_loss(
    params: &ModelParams,
    xs: &[Vec<f64>],
    mode: PosteriorMode,
) -> Result<f64> {
    let losses = reconstruction_losses(params, xs, mode)?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Mean Shannon entropy of the posterior rows, in nats.
pub fn entropy_of_posteriors(post: &CategoricalPosterior) -> f64 {
    let total: f64 = post
        .iter_rows()
        .map(|row| {
            -row.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .sum();
    total / post.n() as f64
}

/// Mean per-row `KL(q_n || pi)` in nats.
pub fn cdvib_regularizer(post: &CategoricalPosterior, prior: &PriorVector) -> Result<f64> {
    check_len("prior", post.k(), prior.k())?;
    prior.check_floor()?;
    let total: f64 = post
        .iter_rows()
        .map(|row| {
            row.iter()
                .zip(prior.probs())
                .filter(|(&q, _)| q > 0.0)
                .map(|(&q, &p)| q * (q / p).ln())
                .sum::<f64>()
        })
        .sum();
    Ok((total / post.n() as f64).max(0.0))
}

/// `(1 - lambda) (-mean entropy) + lambda KL_CDVIB`.
pub fn mixed_regularizer(
    post: &CategoricalPosterior,
    prior: &PriorVector,
    lambda_mix: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda_mix) {
        return Err(Error::Parameter(format!(
            "lambda_mix must lie in [0, 1], got {lambda_mix}"
        )));
    }
    let neg_entropy = -entropy_of_posteriors(post);
    if lambda_mix == 0.0 {
        return Ok(neg_entropy);
    }
    let kl = cdvib_regularizer(post, prior)?;
    Ok((1.0 - lambda_mix) * neg_entropy + lambda_mix * kl)
}

/// Regularizer on the index posterior inside the training objective.
#[derive(Clone, Copy, Debug)]
pub enum Regularizer<'a> {
    /// Negative entropy (the SQ-VAE baseline).
    Entropy,
    /// Negative entropy mixed with `KL(q || prior)`; the prior is held fixed
    /// during differentiation.
    Mixed {
        prior: &'a PriorVector,
        lambda_mix: f64,
    },
}

impl Regularizer<'_> {
    fn lambda_and_log_prior(&self, k: usize) -> Result<(f64, Vec<f64>)> {
        match *self {
            Regularizer::Entropy => Ok((0.0, vec![0.0; k])),
            Regularizer::Mixed { prior, lambda_mix } => {
                if !(0.0..=1.0).contains(&lambda_mix) {
                    return Err(Error::Parameter(format!(
                        "lambda_mix must lie in [0, 1], got {lambda_mix}"
                    )));
                }
                check_len("prior", k, prior.k())?;
                prior.check_floor()?;
                Ok((lambda_mix, prior.probs().iter().map(|p| p.ln()).collect()))
            }
        }
    }
}

/// Gradients matching the [`ModelParams::flatten`] layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
    pub codebook: Vec<f64>,
    pub log_sigma2: f64,
    pub log_sigma_psi2: f64,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ModelGrads {
            encoder: vec![0.0; params.encoder.len()],
            decoder: vec![0.0; params.decoder.len()],
            codebook: vec![0.0; params.codebook.entries().as_slice().len()],
            log_sigma2: 0.0,
            log_sigma_psi2: 0.0,
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.encoder.len() + self.decoder.len() + self.codebook.len() + 2);
        flat.extend_from_slice(&self.encoder);
        flat.extend_from_slice(&self.decoder);
        flat.extend_from_slice(&self.codebook);
        flat.push(self.log_sigma2);
        flat.push(self.log_sigma_psi2);
        flat
    }
}

struct SampleCache<'a> {
    x: Vec<f64>,
    z: Vec<f64>,
    dist: Vec<f64>,
    log_q: Vec<f64>,
    relaxed: Vec<f64>,
    residual_sq: f64,
    y: Vec<f64>,
    enc: GradTape<'a>,
    dec: GradTape<'a>,
}

/// Forward state of [`sqvae_loss`], replayable once.
pub struct LossTape<'a> {
    params: &'a ModelParams,
    samples: Vec<SampleCache<'a>>,
    tau: f64,
    lambda_mix: f64,
    log_prior: Vec<f64>,
    consumed: bool,
}

/// Per-sample Gumbel noise for a batch: `batch x K`.
pub fn draw_batch_noise<R: Rng + ?Sized>(batch: usize, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..batch).map(|_| gumbel_noise(k, rng)).collect()
}

/// The batch-mean SQ-VAE objective with freshly drawn Gumbel noise.
pub fn sqvae_loss<'a, R: Rng + ?Sized>(
    params: &'a ModelParams,
    batch: &[Vec<f64>],
    tau: f64,
    regularizer: Regularizer<'_>,
    rng: &mut R,
) -> Result<(f64, LossTape<'a>)> {
    let noise = draw_batch_noise(batch.len(), params.k(), rng);
    sqvae_loss_with_noise(params, batch, tau, regularizer, &noise)
}

/// The batch-mean SQ-VAE objective for fixed Gumbel noise, which makes it a
/// deterministic differentiable function of the parameters.
pub fn sqvae_loss_with_noise<'a>(
    params: &'a ModelParams,
    batch: &[Vec<f64>],
    tau: f64,
    regularizer: Regularizer<'_>,
    noise: &[Vec<f64>],
) -> Result<(f64, LossTape<'a>)> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("tau must be > 0, got {tau}")));
    }
    if batch.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    check_len("noise rows", batch.len(), noise.len())?;
    let k = params.k();
    let (lambda_mix, log_prior) = regularizer.lambda_and_log_prior(k)?;
    let dim = params.data_dim() as f64;
    let inv_sigma2 = (-params.log_sigma2).exp();
    let beta = params.training_beta();
    if !inv_sigma2.is_finite() {
        return Err(Error::Numeric(format!(
            "observation variance underflow (log_sigma2 = {})",
            params.log_sigma2
        )));
    }
    if !beta.is_finite() {
        return Err(Error::Numeric(format!(
            "dequantization variance underflow (log_sigma_psi2 = {})",
            params.log_sigma_psi2
        )));
    }

    let mut samples = Vec::with_capacity(batch.len());
    let mut total = 0.0;
    for (x, g) in batch.iter().zip(noise) {
        check_len("data vector", params.data_dim(), x.len())?;
        let (z, enc) = mlp_forward_taped(&params.encoder_spec, &params.encoder, x)?;
        let dist = params.codebook.sq_distances(&z)?;
        let logits: Vec<f64> = dist.iter().map(|&d| -beta * d).collect();
        let log_q = log_softmax(&logits);
        let relaxed = gumbel_softmax_with_noise(&logits, g, tau)?;
        let mut zhat = vec![0.0; params.latent_dim()];
        for (j, &s) in relaxed.iter().enumerate() {
            crate::diffcore::axpy(s, params.codebook.entry(j), &mut zhat);
        }
        let (y, dec) = mlp_forward_taped(&params.decoder_spec, &params.decoder, &zhat)?;
        let residual_sq = crate::diffcore::sq_dist(x, &y);

        let recon = 0.5 * dim * params.log_sigma2 + 0.5 * residual_sq * inv_sigma2;
        let mut quant = 0.0;
        let mut reg = 0.0;
        for j in 0..k {
            let q = log_q[j].exp();
            quant += q * dist[j];
            reg += q * (log_q[j] - lambda_mix * log_prior[j]);
        }
        quant *= beta;
        for (term, value) in [
            ("reconstruction", recon),
            ("quantization", quant),
            ("regularizer", reg),
        ] {
            if !value.is_finite() {
                return Err(Error::Numeric(format!("{term} term is {value}")));
            }
        }
        total += recon + quant + reg;
        samples.push(SampleCache {
            x: x.clone(),
            z,
            dist,
            log_q,
            relaxed,
            residual_sq,
            y,
            enc,
            dec,
        });
    }
    let loss = total / batch.len() as f64;
    let tape = LossTape {
        params,
        samples,
        tau,
        lambda_mix,
        log_prior,
        consumed: false,
    };
    Ok((loss, tape))
}

impl LossTape<'_> {
    /// The batch posterior rows `q(J | x)` used in the forward pass.
    pub fn posteriors(&self) -> Result<CategoricalPosterior> {
        let rows: Vec<Vec<f64>> = self
            .samples
            .iter()
            .map(|s| s.log_q.iter().map(|l| l.exp()).collect())
            .collect();
        CategoricalPosterior::new(crate::diffcore::DenseMatrix::from_rows(&rows)?)
    }

    /// Gradient of the batch-mean objective.
    pub fn backward(&mut self) -> Result<ModelGrads> {
        if self.consumed {
            return Err(Error::State("loss tape already consumed"));
        }
        self.consumed = true;
        let params = self.params;
        let k = params.k();
        let dz = params.latent_dim();
        let dim = params.data_dim() as f64;
        let weight = 1.0 / self.samples.len() as f64;
        let inv_sigma2 = (-params.log_sigma2).exp();
        let beta = params.training_beta();
        let mut grads = ModelGrads::zeros_like(params);

        for s in &mut self.samples {
            grads.log_sigma2 += weight * 0.5 * (dim - s.residual_sq * inv_sigma2);

            let d_y: Vec<f64> = s
                .x
                .iter()
                .zip(&s.y)
                .map(|(x, y)| -weight * (x - y) * inv_sigma2)
                .collect();
            let d_zhat = s.dec.backward_into(&d_y, &mut grads.decoder)?;

            // zhat = sum_k s_k e_k
            let mut d_relaxed = vec![0.0; k];
            for j in 0..k {
                let e = params.codebook.entry(j);
                let g = &mut grads.codebook[j * dz..(j + 1) * dz];
                crate::diffcore::axpy(s.relaxed[j], &d_zhat, g);
                d_relaxed[j] = crate::diffcore::dot(e, &d_zhat);
            }
            // relaxed = softmax((logits + noise) / tau)
            let sdot: f64 = s.relaxed.iter().zip(&d_relaxed).map(|(a, b)| a * b).sum();
            let mut d_logits: Vec<f64> = s
                .relaxed
                .iter()
                .zip(&d_relaxed)
                .map(|(r, d)| r * (d - sdot) / self.tau)
                .collect();

            // q = softmax(logits); objective terms depending on q directly
            let q: Vec<f64> = s.log_q.iter().map(|l| l.exp()).collect();
            let d_q: Vec<f64> = (0..k)
                .map(|j| weight * (beta * s.dist[j] + s.log_q[j] - self.lambda_mix * self.log_prior[j]))
                .collect();
            let qdot: f64 = q.iter().zip(&d_q).map(|(a, b)| a * b).sum();
            for j in 0..k {
                d_logits[j] += q[j] * (d_q[j] - qdot);
            }

            // logits = -beta * dist, plus the explicit beta * sum q dist term
            let mut d_beta = 0.0;
            let mut d_z = vec![0.0; dz];
            for j in 0..k {
                let d_dist = weight * beta * q[j] - beta * d_logits[j];
                d_beta += weight * q[j] * s.dist[j] - s.dist[j] * d_logits[j];
                let e = params.codebook.entry(j);
                let g = &mut grads.codebook[j * dz..(j + 1) * dz];
                for c in 0..dz {
                    let diff = s.z[c] - e[c];
                    d_z[c] += 2.0 * d_dist * diff;
                    g[c] -= 2.0 * d_dist * diff;
                }
            }
            // beta = exp(-log_sigma_psi2) / 2
            grads.log_sigma_psi2 -= beta * d_beta;

            s.enc.backward_into(&d_z, &mut grads.encoder)?;
        }
        Ok(grads)
    }
}

/// Straight-through objective for deterministic quantization:
/// `||x - g(e_j*)||^2 + ||stop(z) - e||^2 + 0.25 ||z - stop(e)||^2`, batch mean.
///
/// Returns the loss and its straight-through gradient. The variance
/// parameters receive zero gradient.
pub fn vq_loss_and_grad(params: &ModelParams, batch: &[Vec<f64>]) -> Result<(f64, ModelGrads)> {
    if batch.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    let dz = params.latent_dim();
    let weight = 1.0 / batch.len() as f64;
    let mut grads = ModelGrads::zeros_like(params);
    let mut total = 0.0;
    for x in batch {
        check_len("data vector", params.data_dim(), x.len())?;
        let (z, mut enc) = mlp_forward_taped(&params.encoder_spec, &params.encoder, x)?;
        let st = quantize_straight_through(&z, &params.codebook)?;
        let (y, mut dec) = mlp_forward_taped(&params.decoder_spec, &params.decoder, &st.code)?;
        let recon = crate::diffcore::sq_dist(x, &y);
        let loss = recon + st.codebook_loss() + st.commitment_loss();
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("straight-through loss is {loss}")));
        }
        total += loss;

        let d_y: Vec<f64> = x.iter().zip(&y).map(|(x, y)| -2.0 * weight * (x - y)).collect();
        let d_code = dec.backward_into(&d_y, &mut grads.decoder)?;
        let mut d_z = st.backward(&d_code);
        for (dzc, c) in d_z.iter_mut().zip(st.commitment_loss_grad()) {
            *dzc += weight * c;
        }
        let g = &mut grads.codebook[st.index * dz..(st.index + 1) * dz];
        for (gc, c) in g.iter_mut().zip(st.codebook_loss_grad()) {
            *gc += weight * c;
        }
        enc.backward_into(&d_z, &mut grads.encoder)?;
    }
    debug_assert!(COMMITMENT_WEIGHT > 0.0);
    Ok((total * weight, grads))
}
