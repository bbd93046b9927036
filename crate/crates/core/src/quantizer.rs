//! Codebook storage and the index posteriors built on it.

use rand::Rng;

use crate::diffcore::{sq_dist, DenseMatrix};
use crate::error::{check_len, Error, Result};

/// Tolerance on row sums of probability vectors.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// Clamp applied to uniforms before the Gumbel inverse CDF.
const GUMBEL_U_CLAMP: f64 = 1e-12;

/// `K` latent vectors of dimension `dz`, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    entries: DenseMatrix,
}

impl Codebook {
    pub fn new(entries: DenseMatrix) -> Result<Self> {
        if entries.rows() == 0 || entries.cols() == 0 {
            return Err(Error::Parameter(format!(
                "codebook needs K >= 1 and dz >= 1, got {}x{}",
                entries.rows(),
                entries.cols()
            )));
        }
        Ok(Codebook { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(DenseMatrix::from_rows(rows)?)
    }

    /// Entries drawn uniformly from `[-scale, scale]^dz`.
    pub fn random<R: Rng + ?Sized>(k: usize, dz: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let data = (0..k * dz)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        Self::new(DenseMatrix::from_vec(k, dz, data)?)
    }

    pub fn k(&self) -> usize {
        self.entries.rows()
    }

    pub fn dz(&self) -> usize {
        self.entries.cols()
    }

    pub fn entry(&self, j: usize) -> &[f64] {
        self.entries.row(j)
    }

    pub fn entries(&self) -> &DenseMatrix {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut DenseMatrix {
        &mut self.entries
    }

    /// `||z - e_k||^2` for every entry.
    pub fn sq_distances(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("latent vector", self.dz(), z.len())?;
        Ok(self.entries.iter_rows().map(|e| sq_dist(z, e)).collect())
    }

    /// Index of the nearest entry, lowest index on ties.
    pub fn nearest(&self, z: &[f64]) -> Result<usize> {
        let d = self.sq_distances(z)?;
        Ok(argmin(&d))
    }

    /// Largest pairwise Euclidean distance between entries.
    pub fn diameter(&self) -> f64 {
        let k = self.k();
        let mut best = 0.0_f64;
        for i in 0..k {
            for j in i + 1..k {
                best = best.max(sq_dist(self.entry(i), self.entry(j)));
            }
        }
        best.sqrt()
    }
}

pub(crate) fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// `log softmax(logits)`, finite even where the probability underflows.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// A distribution over the `K` codebook indices.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexDistribution {
    probs: Vec<f64>,
}

impl IndexDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate_probs(&probs)?;
        Ok(IndexDistribution { probs })
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Parameter("weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Parameter("weights sum to zero".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(IndexDistribution { probs: weights })
    }

    pub fn uniform(k: usize) -> Self {
        IndexDistribution {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn one_hot(k: usize, j: usize) -> Self {
        let mut probs = vec![0.0; k];
        probs[j] = 1.0;
        IndexDistribution { probs }
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    /// Most likely index, lowest on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    /// Shannon entropy in nats with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // Rounding left a sliver above the cumulative sum; take the last
        // index with mass.
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

pub(crate) fn validate_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Parameter("empty distribution".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
        return Err(Error::Parameter(format!("invalid probability {p}")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE * probs.len().max(1) as f64 {
        return Err(Error::Parameter(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Row-stochastic `n x K` matrix of per-sample index posteriors.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalPosterior {
    rows: DenseMatrix,
}

impl CategoricalPosterior {
    pub fn new(rows: DenseMatrix) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(Error::Parameter("posterior has no rows".into()));
        }
        for row in rows.iter_rows() {
            validate_probs(row)?;
        }
        Ok(CategoricalPosterior { rows })
    }

    pub fn from_distributions(dists: &[IndexDistribution]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = dists.iter().map(|d| d.probs.clone()).collect();
        Self::new(DenseMatrix::from_rows(&rows)?)
    }

    pub fn n(&self) -> usize {
        self.rows.rows()
    }

    pub fn k(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter_rows()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.rows
    }
}

/// One-hot at the nearest codebook entry (lowest index on ties).
pub fn deterministic_posterior(z: &[f64], cb: &Codebook) -> Result<IndexDistribution> {
    let j = cb.nearest(z)?;
    Ok(IndexDistribution::one_hot(cb.k(), j))
}

/// Softmax of `-beta ||z - e_k||^2` over the codebook.
pub fn stochastic_posterior(z: &[f64], cb: &Codebook, beta: f64) -> Result<IndexDistribution> {
    if !(beta >= 0.0) {
        return Err(Error::Parameter(format!("beta must be >= 0, got {beta}")));
    }
    let d = cb.sq_distances(z)?;
    let logits: Vec<f64> = d.iter().map(|&dk| -beta * dk).collect();
    Ok(IndexDistribution {
        probs: softmax(&logits),
    })
}

/// Standard Gumbel draws via the inverse CDF.
pub fn gumbel_noise<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    (0..k)
        .map(|_| {
            let u: f64 = rng.random();
            let u = u.clamp(GUMBEL_U_CLAMP, 1.0 - GUMBEL_U_CLAMP);
            -(-u.ln()).ln()
        })
        .collect()
}

/// `softmax((logits + noise) / tau)` for externally supplied noise.
pub fn gumbel_softmax_with_noise(logits: &[f64], noise: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("tau must be > 0, got {tau}")));
    }
    check_len("gumbel noise", logits.len(), noise.len())?;
    let scaled: Vec<f64> = logits
        .iter()
        .zip(noise)
        .map(|(l, g)| (l + g) / tau)
        .collect();
    Ok(softmax(&scaled))
}

/// Relaxed one-hot sample from the categorical with the given logits.
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(
    logits: &[f64],
    tau: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("tau must be > 0, got {tau}")));
    }
    let noise = gumbel_noise(logits.len(), rng);
    gumbel_softmax_with_noise(logits, &noise, tau)
}

/// Weight of the commitment term in straight-through training.
pub const COMMITMENT_WEIGHT: f64 = 0.25;

/// Forward result of straight-through quantization.
///
/// The backward contract is the identity: the gradient arriving at the code
/// is passed to the pre-quantization latent unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct StraightThrough {
    pub index: usize,
    pub code: Vec<f64>,
    latent: Vec<f64>,
}

impl StraightThrough {
    pub fn backward(&self, upstream: &[f64]) -> Vec<f64> {
        upstream.to_vec()
    }

    /// `||stop(z) - e||^2`
    pub fn codebook_loss(&self) -> f64 {
        sq_dist(&self.latent, &self.code)
    }

    /// `0.25 ||z - stop(e)||^2`
    pub fn commitment_loss(&self) -> f64 {
        COMMITMENT_WEIGHT * sq_dist(&self.latent, &self.code)
    }

    /// Gradient of the codebook loss with respect to the selected entry.
    pub fn codebook_loss_grad(&self) -> Vec<f64> {
        self.code
            .iter()
            .zip(&self.latent)
            .map(|(e, z)| 2.0 * (e - z))
            .collect()
    }

    /// Gradient of the commitment loss with respect to the latent.
    pub fn commitment_loss_grad(&self) -> Vec<f64> {
        self.latent
            .iter()
            .zip(&self.code)
            .map(|(z, e)| 2.0 * COMMITMENT_WEIGHT * (z - e))
            .collect()
    }
}

pub fn quantize_straight_through(z: &[f64], cb: &Codebook) -> Result<StraightThrough> {
    let index = cb.nearest(z)?;
    Ok(StraightThrough {
        index,
        code: cb.entry(index).to_vec(),
        latent: z.to_vec(),
    })
}
