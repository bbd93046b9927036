//! Supersample and permutation resampling, train/test splitting, gap
//! measurement and the exhaustive permutation-prior oracle.

use std::fmt::Write as _;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::model::{reconstruction_losses, ModelParams, PosteriorMode};
use crate::quantizer::IndexDistribution;

/// `n` rows of paired points; column `U_m` of row `m` is used for training.
#[derive(Clone, Debug, PartialEq)]
pub struct Supersample {
    pairs: Vec<[Vec<f64>; 2]>,
}

impl Supersample {
    pub fn from_pairs(pairs: Vec<[Vec<f64>; 2]>) -> Result<Self> {
        if let Some(first) = pairs.first() {
            let dim = first[0].len();
            for (m, [a, b]) in pairs.iter().enumerate() {
                if a.len() != dim || b.len() != dim {
                    return Err(Error::Parameter(format!("row {m} has inconsistent dimension")));
                }
            }
        }
        Ok(Supersample { pairs })
    }

    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair(&self, m: usize) -> &[Vec<f64>; 2] {
        &self.pairs[m]
    }

    pub fn pairs(&self) -> &[[Vec<f64>; 2]] {
        &self.pairs
    }

    pub fn column(&self, c: usize) -> Vec<Vec<f64>> {
        self.pairs.iter().map(|p| p[c].clone()).collect()
    }

    /// All `2n` points, row by row.
    pub fn all_points(&self) -> Vec<Vec<f64>> {
        self.pairs.iter().flat_map(|p| p.iter().cloned()).collect()
    }
}

/// The membership vector `U` in `{0, 1}^n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct UIndex {
    bits: Vec<bool>,
}

impl UIndex {
    pub fn new(bits: Vec<bool>) -> Self {
        UIndex { bits }
    }

    pub fn zeros(n: usize) -> Self {
        UIndex {
            bits: vec![false; n],
        }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        UIndex {
            bits: (0..n).map(|_| rng.random::<bool>()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bit(&self, m: usize) -> usize {
        usize::from(self.bits[m])
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn flipped(&self) -> Self {
        UIndex {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }
}

/// Randomly pair `2n` points into `n` rows.
pub fn make_supersample<R: Rng + ?Sized>(points: &[Vec<f64>], rng: &mut R) -> Result<Supersample> {
    if points.len() % 2 != 0 {
        return Err(Error::Parameter(format!(
            "supersample needs an even number of points, got {}",
            points.len()
        )));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(rng);
    let pairs = order
        .chunks_exact(2)
        .map(|c| [points[c[0]].clone(), points[c[1]].clone()])
        .collect();
    Supersample::from_pairs(pairs)
}

/// `(train, test)` with `train_m = X[m][U_m]` and `test_m = X[m][1 - U_m]`.
pub fn split_by_u(ss: &Supersample, u: &UIndex) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_len("membership vector", ss.n(), u.len())?;
    let mut train = Vec::with_capacity(ss.n());
    let mut test = Vec::with_capacity(ss.n());
    for (m, pair) in ss.pairs.iter().enumerate() {
        let b = u.bit(m);
        train.push(pair[b].clone());
        test.push(pair[1 - b].clone());
    }
    Ok((train, test))
}

/// A permutation of `[2n]`; the first `n` positions are the test half and
/// the last `n` the training half.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationSplit {
    perm: Vec<usize>,
}

impl PermutationSplit {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        if perm.len() % 2 != 0 {
            return Err(Error::Parameter("permutation length must be even".into()));
        }
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Parameter("not a permutation".into()));
            }
        }
        Ok(PermutationSplit { perm })
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn n(&self) -> usize {
        self.perm.len() / 2
    }

    pub fn test_half(&self) -> &[usize] {
        &self.perm[..self.n()]
    }

    pub fn train_half(&self) -> &[usize] {
        &self.perm[self.n()..]
    }

    pub fn split(&self, points: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        check_len("point set", self.perm.len(), points.len())?;
        let pick = |idx: &[usize]| idx.iter().map(|&i| points[i].clone()).collect();
        Ok((pick(self.train_half()), pick(self.test_half())))
    }
}

pub fn sample_permutation<R: Rng + ?Sized>(two_n: usize, rng: &mut R) -> Result<PermutationSplit> {
    if two_n % 2 != 0 {
        return Err(Error::Parameter(format!("two_n must be even, got {two_n}")));
    }
    let mut perm: Vec<usize> = (0..two_n).collect();
    perm.shuffle(rng);
    Ok(PermutationSplit { perm })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapEstimate {
    pub train_loss: f64,
    pub test_loss: f64,
}

impl GapEstimate {
    /// Mean test loss minus mean training loss.
    pub fn signed(&self) -> f64 {
        self.test_loss - self.train_loss
    }

    pub fn absolute(&self) -> f64 {
        self.signed().abs()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Train/test mean of `l_0` on the two halves selected by `u`.
pub fn estimate_gap(
    params: &ModelParams,
    ss: &Supersample,
    u: &UIndex,
    mode: PosteriorMode,
) -> Result<GapEstimate> {
    let (train, test) = split_by_u(ss, u)?;
    estimate_gap_on(params, &train, &test, mode)
}

pub fn estimate_gap_on(
    params: &ModelParams,
    train: &[Vec<f64>],
    test: &[Vec<f64>],
    mode: PosteriorMode,
) -> Result<GapEstimate> {
    Ok(GapEstimate {
        train_loss: mean(&reconstruction_losses(params, train, mode)?),
        test_loss: mean(&reconstruction_losses(params, test, mode)?),
    })
}

pub const BRUTEFORCE_MAX_POINTS: usize = 8;

/// Per-slot marginals of `J` under the permutation-averaged product prior,
/// by enumerating all `(2n)!` orderings, together with the largest total
/// variation between any two slots.
pub fn permutation_prior_bruteforce(
    points: &[Vec<f64>],
    params: &ModelParams,
    mode: PosteriorMode,
) -> Result<(Vec<IndexDistribution>, f64)> {
    if points.len() > BRUTEFORCE_MAX_POINTS {
        return Err(Error::Size(format!(
            "enumeration limited to {BRUTEFORCE_MAX_POINTS} points, got {}",
            points.len()
        )));
    }
    if points.is_empty() || points.len() % 2 != 0 {
        return Err(Error::Parameter("need a nonempty even number of points".into()));
    }
    let posts = points
        .iter()
        .map(|x| params.posterior(x, mode))
        .collect::<Result<Vec<_>>>()?;
    permutation_marginals(&posts)
}

/// Enumeration core over precomputed per-point posteriors.
pub fn permutation_marginals(posts: &[IndexDistribution]) -> Result<(Vec<IndexDistribution>, f64)> {
    let slots = posts.len();
    if slots > BRUTEFORCE_MAX_POINTS {
        return Err(Error::Size(format!(
            "enumeration limited to {BRUTEFORCE_MAX_POINTS} points, got {slots}"
        )));
    }
    let k = posts.first().map_or(0, |p| p.k());
    let mut acc = vec![vec![0.0; k]; slots];
    let mut count = 0usize;
    for perm in (0..slots).permutations(slots) {
        for (slot, &src) in perm.iter().enumerate() {
            for (a, q) in acc[slot].iter_mut().zip(posts[src].probs()) {
                *a += q;
            }
        }
        count += 1;
    }
    let marginals = acc
        .into_iter()
        .map(|row| IndexDistribution::from_weights(row.into_iter().map(|v| v / count as f64).collect()))
        .collect::<Result<Vec<_>>>()?;
    let mut max_tv: f64 = 0.0;
    for (a, b) in marginals.iter().tuple_combinations() {
        let tv = 0.5
            * a.probs()
                .iter()
                .zip(b.probs())
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>();
        max_tv = max_tv.max(tv);
    }
    Ok((marginals, max_tv))
}

/// One row of a gap sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct GapRecord {
    pub n: usize,
    pub k: usize,
    pub dz: usize,
    /// Decoder depth in affine layers.
    pub depth: usize,
    pub seed: u64,
    pub u_draw: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

impl GapRecord {
    pub fn gap(&self) -> f64 {
        (self.test_loss - self.train_loss).abs()
    }

    pub fn signed_gap(&self) -> f64 {
        self.test_loss - self.train_loss
    }
}

pub fn gap_csv(records: &[GapRecord]) -> String {
    let mut out = String::from("n,K,dz,depth,seed,u_draw,train_loss,test_loss,gap,signed_gap\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.12e},{:.12e},{:.12e},{:.12e}",
            r.n,
            r.k,
            r.dz,
            r.depth,
            r.seed,
            r.u_draw,
            r.train_loss,
            r.test_loss,
            r.gap(),
            r.signed_gap()
        );
    }
    out
}
