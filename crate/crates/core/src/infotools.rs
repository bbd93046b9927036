//! KL divergences, the empirical KL term and its optimal prior, and
//! mutual-information estimators (plug-in and k-nearest-neighbour) used to
//! estimate the conditional mutual information between selected codebook
//! indices and the supersample membership vector.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::gamma::digamma;

use crate::error::{check_len, Error, Result};
use crate::model::{reconstruction_loss_l0, ModelParams, PosteriorMode, PriorVector, PRIOR_FLOOR};
use crate::quantizer::{CategoricalPosterior, IndexDistribution};
use crate::resampling::{split_by_u, Supersample, UIndex};
use crate::trainer::{train, Architecture, TrainConfig};

/// `sum_k p_k log(p_k / q_k)` in nats. Returns `+inf` when `p` puts mass
/// where `q` is below the prior floor.
pub fn categorical_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len("KL arguments", p.len(), q.len())?;
    let mut kl = 0.0;
    for (&pk, &qk) in p.iter().zip(q) {
        if pk > 0.0 {
            if qk < PRIOR_FLOOR {
                return Ok(f64::INFINITY);
            }
            kl += pk * (pk / qk).ln();
        }
    }
    Ok(kl.max(0.0))
}

pub fn categorical_kl_dist(p: &IndexDistribution, q: &IndexDistribution) -> Result<f64> {
    categorical_kl(p.probs(), q.probs())
}

/// `(1/n) sum_m KL(q(J | S_m) || pi)`; infinite if any row is.
pub fn empirical_kl_term(post: &CategoricalPosterior, prior: &PriorVector) -> Result<f64> {
    check_len("prior", post.k(), prior.k())?;
    let mut total = 0.0;
    for row in post.iter_rows() {
        total += categorical_kl(row, prior.probs())?;
    }
    Ok(total / post.n() as f64)
}

/// Column mean of the posterior rows: the prior minimizing
/// [`empirical_kl_term`] over the simplex.
pub fn marginal_prior(post: &CategoricalPosterior) -> Result<PriorVector> {
    if post.n() == 0 {
        return Err(Error::Parameter("empty posterior matrix".into()));
    }
    let mut mean = vec![0.0; post.k()];
    for row in post.iter_rows() {
        for (m, q) in mean.iter_mut().zip(row) {
            *m += q;
        }
    }
    let total: f64 = mean.iter().sum();
    mean.iter_mut().for_each(|m| *m /= total);
    PriorVector::new(mean)
}

/// Paired features and discrete labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MiSampleSet<F> {
    features: Vec<F>,
    labels: Vec<usize>,
}

impl<F> MiSampleSet<F> {
    pub fn new(features: Vec<F>, labels: Vec<usize>) -> Result<Self> {
        check_len("labels", features.len(), labels.len())?;
        if features.is_empty() {
            return Err(Error::Parameter("empty sample set".into()));
        }
        Ok(MiSampleSet { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[F] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

impl MiSampleSet<Vec<f64>> {
    pub fn continuous(features: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if let Some(first) = features.first() {
            let d = first.len();
            if d == 0 {
                return Err(Error::Parameter("features must have dimension >= 1".into()));
            }
            for (i, f) in features.iter().enumerate() {
                if f.len() != d {
                    return Err(Error::Parameter(format!("feature {i} has inconsistent dimension")));
                }
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Parameter(format!("feature {i} is not finite")));
                }
            }
        }
        Self::new(features, labels)
    }
}

/// Frequency plug-in estimate of `I(F; L)` in nats.
pub fn plugin_discrete_mi(samples: &MiSampleSet<usize>) -> f64 {
    let n = samples.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut pf: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pl: BTreeMap<usize, f64> = BTreeMap::new();
    for (&f, &l) in samples.features.iter().zip(&samples.labels) {
        *joint.entry((f, l)).or_default() += 1.0;
        *pf.entry(f).or_default() += 1.0;
        *pl.entry(l).or_default() += 1.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(f, l), &c)| c / n * (c * n / (pf[&f] * pl[&l])).ln())
        .sum();
    mi.max(0.0)
}

fn max_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Points sorted along the first coordinate for window-pruned neighbour
/// queries under the max norm.
struct SortedPoints<'a> {
    points: Vec<&'a [f64]>,
    keys: Vec<f64>,
}

impl<'a> SortedPoints<'a> {
    fn new(mut points: Vec<&'a [f64]>) -> Self {
        points.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let keys = points.iter().map(|p| p[0]).collect();
        SortedPoints { points, keys }
    }

    /// Distance from `x` (a member) to its `k`-th nearest other member.
    fn kth_distance(&self, x: &[f64], k: usize) -> f64 {
        let n = self.points.len();
        let start = self.keys.partition_point(|&v| v < x[0]);
        // The k best distances so far, ascending.
        let mut best: Vec<f64> = Vec::with_capacity(k + 1);
        let mut skipped_self = false;
        let push = |d: f64, best: &mut Vec<f64>| {
            if best.len() < k || d < best[k - 1] {
                let pos = best.partition_point(|&b| b <= d);
                best.insert(pos, d);
                best.truncate(k);
            }
        };
        let (mut lo, mut hi) = (start as isize - 1, start);
        loop {
            let bound = if best.len() == k { best[k - 1] } else { f64::INFINITY };
            let left = (lo >= 0).then(|| x[0] - self.keys[lo as usize]);
            let right = (hi < n).then(|| self.keys[hi] - x[0]);
            let take_right = match (left, right) {
                (None, None) => break,
                (Some(l), Some(r)) => r <= l,
                (None, Some(_)) => true,
                (Some(_), None) => false,
            };
            let idx = if take_right { hi } else { lo as usize };
            let gap = if take_right { right.unwrap() } else { left.unwrap() };
            if gap > bound {
                break;
            }
            let p = self.points[idx];
            if !skipped_self && std::ptr::eq(p.as_ptr(), x.as_ptr()) {
                skipped_self = true;
            } else {
                push(max_norm(x, p), &mut best);
            }
            if take_right {
                hi += 1;
            } else {
                lo -= 1;
            }
        }
        best.last().copied().unwrap_or(f64::INFINITY)
    }

    /// Number of members within max-norm distance `r` of `x`, inclusive,
    /// counting `x` itself when it is a member.
    fn count_within(&self, x: &[f64], r: f64) -> usize {
        let lo = self.keys.partition_point(|&v| v < x[0] - r);
        let hi = self.keys.partition_point(|&v| v <= x[0] + r);
        self.points[lo..hi]
            .iter()
            .filter(|p| max_norm(x, p) <= r)
            .count()
    }
}

fn has_duplicates(features: &[Vec<f64>]) -> bool {
    let mut sorted: Vec<&Vec<f64>> = features.iter().collect();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    sorted.windows(2).any(|w| w[0] == w[1])
}

const JITTER_SEED: u64 = 0x6a09_e667_f3bc_c908;

/// Mixed continuous-feature / discrete-label k-NN estimate of `I(F; L)` in
/// nats, clamped below at 0. Labels seen only once are dropped; each class
/// uses `min(k, count - 1)` neighbours. Exactly duplicated features receive
/// a deterministic `1e-10`-scale jitter.
pub fn knn_mi(samples: &MiSampleSet<Vec<f64>>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Parameter("k must be >= 1".into()));
    }
    let mut features = samples.features.clone();
    if has_duplicates(&features) {
        log::warn!("duplicated features in k-NN MI input; applying 1e-10 jitter");
        let dim = features[0].len();
        let scales: Vec<f64> = (0..dim)
            .map(|j| {
                let mean_abs =
                    features.iter().map(|f| f[j].abs()).sum::<f64>() / features.len() as f64;
                mean_abs.max(1.0)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(JITTER_SEED);
        for f in &mut features {
            for (v, s) in f.iter_mut().zip(&scales) {
                let z: f64 = rng.sample(StandardNormal);
                *v += 1e-10 * s * z;
            }
        }
    }

    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in samples.labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let kept: Vec<usize> = {
        let mut v: Vec<usize> = by_label
            .values()
            .filter(|idx| idx.len() > 1)
            .flatten()
            .copied()
            .collect();
        v.sort_unstable();
        v
    };
    if kept.is_empty() {
        return Ok(0.0);
    }
    let all = SortedPoints::new(kept.iter().map(|&i| features[i].as_slice()).collect());

    let mut sum_k = 0.0;
    let mut sum_label = 0.0;
    let mut sum_m = 0.0;
    for idx in by_label.values().filter(|idx| idx.len() > 1) {
        let class = SortedPoints::new(idx.iter().map(|&i| features[i].as_slice()).collect());
        let kk = k.min(idx.len() - 1);
        for &i in idx {
            let x = features[i].as_slice();
            let radius = class.kth_distance(x, kk);
            let radius = next_down(radius);
            let m = all.count_within(x, radius).max(1);
            sum_k += digamma(kk as f64);
            sum_label += digamma(idx.len() as f64);
            sum_m += digamma(m as f64);
        }
    }
    let n = kept.len() as f64;
    let mi = digamma(n) + (sum_k - sum_label - sum_m) / n;
    Ok(mi.max(0.0))
}

fn next_down(x: f64) -> f64 {
    if x > 0.0 && x.is_finite() {
        f64::from_bits(x.to_bits() - 1)
    } else {
        x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    /// One estimate per trained model, averaged over U draws.
    PerSeed,
    /// All U draws pooled into a single sample set.
    Pooled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmiFeature {
    /// Pair of sampled code indices for the two columns of a row
    /// (plug-in estimator).
    Index,
    /// Pair of per-point reconstruction losses for the two columns of a row
    /// (k-NN estimator).
    Loss,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmiProtocolConfig {
    pub num_u_draws: usize,
    pub knn_k: usize,
    pub pooling: Pooling,
    pub feature: CmiFeature,
    /// Index samples drawn per row and U draw on the discrete path.
    pub samples_per_row: usize,
    pub mode: PosteriorMode,
    pub seed: u64,
}

impl Default for CmiProtocolConfig {
    fn default() -> Self {
        CmiProtocolConfig {
            num_u_draws: 5,
            knn_k: 3,
            pooling: Pooling::Pooled,
            feature: CmiFeature::Index,
            samples_per_row: 1,
            mode: PosteriorMode::Stochastic,
            seed: 0,
        }
    }
}

impl CmiProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_u_draws < 2 {
            return Err(Error::Parameter(format!(
                "num_u_draws must be >= 2, got {}",
                self.num_u_draws
            )));
        }
        if self.knn_k == 0 {
            return Err(Error::Parameter("knn_k must be >= 1".into()));
        }
        if self.samples_per_row == 0 {
            return Err(Error::Parameter("samples_per_row must be >= 1".into()));
        }
        Ok(())
    }
}

/// A trained model as seen by the CMI protocol.
pub trait IndexModel {
    fn num_codes(&self) -> usize;
    fn index_posterior(&self, x: &[f64]) -> Result<IndexDistribution>;
    fn point_loss(&self, x: &[f64]) -> Result<f64>;
}

/// A randomized training algorithm mapping a training set to a model.
pub trait Learner: Sync {
    type Model: IndexModel + Send;
    fn fit(&self, train: &[Vec<f64>], seed: u64) -> Result<Self::Model>;
}

/// A trained [`ModelParams`] evaluated in a fixed posterior mode.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub mode: PosteriorMode,
}

impl IndexModel for TrainedModel {
    fn num_codes(&self) -> usize {
        self.params.k()
    }

    fn index_posterior(&self, x: &[f64]) -> Result<IndexDistribution> {
        self.params.posterior(x, self.mode)
    }

    fn point_loss(&self, x: &[f64]) -> Result<f64> {
        reconstruction_loss_l0(&self.params, x, self.mode)
    }
}

/// The trainer as a learner; the seed in `config` is replaced per fit.
#[derive(Clone, Debug)]
pub struct TrainerLearner {
    pub config: TrainConfig,
    pub arch: Architecture,
    pub mode: PosteriorMode,
}

impl Learner for TrainerLearner {
    type Model = TrainedModel;

    fn fit(&self, data: &[Vec<f64>], seed: u64) -> Result<TrainedModel> {
        let config = TrainConfig {
            seed,
            ..self.config.clone()
        };
        let out = train(&config, data, None, &self.arch)?;
        Ok(TrainedModel {
            params: out.params,
            mode: self.mode,
        })
    }
}

/// One row of one U draw.
#[derive(Clone, Debug, PartialEq)]
pub struct CmiRecord {
    pub u_draw: usize,
    pub row: usize,
    /// Sampled codes for columns 0 and 1.
    pub j_pair: (usize, usize),
    pub u_bit: usize,
    pub test_loss: f64,
    pub train_loss: f64,
    /// Loss at column 0 and column 1.
    pub column_losses: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct CmiEstimate {
    /// Estimated `I(J~_m; U_m | e, phi, X~)` per row, in nats.
    pub per_row: f64,
    /// Per-draw estimates (PerSeed pooling only).
    pub per_draw: Vec<f64>,
    pub records: Vec<CmiRecord>,
    /// Extra index samples drawn beyond the recorded one, per record.
    pub extra_index_samples: Vec<Vec<(usize, usize)>>,
}

fn draw_records<M: IndexModel>(
    model: &M,
    ss: &Supersample,
    u: &UIndex,
    u_draw: usize,
    samples_per_row: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<CmiRecord>, Vec<Vec<(usize, usize)>>)> {
    let mut records = Vec::with_capacity(ss.n());
    let mut extra = Vec::with_capacity(ss.n());
    for (m, pair) in ss.pairs().iter().enumerate() {
        let q0 = model.index_posterior(&pair[0])?;
        let q1 = model.index_posterior(&pair[1])?;
        let l0 = model.point_loss(&pair[0])?;
        let l1 = model.point_loss(&pair[1])?;
        let b = u.bit(m);
        let (train_loss, test_loss) = if b == 0 { (l0, l1) } else { (l1, l0) };
        let mut draws: Vec<(usize, usize)> = (0..samples_per_row)
            .map(|_| (q0.sample(rng), q1.sample(rng)))
            .collect();
        let j_pair = draws.remove(0);
        records.push(CmiRecord {
            u_draw,
            row: m,
            j_pair,
            u_bit: b,
            test_loss,
            train_loss,
            column_losses: (l0, l1),
        });
        extra.push(draws);
    }
    Ok((records, extra))
}

fn estimate_from_records(
    records: &[&CmiRecord],
    extra: &[&Vec<(usize, usize)>],
    k: usize,
    protocol: &CmiProtocolConfig,
) -> Result<f64> {
    match protocol.feature {
        CmiFeature::Index => {
            let mut features = Vec::new();
            let mut labels = Vec::new();
            for (r, more) in records.iter().zip(extra) {
                for &(a, b) in std::iter::once(&r.j_pair).chain(more.iter()) {
                    features.push(a * k + b);
                    labels.push(r.u_bit);
                }
            }
            Ok(plugin_discrete_mi(&MiSampleSet::new(features, labels)?))
        }
        CmiFeature::Loss => {
            let features = records
                .iter()
                .map(|r| vec![r.column_losses.0, r.column_losses.1])
                .collect();
            let labels = records.iter().map(|r| r.u_bit).collect();
            knn_mi(&MiSampleSet::continuous(features, labels)?, protocol.knn_k)
        }
    }
}

/// Estimate the per-row index/membership CMI term: draw `U`, train on
/// `X~_U`, record the codes selected for both columns of every row, then
/// estimate mutual information between the code pair and `U_m`.
pub fn estimate_cmi_term<L: Learner>(
    learner: &L,
    ss: &Supersample,
    protocol: &CmiProtocolConfig,
) -> Result<CmiEstimate> {
    Ok(estimate_cmi_term_with_models(learner, ss, protocol)?.0)
}

/// [`estimate_cmi_term`] that also hands back each draw's `U` and model.
pub fn estimate_cmi_term_with_models<L: Learner>(
    learner: &L,
    ss: &Supersample,
    protocol: &CmiProtocolConfig,
) -> Result<(CmiEstimate, Vec<(UIndex, L::Model)>)> {
    protocol.validate()?;
    if ss.n() == 0 {
        return Err(Error::Parameter("empty supersample".into()));
    }
    type Draw<M> = (Vec<CmiRecord>, Vec<Vec<(usize, usize)>>, usize, UIndex, M);
    let draws: Vec<Draw<L::Model>> = (0..protocol.num_u_draws)
        .into_par_iter()
        .map(|d| -> Result<_> {
            let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
            rng.set_stream(d as u64 + 1);
            let u = UIndex::random(ss.n(), &mut rng);
            let (train_set, _) = split_by_u(ss, &u)?;
            let fit_seed: u64 = rng.random();
            let model = learner.fit(&train_set, fit_seed)?;
            let (records, extra) =
                draw_records(&model, ss, &u, d, protocol.samples_per_row, &mut rng)?;
            Ok((records, extra, model.num_codes(), u, model))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = draws.first().map_or(1, |d| d.2);

    let (per_row, per_draw) = match protocol.pooling {
        Pooling::Pooled => {
            let recs: Vec<&CmiRecord> = draws.iter().flat_map(|d| d.0.iter()).collect();
            let extra: Vec<&Vec<(usize, usize)>> = draws.iter().flat_map(|d| d.1.iter()).collect();
            (estimate_from_records(&recs, &extra, k, protocol)?, Vec::new())
        }
        Pooling::PerSeed => {
            let per: Vec<f64> = draws
                .iter()
                .map(|d| {
                    let recs: Vec<&CmiRecord> = d.0.iter().collect();
                    let extra: Vec<&Vec<(usize, usize)>> = d.1.iter().collect();
                    estimate_from_records(&recs, &extra, k, protocol)
                })
                .collect::<Result<_>>()?;
            (per.iter().sum::<f64>() / per.len() as f64, per)
        }
    };
    let mut records = Vec::new();
    let mut extra_index_samples = Vec::new();
    let mut models = Vec::new();
    for (r, e, _, u, model) in draws {
        records.extend(r);
        extra_index_samples.extend(e);
        models.push((u, model));
    }
    let estimate = CmiEstimate {
        per_row,
        per_draw,
        records,
        extra_index_samples,
    };
    Ok((estimate, models))
}

/// CSV rows for a CMI experiment. `j_index` encodes the column pair as
/// `j0 * K + j1`.
pub fn cmi_csv(n: usize, k: usize, seed: u64, records: &[CmiRecord]) -> String {
    let mut out =
        String::from("n,K,seed,u_draw,row,j_index,u_bit,test_loss_row,train_loss_row\n");
    for r in records {
        let _ = writeln!(
            out,
            "{n},{k},{seed},{},{},{},{},{:.12e},{:.12e}",
            r.u_draw,
            r.row,
            r.j_pair.0 * k + r.j_pair.1,
            r.u_bit,
            r.test_loss,
            r.train_loss
        );
    }
    out
}
