//! Experiment drivers behind the command-line front-end: gap/CMI sweeps,
//! bound reports, the generation check, the prior comparison and the
//! brute-force oracle suite. Every run is a deterministic function of the
//! config and its master seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bounds::{parametric_log_covering, BoundInputs, BoundReport};
use crate::config::{DatasetSpec, ExperimentConfig};
use crate::datasets::{lattice_means, load_dataset_csv, load_idx, synth_mixture};
use crate::diffcore::sq_dist;
use crate::infotools::{
    empirical_kl_term, estimate_cmi_term_with_models, marginal_prior, CmiEstimate,
    TrainerLearner,
};
use crate::model::{mean_reconstruction_loss, PosteriorMode, PriorVector};
use crate::quantizer::CategoricalPosterior;
use crate::resampling::{
    gap_csv, make_supersample, permutation_prior_bruteforce, split_by_u, GapRecord,
};
use crate::trainer::{train, Architecture, TrainConfig, TrainHistory};
use crate::transport::{
    generation_csv, hungarian, validate_generation_bound, w2_squared, EmpiricalMeasure,
    GenerationRecord,
};
use crate::{Error, Result};

/// Mixes `tags` into `master` with splitmix64 steps.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(master), |acc, &t| mix(acc ^ mix(t)))
}

/// Where i.i.d. data points come from.
#[derive(Clone, Debug)]
pub enum DataSource {
    Mixture {
        dim: usize,
        components: usize,
        spread: f64,
    },
    /// Uniform draws with replacement from a fixed point set.
    Finite(Vec<Vec<f64>>),
}

impl DataSource {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(match &cfg.dataset {
            DatasetSpec::Mixture {
                dim,
                components,
                spread,
            } => DataSource::Mixture {
                dim: *dim,
                components: *components,
                spread: *spread,
            },
            DatasetSpec::Csv(p) => DataSource::Finite(load_dataset_csv(p)?.into_points()),
            DatasetSpec::Idx(p) => DataSource::Finite(load_idx(p)?.into_points()),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            DataSource::Mixture { dim, .. } => *dim,
            DataSource::Finite(points) => points.first().map_or(0, Vec::len),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        match self {
            DataSource::Mixture {
                dim,
                components,
                spread,
            } => Ok(synth_mixture(*dim, *components, n, *spread, rng)?.into_points()),
            DataSource::Finite(points) => {
                if points.is_empty() {
                    return Err(Error::Parameter("dataset is empty".into()));
                }
                Ok((0..n)
                    .map(|_| points[rng.random_range(0..points.len())].clone())
                    .collect())
            }
        }
    }

    /// Mixture component means, if any.
    pub fn means(&self) -> Option<Vec<Vec<f64>>> {
        match self {
            DataSource::Mixture {
                dim, components, ..
            } => Some(lattice_means(*dim, *components)),
            DataSource::Finite(_) => None,
        }
    }
}

pub fn architecture(cfg: &ExperimentConfig, data_dim: usize, k: usize, depth: usize) -> Result<Architecture> {
    Architecture::mlp(data_dim, cfg.latent_dim, cfg.hidden, cfg.enc_layers, depth, k)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let order: Vec<usize> = (0..xs.len())
        .sorted_by(|&a, &b| xs[a].total_cmp(&xs[b]))
        .collect();
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

/// Pearson correlation; `NaN` when either side is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&ranks(xs), &ranks(ys))
}

/// Least-squares slope of `ys` on `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / vx
}

fn fmt_num(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.12e}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub n: usize,
    pub k: usize,
    pub depth: usize,
    pub seed_index: usize,
}

/// Everything measured in one sweep cell.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub key: CellKey,
    pub seed: u64,
    pub gaps: Vec<GapRecord>,
    pub cmi: CmiEstimate,
    /// Per-sample KL of training posteriors to the marginal prior estimated
    /// on fresh data, averaged over U draws.
    pub kl_empirical: f64,
    pub report: BoundReport,
}

impl CellResult {
    pub fn gap_mean(&self) -> f64 {
        mean(&self.gaps.iter().map(GapRecord::gap).collect::<Vec<_>>())
    }

    pub fn train_loss_mean(&self) -> f64 {
        mean(&self.gaps.iter().map(|g| g.train_loss).collect::<Vec<_>>())
    }

    pub fn test_loss_mean(&self) -> f64 {
        mean(&self.gaps.iter().map(|g| g.test_loss).collect::<Vec<_>>())
    }
}

fn latent_diameter(params: &crate::model::ModelParams, points: &[Vec<f64>]) -> Result<f64> {
    let mut zs: Vec<Vec<f64>> = points.iter().map(|x| params.encode(x)).collect::<Result<_>>()?;
    zs.extend((0..params.k()).map(|j| params.codebook.entry(j).to_vec()));
    let mut best: f64 = 0.0;
    for (a, b) in zs.iter().tuple_combinations() {
        best = best.max(sq_dist(a, b));
    }
    Ok(best.sqrt())
}

/// Trains one model per U draw on a fresh supersample and measures every
/// bound term.
pub fn run_cell(cfg: &ExperimentConfig, source: &DataSource, key: CellKey) -> Result<CellResult> {
    let seed = derive_seed(
        cfg.seed,
        &[key.n as u64, key.k as u64, key.depth as u64, key.seed_index as u64],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = source.draw(2 * key.n, &mut rng)?;
    let ss = make_supersample(&pool, &mut rng)?;
    let fresh = source.draw(cfg.holdout, &mut rng)?;
    let arch = architecture(cfg, source.dim(), key.k, key.depth)?;
    let learner = TrainerLearner {
        config: cfg.train.clone(),
        arch,
        mode: cfg.protocol.mode,
    };
    let protocol = crate::infotools::CmiProtocolConfig {
        seed: rng.random(),
        ..cfg.protocol.clone()
    };
    let (cmi, models) = estimate_cmi_term_with_models(&learner, &ss, &protocol)?;

    let mode = cfg.protocol.mode;
    let mut gaps = Vec::new();
    let mut kls = Vec::new();
    let mut betas = Vec::new();
    let mut diameters = Vec::new();
    for (d, (u, model)) in models.iter().enumerate() {
        let (train_set, test_set) = split_by_u(&ss, &u)?;
        let params = &model.params;
        gaps.push(GapRecord {
            n: key.n,
            k: key.k,
            dz: cfg.latent_dim,
            depth: key.depth,
            seed,
            u_draw: d,
            train_loss: mean_reconstruction_loss(params, &train_set, mode)?,
            test_loss: mean_reconstruction_loss(params, &test_set, mode)?,
        });
        let reference = marginal_prior(&params.posteriors(&fresh, mode)?)?;
        kls.push(empirical_kl_term(&params.posteriors(&train_set, mode)?, &reference)?);
        betas.push(params.beta_q);
        diameters.push(latent_diameter(params, &ss.all_points())?);
    }
    let kl_empirical = mean(&kls);
    let train_loss_mean = mean(&gaps.iter().map(|g| g.train_loss).collect::<Vec<_>>());
    let gap_mean = mean(&gaps.iter().map(GapRecord::gap).collect::<Vec<_>>());
    let first = &models[0].1.params;
    let log_covering_number = match cfg.log_covering_number {
        Some(v) => v,
        None => parametric_log_covering(
            first.encoder.len(),
            first.latent_dim(),
            1.0,
            cfg.delta_cover,
        )?,
    };
    let inputs = BoundInputs {
        n: key.n,
        delta: source.dim() as f64,
        delta_z: diameters.iter().copied().fold(0.0, f64::max),
        kl_empirical,
        kl_cmi: cmi.per_row,
        train_loss_mean,
        beta_q: mean(&betas),
        delta_cover: cfg.delta_cover,
        log_covering_number,
        d_k: cfg.natarajan_dim,
        k: key.k,
    };
    let report = BoundReport::new(inputs, gap_mean)?;
    Ok(CellResult {
        key,
        seed,
        gaps,
        cmi,
        kl_empirical,
        report,
    })
}

pub fn sweep_cells(cfg: &ExperimentConfig) -> Vec<CellKey> {
    let mut keys = Vec::new();
    for &n in &cfg.n_grid {
        for &k in &cfg.k_grid {
            for &depth in &cfg.dec_layers {
                for seed_index in 0..cfg.num_seeds {
                    keys.push(CellKey {
                        n,
                        k,
                        depth,
                        seed_index,
                    });
                }
            }
        }
    }
    keys
}

#[derive(Clone, Debug, Default)]
pub struct SweepOutput {
    pub cells: Vec<CellResult>,
    pub failures: Vec<(CellKey, String)>,
}

/// Runs every grid cell in parallel; failed cells are recorded and the
/// sweep continues. Output is ordered by cell key.
pub fn run_gap_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let source = DataSource::from_config(cfg)?;
    let results: Vec<(CellKey, Result<CellResult>)> = sweep_cells(cfg)
        .into_par_iter()
        .map(|key| (key, run_cell(cfg, &source, key)))
        .collect();
    let mut out = SweepOutput::default();
    for (key, r) in results {
        match r {
            Ok(cell) => out.cells.push(cell),
            Err(e) => {
                log::warn!("cell {key:?} failed: {e}");
                out.failures.push((key, e.to_string()));
            }
        }
    }
    Ok(out)
}

impl SweepOutput {
    pub fn gap_csv(&self) -> String {
        let records: Vec<GapRecord> = self.cells.iter().flat_map(|c| c.gaps.clone()).collect();
        gap_csv(&records)
    }

    /// Per-row CMI records of every cell under a single header.
    pub fn cmi_csv(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.cells.iter().enumerate() {
            let block = crate::infotools::cmi_csv(c.key.n, c.key.k, c.seed, &c.cmi.records);
            let body = if i == 0 {
                block.as_str()
            } else {
                block.split_once('\n').map_or("", |(_, rest)| rest)
            };
            out.push_str(body);
        }
        if out.is_empty() {
            out = crate::infotools::cmi_csv(0, 0, 0, &[]);
        }
        out
    }

    /// One row per cell with the measured terms.
    pub fn terms_csv(&self) -> String {
        let mut out = String::from(
            "n,K,depth,seed,kl_empirical,cmi,gap_mean,train_loss_mean,test_loss_mean\n",
        );
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.key.n,
                c.key.k,
                c.key.depth,
                c.seed,
                fmt_num(c.kl_empirical),
                fmt_num(c.cmi.per_row),
                fmt_num(c.gap_mean()),
                fmt_num(c.train_loss_mean()),
                fmt_num(c.test_loss_mean())
            );
        }
        out
    }

    /// Mean and sample standard deviation across seeds per grid point.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: BTreeMap<(usize, usize, usize), Vec<&CellResult>> = BTreeMap::new();
        for c in &self.cells {
            groups
                .entry((c.key.n, c.key.k, c.key.depth))
                .or_default()
                .push(c);
        }
        groups
            .into_iter()
            .map(|((n, k, depth), cells)| {
                let col = |f: &dyn Fn(&CellResult) -> f64| -> Vec<f64> {
                    cells.iter().map(|c| f(c)).collect()
                };
                let gap = col(&|c| c.gap_mean());
                let train = col(&|c| c.train_loss_mean());
                let test = col(&|c| c.test_loss_mean());
                let kl = col(&|c| c.kl_empirical);
                let cmi = col(&|c| c.cmi.per_row);
                SummaryRow {
                    n,
                    k,
                    depth,
                    seeds: cells.len(),
                    gap: (mean(&gap), std_dev(&gap)),
                    train_loss: (mean(&train), std_dev(&train)),
                    test_loss: (mean(&test), std_dev(&test)),
                    kl_empirical: (mean(&kl), std_dev(&kl)),
                    cmi: (mean(&cmi), std_dev(&cmi)),
                }
            })
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("n,K,depth,seeds,gap_mean,gap_std,train_loss_mean,train_loss_std,test_loss_mean,test_loss_std,kl_empirical_mean,kl_empirical_std,cmi_mean,cmi_std\n");
        for r in self.summary() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.n,
                r.k,
                r.depth,
                r.seeds,
                fmt_num(r.gap.0),
                fmt_num(r.gap.1),
                fmt_num(r.train_loss.0),
                fmt_num(r.train_loss.1),
                fmt_num(r.test_loss.0),
                fmt_num(r.test_loss.1),
                fmt_num(r.kl_empirical.0),
                fmt_num(r.kl_empirical.1),
                fmt_num(r.cmi.0),
                fmt_num(r.cmi.1)
            );
        }
        out
    }

    pub fn bounds_csv(&self) -> String {
        let mut out = format!("depth,seed,{}\n", BoundReport::CSV_HEADER);
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{}", c.key.depth, c.seed, c.report.csv_row());
        }
        out
    }

    pub fn bounds_text(&self) -> String {
        let mut out = String::new();
        for c in &self.cells {
            let _ = writeln!(
                out,
                "== n = {}, K = {}, depth = {}, seed {} ==",
                c.key.n, c.key.k, c.key.depth, c.seed
            );
            out.push_str(&c.report.to_string());
            if !c.report.gap_within_bounds() {
                out.push_str("VIOLATION: measured gap exceeds a bound\n");
            }
            out.push('\n');
        }
        out
    }

    /// Cells whose measured gap exceeds the supersample or permutation RHS.
    pub fn violations(&self) -> Vec<CellKey> {
        self.cells
            .iter()
            .filter(|c| !c.report.gap_within_bounds())
            .map(|c| c.key)
            .collect()
    }

    pub fn failures_csv(&self) -> String {
        let mut out = String::from("n,K,depth,seed_index,error\n");
        for (k, e) in &self.failures {
            let _ = writeln!(
                out,
                "{},{},{},{},\"{}\"",
                k.n,
                k.k,
                k.depth,
                k.seed_index,
                e.replace('"', "'")
            );
        }
        out
    }
}

/// Aggregates over seeds as `(mean, std)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub n: usize,
    pub k: usize,
    pub depth: usize,
    pub seeds: usize,
    pub gap: (f64, f64),
    pub train_loss: (f64, f64),
    pub test_loss: (f64, f64),
    pub kl_empirical: (f64, f64),
    pub cmi: (f64, f64),
}

/// Result of a single training run.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub history: TrainHistory,
    pub train_loss: f64,
    pub test_loss: f64,
    pub prior: PriorVector,
}

/// Trains once at the first grid point.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let source = DataSource::from_config(cfg)?;
    let (n, k, depth) = (cfg.n_grid[0], cfg.k_grid[0], cfg.dec_layers[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[n as u64, k as u64]));
    let data = source.draw(n, &mut rng)?;
    let holdout = source.draw(cfg.holdout, &mut rng)?;
    let train_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let out = train(&train_cfg, &data, None, &architecture(cfg, source.dim(), k, depth)?)?;
    let mode = cfg.protocol.mode;
    Ok(TrainRun {
        train_loss: mean_reconstruction_loss(&out.params, &data, mode)?,
        test_loss: mean_reconstruction_loss(&out.params, &holdout, mode)?,
        history: out.history,
        prior: out.prior,
    })
}

/// Generation-bound check once per seed at the first grid point. The
/// sampling prior is the marginal of the training posteriors.
pub fn run_genquality(cfg: &ExperimentConfig) -> Result<Vec<GenerationRecord>> {
    cfg.validate()?;
    let source = DataSource::from_config(cfg)?;
    let (n, k, depth) = (cfg.n_grid[0], cfg.k_grid[0], cfg.dec_layers[0]);
    let arch = architecture(cfg, source.dim(), k, depth)?;
    (0..cfg.num_seeds)
        .into_par_iter()
        .map(|s| {
            let seed = derive_seed(cfg.seed, &[0x6e6, n as u64, k as u64, s as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = source.draw(n, &mut rng)?;
            let holdout = source.draw(cfg.holdout, &mut rng)?;
            let train_cfg = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let out = train(&train_cfg, &data, None, &arch)?;
            let post = out.params.posteriors(&data, PosteriorMode::Stochastic)?;
            let prior = marginal_prior(&post)?;
            let check = validate_generation_bound(
                &out.params,
                &prior,
                &data,
                &holdout,
                source.dim() as f64,
                cfg.gen_factor * n,
                &mut rng,
            )?;
            Ok(GenerationRecord { seed, n, k, check })
        })
        .collect()
}

pub fn genquality_csv(records: &[GenerationRecord]) -> String {
    generation_csv(records)
}

/// One arm of the prior comparison for one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct AbRecord {
    pub seed: u64,
    pub arm: &'static str,
    pub lambda_mix: f64,
    pub train_loss: f64,
    pub test_loss: f64,
}

/// Trains the baseline (`lambda_mix = 0`) and the data-dependent-prior arm
/// on the same data and seed, for every seed.
pub fn run_prior_ab(cfg: &ExperimentConfig) -> Result<Vec<AbRecord>> {
    cfg.validate()?;
    if cfg.num_seeds < 2 {
        return Err(Error::Parameter("the prior comparison needs at least 2 seeds".into()));
    }
    let source = DataSource::from_config(cfg)?;
    let (n, k, depth) = (cfg.n_grid[0], cfg.k_grid[0], cfg.dec_layers[0]);
    let arch = architecture(cfg, source.dim(), k, depth)?;
    let arms = [("baseline", 0.0), ("cdvib", cfg.ab_lambda_mix)];
    let per_seed: Vec<Vec<AbRecord>> = (0..cfg.num_seeds)
        .into_par_iter()
        .map(|s| {
            let seed = derive_seed(cfg.seed, &[0xab, n as u64, k as u64, s as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = source.draw(n, &mut rng)?;
            let holdout = source.draw(cfg.holdout, &mut rng)?;
            arms.iter()
                .map(|&(arm, lambda_mix)| {
                    let train_cfg = TrainConfig {
                        seed,
                        lambda_mix,
                        ..cfg.train.clone()
                    };
                    let out = train(&train_cfg, &data, None, &arch)?;
                    let mode = PosteriorMode::Stochastic;
                    Ok(AbRecord {
                        seed,
                        arm,
                        lambda_mix,
                        train_loss: mean_reconstruction_loss(&out.params, &data, mode)?,
                        test_loss: mean_reconstruction_loss(&out.params, &holdout, mode)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

pub fn ab_csv(records: &[AbRecord]) -> String {
    let mut out = String::from("seed,arm,lambda_mix,train_loss,test_loss\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.seed,
            r.arm,
            r.lambda_mix,
            fmt_num(r.train_loss),
            fmt_num(r.test_loss)
        );
    }
    out
}

/// `(arm, lambda_mix, seeds, test mean, test std)` per arm, baseline first.
pub fn ab_summary(records: &[AbRecord]) -> Vec<(&'static str, f64, usize, f64, f64)> {
    ["baseline", "cdvib"]
        .iter()
        .filter_map(|&arm| {
            let rows: Vec<&AbRecord> = records.iter().filter(|r| r.arm == arm).collect();
            let first = rows.first()?;
            let test: Vec<f64> = rows.iter().map(|r| r.test_loss).collect();
            Some((arm, first.lambda_mix, rows.len(), mean(&test), std_dev(&test)))
        })
        .collect()
}

pub fn ab_summary_csv(records: &[AbRecord]) -> String {
    let mut out = String::from("arm,lambda_mix,seeds,test_loss_mean,test_loss_std\n");
    for (arm, lm, seeds, m, s) in ab_summary(records) {
        let _ = writeln!(out, "{arm},{lm},{seeds},{},{}", fmt_num(m), fmt_num(s));
    }
    out
}

/// Outcome of one brute-force oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_posteriors(rows: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<CategoricalPosterior> {
    let dists = (0..rows)
        .map(|_| {
            crate::quantizer::IndexDistribution::from_weights(
                (0..k).map(|_| rng.random::<f64>() + 1e-3).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    CategoricalPosterior::from_distributions(&dists)
}

/// Enumeration-based checks: the 4-point permutation prior, exact
/// transport against permutation search, and optimality of the marginal
/// prior against random competitors.
pub fn run_oracle_suite(seed: u64) -> Result<Vec<OracleCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let arch = Architecture::mlp(2, 2, 8, 2, 2, 3)?;
    let params = arch.init(&mut rng)?;
    let points: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.random(), rng.random()]).collect();
    let mode = PosteriorMode::Stochastic;
    let (marginals, max_tv) = permutation_prior_bruteforce(&points, &params, mode)?;
    let posts: Vec<Vec<f64>> = points
        .iter()
        .map(|x| params.posterior(x, mode).map(|d| d.probs().to_vec()))
        .collect::<Result<_>>()?;
    let mixture: Vec<f64> = (0..3)
        .map(|j| posts.iter().map(|p| p[j]).sum::<f64>() / 4.0)
        .collect();
    let dev = marginals
        .iter()
        .flat_map(|m| m.probs().iter().zip(&mixture).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    checks.push(OracleCheck {
        name: "permutation_prior_enumeration",
        passed: dev <= 1e-12 && max_tv <= 1e-12,
        detail: format!("max deviation from mixture {dev:e}, max slot TV {max_tv:e}"),
    });

    let mut worst: f64 = 0.0;
    for size in [4usize, 6] {
        for _ in 0..100 {
            let a: Vec<Vec<f64>> = (0..size).map(|_| vec![rng.random(), rng.random()]).collect();
            let b: Vec<Vec<f64>> = (0..size).map(|_| vec![rng.random(), rng.random()]).collect();
            let exact = w2_squared(
                &EmpiricalMeasure::uniform(a.clone())?,
                &EmpiricalMeasure::uniform(b.clone())?,
            )?;
            let brute = (0..size)
                .permutations(size)
                .map(|p| p.iter().enumerate().map(|(i, &j)| sq_dist(&a[i], &b[j])).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                / size as f64;
            worst = worst.max((exact - brute).abs());
        }
    }
    checks.push(OracleCheck {
        name: "exact_transport_enumeration",
        passed: worst <= 1e-9,
        detail: format!("max |exact - enumeration| {worst:e} over 200 instances"),
    });

    let cost: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| rng.random()).collect()).collect();
    let (_, assign) = hungarian(&cost)?;
    let brute = (0..5)
        .permutations(5)
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    checks.push(OracleCheck {
        name: "assignment_enumeration",
        passed: (assign - brute).abs() <= 1e-12,
        detail: format!("assignment {assign}, enumeration {brute}"),
    });

    let mut margin = f64::INFINITY;
    for _ in 0..50 {
        let k = rng.random_range(2..=4);
        let rows = rng.random_range(2..=10);
        let post = random_posteriors(rows, k, &mut rng)?;
        let best = empirical_kl_term(&post, &marginal_prior(&post)?)?;
        for _ in 0..100 {
            let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-6).collect();
            let s: f64 = w.iter().sum();
            let prior = PriorVector::new(w.iter().map(|x| x / s).collect())?;
            margin = margin.min(empirical_kl_term(&post, &prior)? - best);
        }
    }
    checks.push(OracleCheck {
        name: "marginal_prior_optimality",
        passed: margin >= -1e-9,
        detail: format!("smallest competitor margin {margin:e}"),
    });
    Ok(checks)
}

pub fn oracle_csv(checks: &[OracleCheck]) -> String {
    let mut out = String::from("check,passed,detail\n");
    for c in checks {
        let _ = writeln!(out, "{},{},\"{}\"", c.name, c.passed, c.detail);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_overrides(&[
            "n=24",
            "k=4",
            "seeds=2",
            "epochs=5",
            "batch_size=8",
            "u_draws=2",
            "holdout=40",
            "gen_factor=2",
            "hidden=4",
        ])
        .unwrap();
        cfg
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        assert_eq!(derive_seed(1, &[2, 3]), derive_seed(1, &[2, 3]));
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_ne!(derive_seed(1, &[2]), derive_seed(2, &[2]));
    }

    #[test]
    fn statistics_helpers() {
        assert!((mean(&[1.0, 2.0, 3.0]) - 2.0).abs() < 1e-15);
        assert!((std_dev(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
        assert_eq!(std_dev(&[4.0]), 0.0);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 9.0, 3.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 5.0, 2.0]) - 0.5).abs() < 1e-12);
        assert_eq!(ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 - 2.0 * x).collect();
        assert!((ols_slope(&xs, &ys) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn one_cell_sweep_has_one_row_per_draw() {
        let mut cfg = small_cfg();
        cfg.num_seeds = 1;
        let out = run_gap_sweep(&cfg).unwrap();
        assert!(out.failures.is_empty());
        assert_eq!(out.cells.len(), 1);
        assert_eq!(out.gap_csv().lines().count(), 1 + cfg.protocol.num_u_draws);
        assert_eq!(out.terms_csv().lines().count(), 2);
        assert_eq!(out.summary().len(), 1);
        assert_eq!(out.summary_csv().lines().count(), 2);
        assert_eq!(out.cmi_csv().lines().count(), 1 + 24 * cfg.protocol.num_u_draws);
        let r = &out.cells[0].report;
        assert!(r.rhs_supersample.is_finite() && r.rhs_supersample >= 0.0);
        assert!(out.bounds_text().contains("not estimated"));
    }

    #[test]
    fn sweep_is_deterministic() {
        let cfg = small_cfg();
        let a = run_gap_sweep(&cfg).unwrap();
        let b = run_gap_sweep(&cfg).unwrap();
        assert_eq!(a.gap_csv(), b.gap_csv());
        assert_eq!(a.cmi_csv(), b.cmi_csv());
        assert_eq!(a.bounds_csv(), b.bounds_csv());
    }

    #[test]
    fn k1_cells_have_zero_kl_terms() {
        let mut cfg = small_cfg();
        cfg.k_grid = vec![1];
        cfg.num_seeds = 1;
        let out = run_gap_sweep(&cfg).unwrap();
        let r = &out.cells[0].report;
        assert_eq!(r.inputs.kl_empirical, 0.0);
        assert_eq!(r.inputs.kl_cmi, 0.0);
        let floor = r.inputs.delta / (r.inputs.n as f64).sqrt();
        assert!((r.rhs_supersample - floor).abs() < 1e-12);
        assert_eq!(r.natarajan_cap, 0.0);
    }

    #[test]
    fn failed_cells_are_recorded() {
        let mut cfg = small_cfg();
        cfg.num_seeds = 1;
        cfg.n_grid = vec![24, 4];
        let out = run_gap_sweep(&cfg).unwrap();
        assert_eq!(out.cells.len(), 1);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].0.n, 4);
        assert!(out.failures_csv().lines().count() == 2);
    }

    #[test]
    fn genquality_rows() {
        let cfg = small_cfg();
        let recs = run_genquality(&cfg).unwrap();
        assert_eq!(recs.len(), 2);
        let csv = genquality_csv(&recs);
        assert_eq!(csv.lines().count(), 3);
        for r in &recs {
            assert!(r.check.w2_squared >= 0.0 && r.check.rhs > 0.0);
        }
    }

    #[test]
    fn prior_ab_shape_and_self_comparison() {
        let mut cfg = small_cfg();
        let recs = run_prior_ab(&cfg).unwrap();
        assert_eq!(recs.len(), 4);
        let summary = ab_summary(&recs);
        assert_eq!(summary.len(), 2);
        assert!(summary.iter().all(|s| s.2 == 2));
        assert_eq!(ab_summary_csv(&recs).lines().count(), 3);

        cfg.ab_lambda_mix = 0.0;
        let recs = run_prior_ab(&cfg).unwrap();
        for pair in recs.chunks(2) {
            assert_eq!(pair[0].test_loss, pair[1].test_loss);
        }
        cfg.num_seeds = 1;
        assert!(run_prior_ab(&cfg).is_err());
    }

    #[test]
    fn train_run() {
        let cfg = small_cfg();
        let r = run_train(&cfg).unwrap();
        assert_eq!(r.history.len(), 5);
        assert!(r.train_loss.is_finite() && r.test_loss.is_finite());
    }

    #[test]
    fn oracle_suite_passes() {
        let checks = run_oracle_suite(0).unwrap();
        assert_eq!(checks.len(), 4);
        for c in &checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
        assert_eq!(oracle_csv(&checks).lines().count(), 5);
    }

    #[test]
    fn finite_source_draws_from_points() {
        let src = DataSource::Finite(vec![vec![0.1], vec![0.9]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let xs = src.draw(50, &mut rng).unwrap();
        assert!(xs.iter().all(|x| x == &vec![0.1] || x == &vec![0.9]));
        assert_eq!(src.dim(), 1);
        assert!(src.means().is_none());
    }

    #[test]
    fn fmt_num_writes_inf() {
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert!(fmt_num(0.5).parse::<f64>().is_ok());
    }
}
