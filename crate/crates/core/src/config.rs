//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, lists are comma separated.
//! Unknown keys are errors. See [`ExperimentConfig::KEYS`] for the schema.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::infotools::{CmiFeature, CmiProtocolConfig, Pooling};
use crate::model::PosteriorMode;
use crate::trainer::{TrainConfig, TrainMode};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    /// Gaussian mixture on a lattice inside the unit box.
    Mixture {
        dim: usize,
        components: usize,
        spread: f64,
    },
    /// Dataset CSV; normalized into the unit box on load.
    Csv(PathBuf),
    /// IDX image file; scaled into the unit box on load.
    Idx(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub latent_dim: usize,
    pub hidden: usize,
    pub enc_layers: usize,
    /// Decoder depth grid.
    pub dec_layers: Vec<usize>,
    pub k_grid: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub num_seeds: usize,
    /// Master seed; every cell derives its streams from it.
    pub seed: u64,
    /// Fresh points for test losses and the generation check.
    pub holdout: usize,
    /// Generated samples per training point in the generation check.
    pub gen_factor: usize,
    pub train: TrainConfig,
    pub protocol: CmiProtocolConfig,
    pub delta_cover: f64,
    /// `None` means the parametric proxy `d_phi d_z log(1 / delta)`.
    pub log_covering_number: Option<f64>,
    pub natarajan_dim: usize,
    /// Mixing weight of the data-dependent arm in the prior comparison.
    pub ab_lambda_mix: f64,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::Mixture {
                dim: 2,
                components: 4,
                spread: 0.05,
            },
            latent_dim: 2,
            hidden: 16,
            enc_layers: 2,
            dec_layers: vec![2],
            k_grid: vec![8],
            n_grid: vec![200],
            num_seeds: 10,
            seed: 0,
            holdout: 1000,
            gen_factor: 10,
            train: TrainConfig {
                lr: 1e-2,
                init_log_sigma2: -6.0,
                ..TrainConfig::default()
            },
            protocol: CmiProtocolConfig::default(),
            delta_cover: 1e-3,
            log_covering_number: None,
            natarajan_dim: 1,
            ab_lambda_mix: 0.5,
            out: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("cannot parse {value:?} for {key}"))
}

fn parse_list(key: &str, value: &str) -> std::result::Result<Vec<usize>, String> {
    let items: Vec<usize> = value
        .split(',')
        .map(|s| parse_num::<usize>(key, s.trim()))
        .collect::<std::result::Result<_, _>>()?;
    if items.is_empty() {
        return Err(format!("{key} needs at least one value"));
    }
    Ok(items)
}

fn join(list: &[usize]) -> String {
    list.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Splits `key=value`, trimming both sides.
pub fn parse_override(text: &str) -> Result<(String, String)> {
    match text.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::Config {
            line: 0,
            message: format!("override {text:?} is not of the form key=value"),
        }),
    }
}

impl ExperimentConfig {
    /// Every accepted key.
    pub const KEYS: [&'static str; 36] = [
        "dataset",
        "dataset_path",
        "dim",
        "components",
        "spread",
        "latent_dim",
        "hidden",
        "enc_layers",
        "dec_layers",
        "k",
        "n",
        "seeds",
        "seed",
        "holdout",
        "gen_factor",
        "epochs",
        "batch_size",
        "lr",
        "lr_patience",
        "anneal_rate",
        "alpha_ema",
        "lambda_mix",
        "train_mode",
        "init_log_sigma2",
        "init_log_sigma_psi2",
        "u_draws",
        "knn_k",
        "pooling",
        "cmi_feature",
        "samples_per_row",
        "posterior",
        "delta_cover",
        "log_covering_number",
        "natarajan_dim",
        "ab_lambda_mix",
        "out",
    ];

    /// Applies one setting; `line` is used only for error messages.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        self.set_inner(key, value).map_err(|message| Error::Config { line, message })
    }

    fn set_inner(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let mixture = |ds: &mut DatasetSpec| -> std::result::Result<(), String> {
            if !matches!(ds, DatasetSpec::Mixture { .. }) {
                return Err(format!("{key} only applies to the mixture dataset"));
            }
            Ok(())
        };
        match key {
            "dataset" => {
                self.dataset = match value {
                    "mixture" => DatasetSpec::Mixture {
                        dim: 2,
                        components: 4,
                        spread: 0.05,
                    },
                    "csv" => DatasetSpec::Csv(PathBuf::new()),
                    "idx" => DatasetSpec::Idx(PathBuf::new()),
                    other => return Err(format!("unknown dataset kind {other:?}")),
                }
            }
            "dataset_path" => match &mut self.dataset {
                DatasetSpec::Csv(p) | DatasetSpec::Idx(p) => *p = PathBuf::from(value),
                DatasetSpec::Mixture { .. } => {
                    return Err("dataset_path needs dataset = csv or idx".into())
                }
            },
            "dim" | "components" | "spread" => {
                mixture(&mut self.dataset)?;
                if let DatasetSpec::Mixture {
                    dim,
                    components,
                    spread,
                } = &mut self.dataset
                {
                    match key {
                        "dim" => *dim = parse_num(key, value)?,
                        "components" => *components = parse_num(key, value)?,
                        _ => *spread = parse_num(key, value)?,
                    }
                }
            }
            "latent_dim" => self.latent_dim = parse_num(key, value)?,
            "hidden" => self.hidden = parse_num(key, value)?,
            "enc_layers" => self.enc_layers = parse_num(key, value)?,
            "dec_layers" => self.dec_layers = parse_list(key, value)?,
            "k" => self.k_grid = parse_list(key, value)?,
            "n" => self.n_grid = parse_list(key, value)?,
            "seeds" => self.num_seeds = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "holdout" => self.holdout = parse_num(key, value)?,
            "gen_factor" => self.gen_factor = parse_num(key, value)?,
            "epochs" => self.train.epochs = parse_num(key, value)?,
            "batch_size" => self.train.batch_size = parse_num(key, value)?,
            "lr" => self.train.lr = parse_num(key, value)?,
            "lr_patience" => self.train.lr_halve_patience_epochs = parse_num(key, value)?,
            "anneal_rate" => self.train.anneal_rate = parse_num(key, value)?,
            "alpha_ema" => self.train.alpha_ema = parse_num(key, value)?,
            "lambda_mix" => self.train.lambda_mix = parse_num(key, value)?,
            "train_mode" => {
                self.train.mode = value.parse::<TrainMode>().map_err(|e| e.to_string())?
            }
            "init_log_sigma2" => self.train.init_log_sigma2 = parse_num(key, value)?,
            "init_log_sigma_psi2" => self.train.init_log_sigma_psi2 = parse_num(key, value)?,
            "u_draws" => self.protocol.num_u_draws = parse_num(key, value)?,
            "knn_k" => self.protocol.knn_k = parse_num(key, value)?,
            "pooling" => {
                self.protocol.pooling = match value {
                    "pooled" => Pooling::Pooled,
                    "per_seed" => Pooling::PerSeed,
                    other => return Err(format!("unknown pooling {other:?}")),
                }
            }
            "cmi_feature" => {
                self.protocol.feature = match value {
                    "index" => CmiFeature::Index,
                    "loss" => CmiFeature::Loss,
                    other => return Err(format!("unknown cmi_feature {other:?}")),
                }
            }
            "samples_per_row" => self.protocol.samples_per_row = parse_num(key, value)?,
            "posterior" => {
                self.protocol.mode = match value {
                    "stochastic" => PosteriorMode::Stochastic,
                    "deterministic" => PosteriorMode::Deterministic,
                    other => return Err(format!("unknown posterior mode {other:?}")),
                }
            }
            "delta_cover" => self.delta_cover = parse_num(key, value)?,
            "log_covering_number" => {
                self.log_covering_number = match value {
                    "auto" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "natarajan_dim" => self.natarajan_dim = parse_num(key, value)?,
            "ab_lambda_mix" => self.ab_lambda_mix = parse_num(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: i + 1,
                    message: format!("expected key = value, got {line:?}"),
                });
            };
            self.set(k.trim(), v.trim(), i + 1)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides in order, then re-validates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = parse_override(o.as_ref())?;
            self.set(&k, &v, 0)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Err(Error::Config { line: 0, message });
        match &self.dataset {
            DatasetSpec::Mixture {
                dim,
                components,
                spread,
            } => {
                if *dim == 0 || *components == 0 {
                    return bad("mixture needs dim >= 1 and components >= 1".into());
                }
                if !(spread.is_finite() && *spread > 0.0) {
                    return bad(format!("spread must be finite and > 0, got {spread}"));
                }
            }
            DatasetSpec::Csv(p) | DatasetSpec::Idx(p) => {
                if p.as_os_str().is_empty() {
                    return bad("dataset_path is required for file datasets".into());
                }
            }
        }
        if self.latent_dim == 0 || self.hidden == 0 || self.enc_layers == 0 {
            return bad("latent_dim, hidden and enc_layers must be >= 1".into());
        }
        for (name, grid) in [
            ("dec_layers", &self.dec_layers),
            ("k", &self.k_grid),
            ("n", &self.n_grid),
        ] {
            if grid.is_empty() || grid.contains(&0) {
                return bad(format!("{name} grid must be nonempty with entries >= 1"));
            }
        }
        if self.num_seeds == 0 {
            return bad("seeds must be >= 1".into());
        }
        if self.holdout == 0 || self.gen_factor == 0 {
            return bad("holdout and gen_factor must be >= 1".into());
        }
        if !(self.delta_cover > 0.0 && self.delta_cover <= 1.0) {
            return bad(format!("delta_cover must lie in (0, 1], got {}", self.delta_cover));
        }
        if let Some(l) = self.log_covering_number {
            if !(l.is_finite() && l >= 0.0) {
                return bad(format!("log_covering_number must be finite and >= 0, got {l}"));
            }
        }
        if !(0.0..=1.0).contains(&self.ab_lambda_mix) {
            return bad(format!("ab_lambda_mix must lie in [0, 1], got {}", self.ab_lambda_mix));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(t.lr.is_finite() && t.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", t.lr));
        }
        if !(0.0..=1.0).contains(&t.alpha_ema) || !(0.0..=1.0).contains(&t.lambda_mix) {
            return bad("alpha_ema and lambda_mix must lie in [0, 1]".into());
        }
        if !t.anneal_rate.is_finite()
            || !t.init_log_sigma2.is_finite()
            || !t.init_log_sigma_psi2.is_finite()
        {
            return bad("anneal_rate and initial log-variances must be finite".into());
        }
        self.protocol.validate().or_else(|e| bad(e.to_string()))
    }

    /// Canonical text form; parsing it gives back the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.dataset {
            DatasetSpec::Mixture {
                dim,
                components,
                spread,
            } => {
                put("dataset", "mixture".into());
                put("dim", dim.to_string());
                put("components", components.to_string());
                put("spread", spread.to_string());
            }
            DatasetSpec::Csv(p) => {
                put("dataset", "csv".into());
                put("dataset_path", p.display().to_string());
            }
            DatasetSpec::Idx(p) => {
                put("dataset", "idx".into());
                put("dataset_path", p.display().to_string());
            }
        }
        put("latent_dim", self.latent_dim.to_string());
        put("hidden", self.hidden.to_string());
        put("enc_layers", self.enc_layers.to_string());
        put("dec_layers", join(&self.dec_layers));
        put("k", join(&self.k_grid));
        put("n", join(&self.n_grid));
        put("seeds", self.num_seeds.to_string());
        put("seed", self.seed.to_string());
        put("holdout", self.holdout.to_string());
        put("gen_factor", self.gen_factor.to_string());
        let t = &self.train;
        put("epochs", t.epochs.to_string());
        put("batch_size", t.batch_size.to_string());
        put("lr", t.lr.to_string());
        put("lr_patience", t.lr_halve_patience_epochs.to_string());
        put("anneal_rate", t.anneal_rate.to_string());
        put("alpha_ema", t.alpha_ema.to_string());
        put("lambda_mix", t.lambda_mix.to_string());
        put("train_mode", t.mode.to_string());
        put("init_log_sigma2", t.init_log_sigma2.to_string());
        put("init_log_sigma_psi2", t.init_log_sigma_psi2.to_string());
        let p = &self.protocol;
        put("u_draws", p.num_u_draws.to_string());
        put("knn_k", p.knn_k.to_string());
        put(
            "pooling",
            match p.pooling {
                Pooling::Pooled => "pooled",
                Pooling::PerSeed => "per_seed",
            }
            .into(),
        );
        put(
            "cmi_feature",
            match p.feature {
                CmiFeature::Index => "index",
                CmiFeature::Loss => "loss",
            }
            .into(),
        );
        put("samples_per_row", p.samples_per_row.to_string());
        put(
            "posterior",
            match p.mode {
                PosteriorMode::Stochastic => "stochastic",
                PosteriorMode::Deterministic => "deterministic",
            }
            .into(),
        );
        put("delta_cover", self.delta_cover.to_string());
        put(
            "log_covering_number",
            self.log_covering_number
                .map_or("auto".to_string(), |v| v.to_string()),
        );
        put("natarajan_dim", self.natarajan_dim.to_string());
        put("ab_lambda_mix", self.ab_lambda_mix.to_string());
        if let Some(o) = &self.out {
            put("out", o.display().to_string());
        }
        s
    }
}
