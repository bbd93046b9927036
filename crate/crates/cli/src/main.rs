//! `vqgb`: batch front-end for training, gap/CMI sweeps, bound reports,
//! the generation check, the prior comparison and the oracle suite.
//!
//! Exit codes: 0 on success, 2 when any bound is violated, 1 on error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vqgb::config::ExperimentConfig;
use vqgb::experiments::{self, SweepOutput};

#[derive(Parser, Debug)]
#[command(name = "vqgb", version, about = "VQ-VAE generalization-bound experiments")]
struct Cli {
    /// Flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for sweep cells.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory; falls back to the config, then VQGB_OUT, then ./vqgb_out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Config override `key=value`, repeatable.
    #[arg(long = "override", global = true, value_name = "K=V")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Train one model at the first grid point.
    Train,
    /// Generalization gaps over the grid.
    Gap,
    /// Per-row CMI records and estimates over the grid.
    Cmi,
    /// Bound reports per cell.
    Bounds,
    /// Wasserstein generation-bound check per seed.
    Genquality,
    /// Baseline against data-dependent prior.
    PriorAb,
    /// Brute-force oracle suite.
    Oracle,
    /// Gap, CMI and bound outputs from one sweep.
    Sweep,
}

#[derive(Debug)]
enum Outcome {
    Ok,
    Violation,
}

fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<(), String> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents).map_err(|e| format!("writing {}: {e}", tmp.display()))?;
    std::fs::rename(&tmp, &target).map_err(|e| format!("renaming to {}: {e}", target.display()))
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides).map_err(|e| e.to_string())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn resolve_out(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.out.clone())
        .or_else(|| std::env::var_os("VQGB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("vqgb_out"))
}

fn write_sweep(dir: &Path, out: &SweepOutput, command: Command) -> Result<Outcome, String> {
    let gap = matches!(command, Command::Gap | Command::Sweep);
    let cmi = matches!(command, Command::Cmi | Command::Sweep);
    let bounds = matches!(command, Command::Bounds | Command::Sweep);
    if gap {
        write_atomic(dir, "gap.csv", &out.gap_csv())?;
    }
    if cmi {
        write_atomic(dir, "cmi.csv", &out.cmi_csv())?;
    }
    write_atomic(dir, "terms.csv", &out.terms_csv())?;
    write_atomic(dir, "summary.csv", &out.summary_csv())?;
    write_atomic(dir, "failures.csv", &out.failures_csv())?;
    for (key, err) in &out.failures {
        eprintln!("cell {key:?} failed: {err}");
    }
    if bounds {
        write_atomic(dir, "bounds.csv", &out.bounds_csv())?;
        write_atomic(dir, "bounds.txt", &out.bounds_text())?;
        let violations = out.violations();
        if !violations.is_empty() {
            eprintln!("{} cell(s) with measured gap above a bound", violations.len());
            return Ok(Outcome::Violation);
        }
    }
    print!("{}", out.summary_csv());
    Ok(Outcome::Ok)
}

fn run(cli: &Cli) -> Result<Outcome, String> {
    let cfg = resolve_config(cli)?;
    let dir = resolve_out(cli, &cfg);
    std::fs::create_dir_all(&dir).map_err(|e| format!("creating {}: {e}", dir.display()))?;
    write_atomic(&dir, "config.txt", &cfg.to_text())?;
    let err = |e: vqgb::Error| e.to_string();
    match cli.command {
        Command::Train => {
            let r = experiments::run_train(&cfg).map_err(err)?;
            write_atomic(&dir, "history.csv", &r.history.to_csv())?;
            let summary = format!(
                "train_loss,test_loss,prior\n{},{},{}\n",
                r.train_loss,
                r.test_loss,
                r.prior
                    .probs()
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            );
            write_atomic(&dir, "train_summary.csv", &summary)?;
            print!("{summary}");
            Ok(Outcome::Ok)
        }
        Command::Gap | Command::Cmi | Command::Bounds | Command::Sweep => {
            let out = experiments::run_gap_sweep(&cfg).map_err(err)?;
            write_sweep(&dir, &out, cli.command)
        }
        Command::Genquality => {
            let recs = experiments::run_genquality(&cfg).map_err(err)?;
            let csv = experiments::genquality_csv(&recs);
            write_atomic(&dir, "genquality.csv", &csv)?;
            print!("{csv}");
            if recs.iter().all(|r| r.check.holds) {
                Ok(Outcome::Ok)
            } else {
                Ok(Outcome::Violation)
            }
        }
        Command::PriorAb => {
            let recs = experiments::run_prior_ab(&cfg).map_err(err)?;
            write_atomic(&dir, "prior_ab.csv", &experiments::ab_csv(&recs))?;
            let summary = experiments::ab_summary_csv(&recs);
            write_atomic(&dir, "prior_ab_summary.csv", &summary)?;
            print!("{summary}");
            Ok(Outcome::Ok)
        }
        Command::Oracle => {
            let checks = experiments::run_oracle_suite(cfg.seed).map_err(err)?;
            let csv = experiments::oracle_csv(&checks);
            write_atomic(&dir, "oracle.csv", &csv)?;
            print!("{csv}");
            match checks.iter().find(|c| !c.passed) {
                Some(c) => Err(format!("oracle {} failed: {}", c.name, c.detail)),
                None => Ok(Outcome::Ok),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with 2 on usage errors; 2 is reserved for bound violations.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        pool = pool.num_threads(j);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Violation) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
