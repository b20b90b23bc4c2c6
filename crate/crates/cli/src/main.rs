//! `scatreg` command-line driver.

mod commands;
mod config;

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scatreg::invariants::DictKind;
use scatreg::regress::Criterion;
use scatreg::Result;
use serde_json::json;

use crate::commands::Ctx;
use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "scatreg", version, about = "Scattering invariants and sparse regression for molecular energies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Overrides,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Compute (or reuse cached) features for a dataset.
    Featurize,
    /// Fit a bagged OLS model on the whole dataset.
    Train,
    /// Apply a trained model to a dataset.
    Predict,
    /// Five-fold cross-validated bagged OLS.
    Cv,
    /// Five-fold cross-validated Coulomb-matrix kernel ridge regression.
    KrrBaseline,
    /// Dyadic energy identity and convergence rates on seeded charge configurations.
    ValidateTheorems,
    /// Orthogonalized weight study over random subsamples.
    AnalyzeWeights,
    /// Littlewood-Paley constant of the configured filter bank.
    FilterbankCheck,
}

/// Flags override values from `--config`.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// TOML (or .json) run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    dict: Option<DictKind>,
    /// Comma-separated channels: dirac, atomic, core, valence.
    #[arg(long, global = true)]
    channels: Option<String>,
    #[arg(long = "grid-J", global = true)]
    grid_j: Option<u32>,
    #[arg(long = "angles-L", global = true)]
    angles_l: Option<usize>,
    /// Grid spacing in Bohr.
    #[arg(long, global = true)]
    spacing: Option<f64>,
    #[arg(long, global = true)]
    profiles: Option<PathBuf>,
    #[arg(long, global = true)]
    allow_analytic_profiles: bool,
    #[arg(long, global = true)]
    m_max: Option<usize>,
    #[arg(long, global = true)]
    bags: Option<usize>,
    /// Bag size in percent of the training set.
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    criterion: Option<Criterion>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    fold_seed: Option<u64>,
    #[arg(long, global = true, env = "SCATREG_CACHE")]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Model file written by `train`.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true)]
    draws: Option<usize>,
    /// scale_pair, order, norm, channel or angle.
    #[arg(long, global = true)]
    group_by: Option<String>,
    #[arg(long, global = true, value_delimiter = ',')]
    eps_grid: Option<Vec<f64>>,
}

impl Overrides {
    fn apply(self, mut c: RunConfig) -> RunConfig {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(dict, channels, grid_j, angles_l, m_max, bags, criterion, seed, fold_seed, out, draws, group_by, eps_grid);
        macro_rules! set_opt {
            ($($f:ident),*) => { $( if self.$f.is_some() { c.$f = self.$f; } )* };
        }
        set_opt!(dataset, spacing, profiles, beta, cache_dir, model);
        c.allow_analytic_profiles |= self.allow_analytic_profiles;
        c
    }
}

fn run(cli: Cli) -> Result<()> {
    let base = match &cli.flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ctx = Ctx::new(cli.flags.apply(base))?;
    log::debug!("config hash {}", ctx.hash);
    match cli.command {
        Command::Featurize => commands::featurize(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Predict => commands::predict(&ctx),
        Command::Cv => commands::cv(&ctx),
        Command::KrrBaseline => commands::krr_baseline(&ctx),
        Command::ValidateTheorems => commands::validate_theorems(&ctx),
        Command::AnalyzeWeights => commands::analyze_weights(&ctx),
        Command::FilterbankCheck => commands::filterbank_check(&ctx),
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim(), 1),
    };
    panic::set_hook(Box::new(|_| {}));
    match panic::catch_unwind(AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => fail(e.kind(), &e.to_string(), if e.is_user_error() { 1 } else { 2 }),
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal panic".into());
            fail("internal", &msg, 2)
        }
    }
}
