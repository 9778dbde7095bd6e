mod commands;
mod config;
mod error;
mod manifest;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{IngestArgs, Learner, RowSet, RunDir, Scorer, SplitArgs, SynthArgs, TemporalArgs};
use config::{Resolved, CONFIG_ENV};
use error::CliError;

/// Positive-unlabeled risk scoring of public procurement contracts.
#[derive(Parser)]
#[command(name = "pufraud", version)]
struct Cli {
    /// TOML configuration file; flags take precedence over it.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,

    /// Run directory holding every stage's artifacts.
    #[arg(long, global = true, default_value = "pufraud-run")]
    dir: PathBuf,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic market with planted fraud.
    Synth(SynthCmd),
    /// Validate contracts and sanctions and store them in the run directory.
    Ingest(IngestCmd),
    /// Compute red flags, network metrics and the encoded feature matrix.
    Features,
    /// Company-disjoint (or temporal) train/test/calibration split.
    Split(SplitCmd),
    /// Train a PU learner on the training split.
    Train(TrainCmd),
    /// Score the test rows (or all rows) with a trained model or the CRI.
    Score(ScoreCmd),
    /// Tie-aware gain and lift of a prediction file.
    Eval(EvalCmd),
    /// Supplier-level permutation test of a learner.
    Permtest(PermtestCmd),
    /// TreeSHAP attributions, global importance and dependence exports.
    Shap(ShapCmd),
    /// Render gain/lift curves and dependence scatters as SVG and CSV.
    Report,
}

#[derive(Args)]
struct SynthCmd {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    suppliers: Option<usize>,
    #[arg(long)]
    buyers: Option<usize>,
    #[arg(long)]
    years: Option<usize>,
    #[arg(long)]
    contracts_per_year: Option<usize>,
    /// Remove every planted signal; labels become independent of features.
    #[arg(long)]
    no_signal: bool,
    /// Output directory instead of `<dir>/raw`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IngestCmd {
    /// Contracts CSV (default: `<dir>/raw/contracts.csv`).
    #[arg(long)]
    contracts: Option<PathBuf>,
    /// Sanctions CSV (default: `<dir>/raw/sanctions.csv`).
    #[arg(long)]
    sanctions: Option<PathBuf>,
    /// Accepted signing years, e.g. 2015-2019.
    #[arg(long)]
    years: Option<String>,
}

#[derive(Args)]
struct SplitCmd {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    /// Train on these years (e.g. 2015-2018) and test on `--test-year`.
    #[arg(long, requires = "test_year")]
    train_years: Option<String>,
    #[arg(long, requires = "train_years")]
    test_year: Option<i32>,
    /// Last sanction year visible to training (default: last training year).
    #[arg(long, requires = "train_years")]
    cutoff: Option<i32>,
}

#[derive(Args)]
struct ModelFlags {
    /// Number of trees (hdsrf) or estimators (pubag).
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    class_prior: Option<f64>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainCmd {
    #[arg(long, value_enum)]
    model: Learner,
    #[command(flatten)]
    flags: ModelFlags,
}

#[derive(Args)]
struct ScoreCmd {
    #[arg(long, value_enum)]
    model: Scorer,
    #[arg(long, value_enum, default_value = "test")]
    rows: RowSet,
}

#[derive(Args)]
struct EvalCmd {
    /// Evaluate `<dir>/scores/<model>.csv`.
    #[arg(long, value_enum, conflicts_with = "predictions")]
    model: Option<Scorer>,
    /// Any CSV with `label` (0/1) and `score` columns.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Report name (default: model name or file stem).
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct PermtestCmd {
    #[arg(long, value_enum)]
    model: Learner,
    #[arg(long, default_value_t = 99)]
    permutations: usize,
    #[arg(long, default_value_t = 7)]
    permutation_seed: u64,
    #[command(flatten)]
    flags: ModelFlags,
}

#[derive(Args)]
struct ShapCmd {
    /// Test rows to explain, spread evenly over the test set.
    #[arg(long, default_value_t = 2000)]
    max_rows: usize,
    /// Dependence exports for this many top features.
    #[arg(long, default_value_t = 4)]
    top: usize,
}

fn model_overrides(cfg: &mut Resolved, model: Learner, f: &ModelFlags) {
    match model {
        Learner::Hdsrf => {
            cfg.set("hdsrf.n_estimators", f.trees, |c, v| c.hdsrf.n_estimators = v);
            cfg.set("hdsrf.class_prior", f.class_prior, |c, v| c.hdsrf.class_prior = v);
            cfg.set("hdsrf.max_depth", f.max_depth, |c, v| c.hdsrf.max_depth = v);
            cfg.set("hdsrf.seed", f.seed, |c, v| c.hdsrf.seed = v);
        }
        Learner::Pubag => {
            cfg.set("pubag.n_estimators", f.trees, |c, v| c.pubag.n_estimators = v);
            cfg.set("pubag.seed", f.seed, |c, v| c.pubag.seed = v);
            if f.class_prior.is_some() || f.max_depth.is_some() {
                log::warn!("--class-prior and --max-depth apply to hdsrf only");
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let mut cfg = Resolved::load(cli.config.as_deref())?;
    let dir = RunDir { root: cli.dir };
    let w = cli.workers;
    match cli.command {
        Command::Synth(a) => {
            if a.no_signal {
                let base = cfg.config.synth;
                cfg.config.synth = pufraud::synth::SynthConfig {
                    n_buyers: base.n_buyers,
                    n_suppliers: base.n_suppliers,
                    first_year: base.first_year,
                    years: base.years,
                    contracts_per_year: base.contracts_per_year,
                    core_buyers: base.core_buyers,
                    seed: base.seed,
                    ..pufraud::synth::SynthConfig::no_signal()
                };
                cfg.overrides.insert("synth.no_signal".into(), true.into());
            }
            cfg.set("synth.seed", a.seed, |c, v| c.synth.seed = v);
            cfg.set("synth.n_suppliers", a.suppliers, |c, v| c.synth.n_suppliers = v);
            cfg.set("synth.n_buyers", a.buyers, |c, v| c.synth.n_buyers = v);
            cfg.set("synth.years", a.years, |c, v| c.synth.years = v);
            cfg.set("synth.contracts_per_year", a.contracts_per_year, |c, v| c.synth.contracts_per_year = v);
            commands::synth(&dir, &cfg, w, &SynthArgs { out: a.out })
        }
        Command::Ingest(a) => {
            commands::ingest(&dir, &cfg, w, &IngestArgs { contracts: a.contracts, sanctions: a.sanctions, years: a.years })
        }
        Command::Features => commands::features(&dir, &cfg, w),
        Command::Split(a) => {
            cfg.set("split.seed", a.seed, |c, v| c.split.seed = v);
            cfg.set("split.test_fraction", a.test_fraction, |c, v| c.split.test_fraction = v);
            cfg.set("split.folds", a.folds, |c, v| c.split.folds = v);
            let temporal = match (a.train_years, a.test_year) {
                (Some(train_years), Some(test_year)) => Some(TemporalArgs { train_years, test_year, cutoff: a.cutoff }),
                _ => None,
            };
            commands::split(&dir, &cfg, w, &SplitArgs { temporal })
        }
        Command::Train(a) => {
            model_overrides(&mut cfg, a.model, &a.flags);
            commands::train(&dir, &cfg, w, a.model)
        }
        Command::Score(a) => commands::score(&dir, &cfg, w, a.model, a.rows),
        Command::Eval(a) => commands::eval(&dir, &cfg, w, a.model, a.predictions.as_deref(), a.name.as_deref()),
        Command::Permtest(a) => {
            model_overrides(&mut cfg, a.model, &a.flags);
            commands::permtest(&dir, &cfg, w, a.model, a.permutations, a.permutation_seed)
        }
        Command::Shap(a) => commands::shap(&dir, &cfg, w, a.max_rows, a.top),
        Command::Report => commands::report(&dir, &cfg, w),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
