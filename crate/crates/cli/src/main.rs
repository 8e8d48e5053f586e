//! `nhnn`: generate planted data, train and evaluate models, analyse relevance
//! scores, check gradients and time training steps.
//!
//! Failures print one `error: <Category>: <message>` line on stderr and exit
//! with 2 (bad arguments or inputs), 3 (verification failed) or 4 (runtime).

mod commands;
mod error;
mod ledger;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nhnn::dataset::Split;
use nhnn::model::Variant;

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "nhnn", version, about = "Naturality-guided hypergraph disentanglement experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Model and run overrides shared by `train` and `sweep`. Unset flags keep
/// the value from `--config` (or the built-in default).
#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// JSON run configuration (`model`, `train`, split ratios).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// full | ablation | alt-branch | hgnn
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Number of factors K.
    #[arg(long)]
    pub factors: Option<usize>,
    /// Hidden width d (a multiple of K).
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Number of layers L.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Weight of the factor-discrimination loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Mixing weight of the propagated representation.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Fraction of items used for training. `train` keeps a dataset's stored
    /// split unless this is given.
    #[arg(long)]
    pub train_ratio: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted-factor dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// JSON generator spec; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        edges: Option<usize>,
        /// Planted factor count K*.
        #[arg(long)]
        planted_factors: Option<usize>,
        #[arg(long)]
        feature_dim: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        /// Generate a hypergraph-classification dataset with this many samples.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        train_ratio: f64,
    },
    /// Train one model and write its artifacts to `--out`.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Ledger to append to (default: `<out>/ledger.csv`).
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Evaluate saved parameters on a dataset split.
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// train | val | test | all
        #[arg(long, default_value = "test")]
        split: Split,
        /// Directory for `metrics.json` and `alpha.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlation, similarity and recovery analyses of a relevance-score CSV.
    Analyze {
        #[arg(long)]
        alpha: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset whose planted factor ids (and non-empty hyperedges) to use.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// CSV of `hyperedge,factor` planted ids.
        #[arg(long)]
        planted: Option<PathBuf>,
        /// CSV of `hyperedge,cluster` assignments.
        #[arg(long)]
        clusters: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare tape gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time training steps while doubling the incidence count.
    Bench {
        #[arg(long, default_value_t = 4096)]
        nodes: usize,
        #[arg(long, default_value_t = 2048)]
        edges: usize,
        /// Incidence count of the smallest size.
        #[arg(long, default_value_t = 524_288)]
        incidences: usize,
        #[arg(long, default_value_t = 3)]
        points: usize,
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        #[arg(long, default_value_t = 2)]
        factors: usize,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of training runs in parallel.
    Sweep {
        /// JSON grid (`variants`, `factors`, `lambdas`, `train_ratios`, `seeds`,
        /// optional `synthetic` generator spec).
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fixed dataset to re-split per seed; default regenerates planted data.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let dtype = commands::dtype_from_env()?;
    match cli.command {
        Command::Gen {
            out,
            config,
            seed,
            nodes,
            edges,
            planted_factors,
            feature_dim,
            classes,
            samples,
            train_ratio,
        } => commands::gen(commands::GenArgs {
            out,
            config,
            seed,
            nodes,
            edges,
            planted_factors,
            feature_dim,
            classes,
            samples,
            train_ratio,
        }),
        Command::Train {
            dataset,
            out,
            overrides,
            ledger,
            run_id,
        } => commands::train(dtype, &dataset, &out, &overrides, ledger, run_id),
        Command::Eval {
            params,
            dataset,
            split,
            out,
        } => commands::eval(dtype, &params, &dataset, split, out.as_deref()),
        Command::Analyze {
            alpha,
            out,
            dataset,
            planted,
            clusters,
            seed,
        } => commands::analyze(&alpha, &out, dataset.as_deref(), planted.as_deref(), clusters.as_deref(), seed),
        Command::Gradcheck { seeds, out } => commands::gradcheck(seeds, out.as_deref()),
        Command::Bench {
            nodes,
            edges,
            incidences,
            points,
            hidden,
            factors,
            trials,
            seed,
            out,
        } => commands::bench(
            dtype,
            nhnn::bench::BenchSize {
                nodes,
                edges,
                incidences,
                hidden,
                factors,
            },
            points,
            trials,
            seed,
            out.as_deref(),
        ),
        Command::Sweep {
            grid,
            out,
            dataset,
            overrides,
            jobs,
        } => commands::sweep(dtype, &grid, &out, dataset.as_deref(), &overrides, jobs),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::usage(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
