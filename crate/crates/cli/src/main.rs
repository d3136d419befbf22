//! `fairicd`: counterfactual augmentation, fair GNN training and reports.

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairicd::pipeline::{Backbone, Strategy};

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "fairicd", version, about = "Fair node classification with counterfactual graph augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML file with optional [experiment], [schema] and [synthetic] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving every output file.
    #[arg(long)]
    out: PathBuf,
    /// Run a single seed (also the generator seed for `generate`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    backbone: Option<Backbone>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Top-k of the counterfactual search.
    #[arg(long)]
    k: Option<usize>,
    /// Weight of the adversarial term.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Debug, Args)]
struct Inputs {
    /// Node CSV with id, sensitive, label and feature columns.
    #[arg(long)]
    nodes: PathBuf,
    /// Whitespace-separated undirected edge list.
    #[arg(long)]
    edges: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic biased dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Counterfactual search and rewiring, with bias diagnostics.
    Augment {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        common: Common,
    },
    /// Train every configured seed and report test metrics.
    Train {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate saved checkpoints on the test split.
    Evaluate {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by `train`; repeat for several seeds.
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
    },
    /// Compare vanilla, edge dropping, feature masking and Fair-ICD.
    Ablate {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        common: Common,
    },
    /// Merge results files into one markdown table.
    Report {
        /// Results JSON files from `train`, `evaluate` or `ablate`.
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let overrides = Overrides {
            seed: self.seed,
            backbone: self.backbone,
            strategy: self.strategy,
            k: self.k,
            lambda: self.lambda,
        };
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let finish = |outputs: commands::Outputs, out: &Path| outputs.write(out);
    match command {
        Command::Generate { common } => {
            let cfg = common.resolve()?;
            commands::generate(&cfg, &common.out)?;
            Ok(())
        }
        Command::Augment { inputs, common } => {
            let cfg = common.resolve()?;
            finish(commands::augment(&cfg, &inputs.nodes, &inputs.edges)?, &common.out)
        }
        Command::Train { inputs, common } => {
            let cfg = common.resolve()?;
            let ds = commands::load(&inputs.nodes, &inputs.edges, &cfg)?;
            finish(commands::train_cmd(&cfg, &ds)?, &common.out)
        }
        Command::Evaluate { inputs, common, models } => {
            let cfg = common.resolve()?;
            let ds = commands::load(&inputs.nodes, &inputs.edges, &cfg)?;
            finish(commands::evaluate_cmd(&cfg, &ds, &models)?, &common.out)
        }
        Command::Ablate { inputs, common } => {
            let cfg = common.resolve()?;
            let ds = commands::load(&inputs.nodes, &inputs.edges, &cfg)?;
            finish(commands::ablate(&cfg, &ds)?, &common.out)
        }
        Command::Report { results, common } => {
            let cfg = common.resolve()?;
            finish(commands::report(&cfg, &results)?, &common.out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
