//! `poqsim` command-line front end.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::SimFiles;
use config::SimOverrides;

#[derive(Parser)]
#[command(
    name = "poqsim",
    version,
    about = "Cost-aware Proof-of-Quality simulator"
)]
struct Cli {
    #[command(flatten)]
    sim: SimArgs,
    #[command(subcommand)]
    command: Command,
}

/// Simulation settings; flags and environment variables override the config file.
#[derive(Args)]
struct SimArgs {
    /// Flat `key = value` simulation config.
    #[arg(long, global = true, env = "POQSIM_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "POQSIM_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true, env = "POQSIM_ROUNDS")]
    rounds: Option<u64>,
    #[arg(long, global = true, env = "POQSIM_ALPHA_F")]
    alpha_f: Option<f64>,
    #[arg(long, global = true, env = "POQSIM_BETA_F")]
    beta_f: Option<f64>,
    #[arg(long, global = true, env = "POQSIM_ALPHA_M")]
    alpha_m: Option<f64>,
    #[arg(long, global = true, env = "POQSIM_BETA_M")]
    beta_m: Option<f64>,
    #[arg(long, global = true, env = "POQSIM_K")]
    k: Option<usize>,
    /// `fixed` or `uniform_1_to_3`.
    #[arg(long, global = true, env = "POQSIM_K_POLICY")]
    k_policy: Option<String>,
}

impl SimArgs {
    fn overrides(&self) -> SimOverrides {
        SimOverrides {
            seed: self.seed,
            rounds: self.rounds,
            alpha_f: self.alpha_f,
            beta_f: self.beta_f,
            alpha_m: self.alpha_m,
            beta_m: self.beta_m,
            k: self.k,
            k_policy: self.k_policy.clone(),
        }
    }
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    tasks: PathBuf,
    /// Generation records with normalized evaluator scores.
    #[arg(long)]
    metrics: PathBuf,
    /// Node costs from `poqsim costs`.
    #[arg(long)]
    costs: PathBuf,
}

impl InputArgs {
    fn files(&self) -> SimFiles<'_> {
        SimFiles {
            tasks: &self.tasks,
            metrics: &self.metrics,
            costs: &self.costs,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check JSONL files and report record counts.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Compute token-F1 ground truth for generations.
    ScoreGt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Judge scores to merge into the records.
        #[arg(long)]
        judges: Option<PathBuf>,
    },
    /// Min-max normalize evaluator scores per evaluator and task type.
    Normalize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        spans_out: PathBuf,
        /// Reuse previously fitted spans instead of fitting new ones.
        #[arg(long)]
        spans_in: Option<PathBuf>,
    },
    /// Turn efficiency profiles into normalized latency costs.
    Costs {
        #[arg(long)]
        efficiency: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the Monte Carlo reward simulation.
    Simulate {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long)]
        stats_out: PathBuf,
        /// Write every round outcome as JSONL.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run one simulation per point of a parameter grid.
    Sweep {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluator correlations and the quality/latency frontier.
    Analyze {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        efficiency: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a synthetic corpus with planted properties.
    Synth {
        /// JSON synth spec; defaults to the built-in reference pool.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n_per_task: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), error::CliError> {
    let overrides = cli.sim.overrides();
    let config = cli.sim.config.as_deref();
    match &cli.command {
        Command::Validate { paths } => commands::validate(paths),
        Command::ScoreGt {
            input,
            output,
            judges,
        } => commands::score_gt(input, output, judges.as_deref()),
        Command::Normalize {
            input,
            output,
            spans_out,
            spans_in,
        } => commands::normalize(input, output, spans_out, spans_in.as_deref()),
        Command::Costs {
            efficiency,
            output,
            csv,
        } => commands::costs(efficiency, output, csv.as_deref()),
        Command::Simulate {
            inputs,
            stats_out,
            trace,
        } => commands::simulate(
            &inputs.files(),
            config,
            &overrides,
            stats_out,
            trace.as_deref(),
        ),
        Command::Sweep {
            inputs,
            grid,
            out_dir,
        } => commands::sweep_cmd(&inputs.files(), config, &overrides, grid, out_dir),
        Command::Analyze {
            metrics,
            efficiency,
            out_dir,
        } => commands::analyze(metrics, efficiency, out_dir),
        Command::Synth {
            spec,
            n_per_task,
            out_dir,
        } => commands::synth_cmd(spec.as_deref(), cli.sim.seed, *n_per_task, out_dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class.exit_code())
        }
    }
}
