//! `loadcast`: preprocess, train, predict, evaluate, ablate and synthesize.
//!
//! Any config key can be overridden as `--key=value`, e.g.
//! `loadcast train --config run.conf --seed=7 --stage1_epochs=50`.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};

use commands::{EvaluateArgs, PredictArgs, StageSel, TrainArgs};
use config::RunConfig;
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "loadcast", about = "Day-ahead electric load forecasting", disable_version_flag = true)]
struct Cli {
    /// Print version and build information.
    #[arg(long, short = 'V')]
    version: bool,
    /// Flat key = value config file; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write outputs here instead of a timestamped directory under output_dir.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Stage {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest and clean the dataset; writes cleaned.csv and a report.
    Preprocess,
    /// Train stage 1, stage 2 or both.
    Train {
        #[arg(long, value_enum, default_value = "both")]
        stage: Stage,
        /// Completed stage-1 checkpoint (with --stage 2).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue an interrupted run from its checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        resume: Option<PathBuf>,
        /// Stop after this epoch of the running stage and checkpoint.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Write 24-hour forecasts for a date range.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// First day; defaults to the configured test window.
        #[arg(long)]
        from: Option<NaiveDate>,
        #[arg(long)]
        to: Option<NaiveDate>,
        /// Output CSV; defaults to predictions.csv in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score forecasts from a predictions file or a checkpoint.
    Evaluate {
        #[arg(long, conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Single-day predictions timed for the latency figure.
        #[arg(long, default_value_t = 100)]
        timing_runs: usize,
    },
    /// Train and compare the three ablation arms over ablation_seeds.
    Ablate {
        /// Parallel workers; 0 = one per core.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Write a synthetic dataset in the input CSV format.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Split `--key=value` config overrides from the arguments clap handles.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        if let Some((k, v)) = a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            let key = k.replace('-', "_");
            if config::is_key(&key) {
                overrides.push((key, v.to_string()));
                continue;
            }
        }
        rest.push(a);
    }
    (rest, overrides)
}

fn version() -> String {
    format!(
        "loadcast {} (core {}, {}-{}, {} build)",
        env!("CARGO_PKG_VERSION"),
        loadcast::VERSION,
        std::env::consts::ARCH,
        std::env::consts::OS,
        if cfg!(debug_assertions) { "debug" } else { "release" }
    )
}

fn run(cli: Cli, mut overrides: Vec<(String, String)>) -> Result<(), CliError> {
    let Some(command) = cli.command else {
        return Err(CliError::Usage("missing subcommand; see --help".into()));
    };
    if matches!(command, Command::Synth { .. }) {
        overrides.insert(0, ("source".into(), "synthetic".into()));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let rd = cli.run_dir.as_deref();
    let dir = match command {
        Command::Preprocess => commands::preprocess(&cfg, rd)?,
        Command::Train {
            stage,
            checkpoint,
            resume,
            stop_after,
        } => {
            let stage = match stage {
                Stage::One => StageSel::One,
                Stage::Two => StageSel::Two,
                Stage::Both => StageSel::Both,
            };
            commands::train(
                &cfg,
                &TrainArgs {
                    stage,
                    checkpoint,
                    resume,
                    stop_after,
                },
                rd,
            )?
        }
        Command::Predict { checkpoint, from, to, out } => {
            commands::predict(&cfg, &PredictArgs { checkpoint, from, to, out }, rd)?
        }
        Command::Evaluate {
            predictions,
            checkpoint,
            timing_runs,
        } => commands::evaluate(
            &cfg,
            &EvaluateArgs {
                predictions,
                checkpoint,
                timing_runs,
            },
            rd,
        )?,
        Command::Ablate { jobs } => commands::ablate(&cfg, jobs, rd)?,
        Command::Synth { out } => commands::synth(&cfg, out.as_deref(), rd)?,
    };
    println!("run directory: {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if cli.version {
        println!("{}", version());
        return ExitCode::SUCCESS;
    }
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
