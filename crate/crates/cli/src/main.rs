use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "vgold", version, about = "Visible-gold crowdsourcing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score line-delimited annotations against a corpus.
    Score {
        /// Corpus file: a coordinate header line, then one scene per line.
        #[arg(long)]
        gold: PathBuf,
        /// Annotations: one {scene_id, worker_id, boxes, elapsed} object per line.
        #[arg(long)]
        pred: PathBuf,
        /// Recall threshold on IoU, exclusive.
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus.
    Generate {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Scenes per object count 1..=14.
        #[arg(long, default_value_t = 10)]
        per_count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run simulated conditions and write tables, curves, logs and comparisons.
    Simulate {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Defaults to the configuration's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare every condition in a simulate output against the baseline.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "baseline")]
        baseline: String,
    },
    /// Fit the behaviour constants to target condition means.
    Calibrate {
        /// CSV with `condition,mean_miou` columns.
        #[arg(long)]
        target: PathBuf,
        /// Supplies corpus, population and starting model; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON grid overriding the default search values.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value = "calibration.json")]
        out: PathBuf,
    },
    /// Serve one condition over HTTP, persisting every event to the log.
    Serve {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Condition to serve; required when the configuration has several.
        #[arg(long)]
        condition: Option<String>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Replayed on start, then appended to.
        #[arg(long)]
        log: PathBuf,
        /// Allow cross-origin requests from browser clients.
        #[arg(long)]
        cors: bool,
    },
}

/// Where an experiment comes from.
#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment configuration JSON.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in suite (`round1`, `round2`, `ordered`, `all`) or single preset name.
    #[arg(long)]
    preset: Option<String>,
    /// Calibration output whose fitted model replaces the configured one.
    #[arg(long)]
    calibration: Option<PathBuf>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
