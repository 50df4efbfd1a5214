//! Command-line front door: `sample` partitions a dataset into learning
//! sessions, `train` runs a (method x seed) grid with per-session
//! checkpoints, and `report` recomputes measures from those checkpoints.
//!
//! Exit codes: 0 success, 1 config error, 2 data error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use ckge::config::{parse_file, RunConfig};
use ckge::report::cmd_report;
use ckge::runner::{cmd_sample, cmd_train};
use ckge::Result;

#[derive(Parser)]
#[command(name = "ckge", version, about = "Continual knowledge-graph embedding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition a dataset into learning-session splits.
    Sample {
        /// Dataset directory with entity2id/relation2id/train/valid/test.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 5)]
        sessions: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Where to put sessions/; defaults to the current directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Train every (method, seed) cell of a run, resuming finished sessions.
    Train {
        /// Flat key=value config file; the flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sessions: Option<usize>,
        /// Comma-separated subset of batch,finetune,pnn,cwr,l2r,si,dgr.
        #[arg(long)]
        methods: Option<String>,
        /// Comma-separated seed list, one grid cell per method and seed.
        #[arg(long)]
        seeds: Option<String>,
        /// transe or analogy.
        #[arg(long)]
        model: Option<String>,
        /// unconstrained, data_constrained, or time_data_constrained.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Recompute report.json and report.tsv from a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// Where to write the report files; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample { dataset, sessions, seed, out } => {
            cmd_sample(&dataset, sessions, seed, &out)
        }
        Command::Train {
            config,
            dataset,
            out,
            sessions,
            methods,
            seeds,
            model,
            scenario,
            epochs,
        } => {
            let mut pairs = match config {
                Some(path) => parse_file(&path)?,
                None => Vec::new(),
            };
            let mut push = |key: &str, value: Option<String>| {
                if let Some(v) = value {
                    pairs.push((key.to_owned(), v));
                }
            };
            push("dataset", dataset.map(|p| p.display().to_string()));
            push("out", out.map(|p| p.display().to_string()));
            push("sessions", sessions.map(|n| n.to_string()));
            push("methods", methods);
            push("seeds", seeds);
            push("model", model);
            push("scenario", scenario);
            push("epochs", epochs.map(|n| n.to_string()));
            cmd_train(&RunConfig::build(&pairs)?)
        }
        Command::Report { run, out } => {
            let report = cmd_report(&run, out.as_deref())?;
            print!("{}", report.to_tsv());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors; everything else is
            // a bad invocation, which is a config error in our exit scheme.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
