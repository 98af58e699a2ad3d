//! Command-line front end for capdirac: TOML run configurations, experiment
//! dispatch and report files.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use clap::Parser;
use commands::{dispatch, header, CommandKind, Job};
use config::RunConfig;
use error::CliError;
use report::Report;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "capdirac", version, about = "Resonances and CAP eigenvalues of semiclassical Dirac operators")]
pub struct Args {
    #[arg(value_enum)]
    pub command: CommandKind,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides experiment.output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated hbar values; overrides experiment.ladder.
    #[arg(long = "hbar-ladder", value_delimiter = ',')]
    pub hbar_ladder: Option<Vec<f64>>,
    #[arg(long, env = "CAPDIRAC_THREADS")]
    pub threads: Option<usize>,
    /// Overrides experiment.seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct Outcome {
    pub report: PathBuf,
    pub csv: PathBuf,
}

pub fn run(args: &Args) -> Result<Outcome, CliError> {
    let path = args.config.as_ref().ok_or(CliError::Config { line: None, message: "--config <path> is required".into() })?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config { line: None, message: format!("cannot read {}: {e}", path.display()) })?;
    let mut cfg = RunConfig::parse(&text)?;
    let model = cfg.validate(Some(&text))?;
    if let Some(seed) = args.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(ladder) = &args.hbar_ladder {
        if ladder.iter().any(|h| !(*h > 0.0 && *h < 1.0)) {
            return Err(CliError::Config { line: None, message: "--hbar-ladder values must lie in (0, 1)".into() });
        }
        cfg.experiment.ladder = ladder.clone();
    }
    if let Some(n) = args.threads {
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.experiment.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("capdirac-out"));
    let job = Job {
        cfg: &cfg,
        model,
        ladder: (!cfg.experiment.ladder.is_empty()).then(|| cfg.experiment.ladder.clone()),
        out: &out,
        stem: format!("{}-{}", cfg.experiment.tag, args.command.name()),
    };
    let mut report = Report::default();
    report.push("header", header(args.command, &job));
    match dispatch(args.command, &job, &mut report) {
        // Refusals still leave a report behind.
        result @ (Ok(()) | Err(CliError::Precondition(_))) => {
            let timestamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
            let (jsonl, csv) = report.write(&out, &job.stem, &timestamp)?;
            result.map(|()| Outcome { report: jsonl, csv })
        }
        Err(e) => Err(e),
    }
}
