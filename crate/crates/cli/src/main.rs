//! `gatelab <command> [flags]`: runs one experiment and writes its tables,
//! plots and manifest. Exit codes: 0 success, 1 runtime or check failure,
//! 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::Parser;
use gatelab::config::Settings;
use gatelab::experiments::{self, CheckKind, Command, ExperimentSpec};

#[derive(Debug, Parser)]
#[command(name = "gatelab", version, about = "Path-view experiments on deep gated networks")]
struct Cli {
    /// Experiment to run (`info` lists them with their defaults).
    #[arg(value_parser = PossibleValuesParser::new(Command::ALL.map(Command::name)))]
    command: String,

    /// Config file of `key = value` lines, applied over the command defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one key; repeatable and applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Run a single seed (shorthand for `run.seeds=N`).
    #[arg(long, value_name = "N", conflicts_with = "seeds")]
    seed: Option<u64>,

    /// Seed list, `a..b` (half-open) or comma-separated.
    #[arg(long, value_name = "N..M")]
    seeds: Option<String>,

    /// Output directory.
    #[arg(long, env = "GATELAB_OUT", value_name = "DIR", default_value = "gatelab-out")]
    out: PathBuf,

    /// Worker threads (default: one per core).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,

    #[arg(long, value_parser = ["csv", "csv+svg"])]
    format: Option<String>,

    /// Network grid for oracle-check.
    #[arg(long, value_parser = ["tiny", "quick"])]
    grid: Option<String>,

    /// Print only failures and errors.
    #[arg(short, long)]
    quiet: bool,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<gatelab::Error> for Failure {
    fn from(e: gatelab::Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn settings(cli: &Cli) -> Result<Settings, Failure> {
    let mut s = Settings::new();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        s.merge_text(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    for a in &cli.sets {
        s.set_assignment(a).map_err(|e| Failure::Usage(format!("--set {a}: {e}")))?;
    }
    let flags = [
        ("run.seeds", cli.seed.map(|n| n.to_string()).or(cli.seeds.clone())),
        ("run.format", cli.format.clone()),
        ("oracle.grid", cli.grid.clone()),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            s.set(key, v).expect("flag keys are known");
        }
    }
    Ok(s)
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    let command: Command = cli.command.parse().map_err(Failure::Usage)?;
    if cli.grid.is_some() && command != Command::OracleCheck {
        return Err(Failure::Usage("--grid only applies to oracle-check".into()));
    }
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Failure::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let overrides = settings(cli)?;
    let spec = ExperimentSpec::from_settings(command, &overrides, &cli.out)?;
    let artifacts = experiments::run(&spec)?;
    if command == Command::Info {
        for line in &artifacts.summary {
            println!("{line}");
        }
        return Ok(true);
    }
    let written = experiments::write_artifacts(&spec, &artifacts)?;
    if !cli.quiet {
        for line in &artifacts.summary {
            println!("{line}");
        }
    }
    for c in &artifacts.checks {
        let status = match (c.pass, c.kind) {
            (true, _) => "pass",
            (false, CheckKind::Assert) => "FAIL",
            (false, CheckKind::Report) => "note",
        };
        if !cli.quiet || c.failed() {
            println!("{status:>4}  {:<48} {:.4e} (reference {:.4e})", c.name, c.measured, c.reference);
        }
    }
    if !cli.quiet {
        println!("wrote {} files to {}", written.len(), spec.out_dir.display());
    }
    Ok(artifacts.all_passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
