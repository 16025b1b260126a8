use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use corl_harness::runner::{check_output_dirs, output_files, summary, write_all};
use corl_harness::{cmd_run, cmd_sweep, cmd_validate, Algorithm, ExperimentConfig, HarnessError, MetricsDocument};

#[derive(Parser)]
#[command(name = "corl", version, about = "Run CoRL-MPPI multi-robot navigation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the configured scenarios.
    Run(RunArgs),
    /// Execute the sweep grids and print one row per (scenario, N, algorithm).
    Sweep(RunArgs),
    /// Check a configuration (and optionally a metrics document) without running.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Recompute the aggregates of this metrics document and compare.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this algorithm (corl-mppi, mppi-orca, mppi, orca-dd).
    #[arg(long)]
    algo: Option<String>,
    /// Seed base.
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics document path (printed to stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step trajectory CSV path.
    #[arg(long)]
    traj: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn load(path: Option<&PathBuf>) -> Result<ExperimentConfig, HarnessError> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(args: RunArgs, sweep: bool) -> Result<(), HarnessError> {
    let mut cfg = load(args.config.as_ref())?;
    if let Some(a) = &args.algo {
        cfg.algorithms = vec![a.parse::<Algorithm>()?];
    }
    if let Some(s) = args.seed {
        cfg.seed_base = s;
    }
    if args.out.is_some() {
        cfg.outputs.metrics = args.out;
    }
    if args.traj.is_some() {
        cfg.outputs.trajectory = args.traj;
    }
    if args.jobs == Some(0) {
        return Err(HarnessError::Config("--jobs must be at least 1".into()));
    }
    check_output_dirs(&cfg.outputs)?;
    let exec = if sweep { cmd_sweep(&cfg, args.jobs)? } else { cmd_run(&cfg, args.jobs)? };
    write_all(&output_files(&cfg.outputs, &exec)?)?;
    let mut stdout = std::io::stdout().lock();
    let text = if cfg.outputs.metrics.is_none() { exec.metrics.to_json() } else { summary(&exec.metrics) };
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| HarnessError::Runtime(format!("stdout: {e}")))
}

fn validate(config: Option<PathBuf>, metrics: Option<PathBuf>) -> Result<(), HarnessError> {
    cmd_validate(&load(config.as_ref())?)?;
    if let Some(p) = metrics {
        let text = std::fs::read_to_string(&p)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", p.display())))?;
        let doc = MetricsDocument::from_json(&text)?;
        doc.check()
            .map_err(|problems| HarnessError::Config(format!("{}: {}", p.display(), problems.join("; "))))?;
    }
    println!("ok");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args, false),
        Command::Sweep(args) => run(args, true),
        Command::Validate { config, metrics } => validate(config, metrics),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("corl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
