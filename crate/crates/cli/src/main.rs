use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use pamlab::harness::{run_with_threads, validate, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "pamlab", version, about = "Parabolic Anderson model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample an environment trace.
    EnvSample(RunArgs),
    /// Solve the PAM on one environment.
    Solve(RunArgs),
    /// Feynman-Kac Monte Carlo estimate next to the solver value.
    Fk(RunArgs),
    /// Quenched and annealed exponents over a κ grid.
    LyapunovSweep(RunArgs),
    /// Mixing-event frequencies and box-average tail table.
    Diagnostics(RunArgs),
    /// Level-set percolation profile of the running supremum.
    Percolation(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(kind: ExperimentKind, args: RunArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = ExperimentConfig::from_toml_as(&text, kind).with_context(|| format!("parsing {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.out = Some(out);
    }
    let problems = validate(&cfg);
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("invalid config: {p}");
        }
        bail!("{} invalid field(s)", problems.len());
    }
    if args.threads == Some(0) {
        bail!("invalid --threads: must be >= 1");
    }
    let Some(out) = cfg.out.clone() else {
        bail!("invalid config: out: no output directory (pass --out)");
    };
    let manifest = run_with_threads(&cfg, &out, args.threads)?;
    for o in &manifest.outputs {
        println!("{}  {}", o.sha256, out.join(&o.file).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::EnvSample(a) => (ExperimentKind::EnvSample, a),
        Command::Solve(a) => (ExperimentKind::Solve, a),
        Command::Fk(a) => (ExperimentKind::Fk, a),
        Command::LyapunovSweep(a) => (ExperimentKind::LyapunovSweep, a),
        Command::Diagnostics(a) => (ExperimentKind::Diagnostics, a),
        Command::Percolation(a) => (ExperimentKind::Percolation, a),
    };
    match execute(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
