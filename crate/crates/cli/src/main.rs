use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;
use thermoform_cli::{run_subcommand, CliError, ExperimentConfig, Overrides, Subcommand};

/// Numerical experiments on transfer operators, equilibrium states and
/// recurrence for Markov circle maps.
#[derive(Debug, Parser)]
#[command(name = "thermoform", version)]
struct Args {
    #[arg(value_enum)]
    command: Subcommand,
    /// TOML experiment configuration. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Working level of the transfer matrix.
    #[arg(long)]
    level: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// Single level or length replacing the configured lists.
    #[arg(long)]
    n: Option<usize>,
    /// Exit with status 3 when any check fails.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn execute(args: &Args) -> Result<(), CliError> {
    if let Ok(t) = std::env::var("THERMOFORM_THREADS") {
        let n: usize = t.parse().map_err(|_| CliError::Config(format!("THERMOFORM_THREADS: not a number: {t}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let base = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let overrides = Overrides { seed: args.seed, level: args.level, samples: args.samples, n: args.n, out: args.out.clone() };
    let cfg = base.apply(&overrides)?;
    let manifest = run_subcommand(args.command, &cfg, args.strict)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    for c in &manifest.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value);
    }
    println!("wrote {} artifacts to {}", manifest.artifacts.len(), cfg.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
