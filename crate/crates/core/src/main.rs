use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use odmd::error::{Error, Result};
use odmd::experiments::report::emit_signals;
use odmd::experiments::{emit_report, run_scenario, Format, Method, ScenarioConfig};

/// Ground-state energy estimation sweeps from real-time overlap signals.
#[derive(Parser)]
#[command(name = "odmd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the clean and noisy overlap signals of a scenario.
    Generate(Common),
    /// Run a single scenario (no overlap sweep).
    Run(Common),
    /// Run the full grid, including `p0_list` when present.
    Sweep(Common),
    /// Run every method on the configured system.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replace the configured seed list with this single seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Comma-separated output formats.
    #[arg(long, value_delimiter = ',', default_value = "csv,svg")]
    formats: Vec<Format>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

enum Outcome {
    Done,
    Partial(usize),
}

fn load(args: &Common) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed_override {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn scenario(cfg: &ScenarioConfig, out: &Path, formats: &[Format]) -> Result<Outcome> {
    let report = run_scenario(cfg)?;
    let manifest = emit_report(&report, out, formats)?;
    let failed = report.failed_count();
    eprintln!(
        "{}: {} cells, {} failed, {} files in {}",
        report.label,
        report.cells.len(),
        failed,
        manifest.files.len(),
        out.display()
    );
    Ok(if failed > 0 {
        Outcome::Partial(failed)
    } else {
        Outcome::Done
    })
}

fn execute(command: &Command) -> Result<Outcome> {
    let (Command::Generate(args) | Command::Run(args) | Command::Sweep(args) | Command::Compare(args)) = command;
    let mut cfg = load(args)?;
    match command {
        Command::Generate(_) => {
            let manifest = emit_signals(&cfg, &args.out)?;
            eprintln!("{} signal files in {}", manifest.files.len(), args.out.display());
            Ok(Outcome::Done)
        }
        Command::Run(_) | Command::Compare(_) if cfg.p0_list.is_some() => Err(Error::Config(vec![
            "p0_list: overlap sweeps run with the `sweep` subcommand".into(),
        ])),
        Command::Compare(_) => {
            cfg.methods = Method::ALL.to_vec();
            scenario(&cfg, &args.out, &args.formats)
        }
        Command::Run(_) | Command::Sweep(_) => scenario(&cfg, &args.out, &args.formats),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (Command::Generate(args) | Command::Run(args) | Command::Sweep(args) | Command::Compare(args)) = &cli.command;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        pool = pool.num_threads(n);
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| execute(&cli.command)),
        Err(e) => Err(Error::Config(vec![format!("threads: {e}")])),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(n)) => {
            eprintln!("{n} cells failed; see the status column of the aggregate table");
            ExitCode::from(2)
        }
        Err(e @ Error::Emit(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
