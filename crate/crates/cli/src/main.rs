use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use softscatter_cli::commands::{self, exit, CliError, Context};
use softscatter_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "softscatter", version, about = "Scattering by many small soft particles: forward solves, inversion and placement plans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides planner.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run even when the small-particle regime check fails.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Amplitude table of a particle file.
    ForwardParticles,
    /// Amplitude table of a capacitance density.
    ForwardMedium,
    /// Capacitance density from an amplitude table.
    Invert,
    /// Particle placement from a capacitance density.
    Plan,
    /// forward-medium, invert, plan and forward-particles in sequence.
    Roundtrip,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError {
            code: exit::PARSE,
            stage: None,
            message: format!("thread pool: {e}"),
        })?;
    }
    let path = cli.config.as_ref().ok_or_else(|| CliError { code: exit::PARSE, stage: None, message: "--config is required".into() })?;
    let mut config = RunConfig::load(path).map_err(|e| {
        let mut e = CliError::from(e);
        e.code = exit::PARSE;
        e.message = format!("{}: {}", path.display(), e.message);
        e
    })?;
    if let (Some(seed), Some(p)) = (cli.seed, config.planner.as_mut()) {
        p.seed = seed;
    }
    let ctx = Context::new(config, cli.out.clone(), cli.force)?;
    match cli.command {
        Command::ForwardParticles => commands::forward_particles(&ctx),
        Command::ForwardMedium => commands::forward_medium(&ctx),
        Command::Invert => commands::invert(&ctx),
        Command::Plan => commands::plan(&ctx),
        Command::Roundtrip => commands::roundtrip(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
