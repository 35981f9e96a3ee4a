use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod error;

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "holofield", version, about = "Complex-valued holographic Gaussian radiance fields")]
struct Cli {
    /// Worker threads (default: all cores). HOLOFIELD_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a scene from a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render a checkpoint: hologram plus one intensity PNG per depth plane.
    Render(commands::RenderArgs),
    /// Propagate a HOLOFIELD file by a signed distance.
    Propagate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Signed distance in meters.
        #[arg(long, allow_hyphen_values = true)]
        z_meters: f64,
        /// Pixel pitch in meters.
        #[arg(long, default_value_t = 3.74e-6)]
        pixel_pitch: f64,
        /// Wavelength per channel in meters, comma separated. Defaults to
        /// 639/532/473 nm for three channels.
        #[arg(long, value_delimiter = ',')]
        wavelength: Vec<f64>,
        #[arg(long)]
        band_limit: bool,
    },
    /// Convert a complex hologram to a phase-only one.
    PhaseOnly(commands::PhaseOnlyArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(commands::GradcheckArgs),
    /// Time rasterization and hologram recording over a grid of sizes.
    Bench(commands::BenchArgs),
    /// Summary statistics of a checkpoint or scene file as JSON.
    Stats {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var("HOLOFIELD_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::usage("invalid_argument", format!("HOLOFIELD_THREADS must be a count, got {v:?}"))),
        Err(_) => Ok(flag),
    }
}

fn init_threads(n: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::runtime("invalid_argument", e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = thread_count(cli.threads)?;
    match cli.command {
        Command::Train { config } => {
            let cfg = commands::load_config(&config)?;
            init_threads(threads.or(cfg.threads))?;
            commands::train(&cfg)
        }
        cmd => {
            init_threads(threads)?;
            match cmd {
                Command::Train { .. } => unreachable!(),
                Command::Render(args) => commands::render(&args),
                Command::Propagate { input, out, z_meters, pixel_pitch, wavelength, band_limit } => {
                    commands::propagate(&input, &out, z_meters, pixel_pitch, wavelength, band_limit)
                }
                Command::PhaseOnly(args) => commands::phase_only(&args),
                Command::Gradcheck(args) => commands::gradcheck(&args),
                Command::Bench(args) => commands::bench(&args),
                Command::Stats { checkpoint } => commands::stats(&checkpoint),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code)
        }
    }
}
