use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rotor_lockin::reference::RefKind;
use rotor_lockin::sim::NoiseKind;

mod commands;
mod config;
mod error;

use config::{Overrides, RunConfig};

/// Lock-in demodulation toolkit for rotating-electrode optical voltage sensors.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Two periods of the modulation waveform and its harmonic series.
    Modwave(Args),
    /// Optical-switch reference waveform and its transition fit.
    Refsignal(Args),
    /// End-to-end modulation, noise and demodulation run.
    Simulate(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    /// JSON config file; a manifest from an earlier run is also accepted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// step, sine or none
    #[arg(long)]
    noise: Option<NoiseKind>,
    /// square or sine
    #[arg(long = "ref")]
    ref_kind: Option<RefKind>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (name, args, run): (_, _, fn(&RunConfig, &std::path::Path) -> Result<_, _>) = match cli.command {
        Command::Modwave(a) => ("modwave", a, commands::modwave),
        Command::Refsignal(a) => ("refsignal", a, commands::refsignal),
        Command::Simulate(a) => ("simulate", a, commands::simulate),
    };
    let overrides = Overrides {
        seed: args.seed,
        noise: args.noise,
        ref_kind: args.ref_kind,
    };
    let outcome = RunConfig::load(args.config.as_deref(), overrides).and_then(|cfg| run(&cfg, &args.out));
    match outcome {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
