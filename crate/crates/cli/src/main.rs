//! `rrbsde`: seeded, reproducible runs of the rough RBSDE toolkit.
//!
//! Every run writes its outputs and a `manifest.toml` into `--out`; feeding the
//! manifest back through `--config` reproduces the outputs byte for byte.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rrbsde", version, about = "Reflected BSDEs with rough drivers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; recorded in the manifest, the solvers run sequentially.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Sample and lift the signal; write the path and a p-variation table.
    Lift,
    /// Solve the reflected (or penalized, or unreflected) equation by regression Monte Carlo.
    Solve,
    /// Solve the obstacle PDE, optionally cross-checked against Monte Carlo.
    Pde,
    /// Check the optimal stopping identity.
    Stop,
    /// Stability table along a family of problems.
    Converge,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Lift => "lift",
            Command::Solve => "solve",
            Command::Pde => "pde",
            Command::Stop => "stop",
            Command::Converge => "converge",
        }
    }
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let Some(path) = &cli.config else {
        return fail(EXIT_CONFIG, "--config is required");
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_CONFIG, format!("cannot read {}: {e}", path.display())),
    };
    let mut cfg = match RunConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.threads != 1 {
        log::info!("--threads {} accepted; this build runs sequentially", cli.threads);
    }

    let result = match cli.command {
        Command::Lift => commands::lift(&cfg),
        Command::Solve => commands::solve(&cfg),
        Command::Pde => commands::pde(&cfg),
        Command::Stop => commands::stop(&cfg),
        Command::Converge => commands::converge(&cfg),
    };
    let mut outputs = match result {
        Ok(o) => o,
        Err(e) if e.is_config_error() => return fail(EXIT_CONFIG, e),
        Err(e) => return fail(EXIT_NUMERICAL, e),
    };
    outputs.notes.push(("threads".into(), cli.threads.to_string()));

    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        return fail(EXIT_NUMERICAL, format!("cannot create {}: {e}", cli.out.display()));
    }
    let manifest = commands::manifest(cli.command.name(), &cfg, &outputs.notes);
    outputs.files.push(("manifest.toml".into(), manifest));
    for (name, bytes) in &outputs.files {
        let target = cli.out.join(name);
        if let Err(e) = std::fs::write(&target, bytes) {
            return fail(EXIT_NUMERICAL, format!("cannot write {}: {e}", target.display()));
        }
        log::info!("wrote {}", target.display());
    }
    ExitCode::SUCCESS
}
