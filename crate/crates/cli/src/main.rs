//! `gcy`: batch front end for the generalized Calabi–Yau laboratory.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{parse_grid_override, Command, RunConfig};

#[derive(Parser)]
#[command(name = "gcy", version, about = "Generalized Calabi-Yau experiments on almost-Kähler tori")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Check J² = −I, compatibility and positivity of the metric.
    Validate(RunArgs),
    /// Tabulate F, its components, the taming margin and the amplitude of a potential.
    Analyze(RunArgs),
    /// Build a potential on the boundary of the taming cone with F > 0.
    Boundary(RunArgs),
    /// Run the continuity method toward a target density.
    Solve(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "GCY_THREADS")]
    threads: Option<usize>,
    /// One resolution for every axis, or a comma-separated list.
    #[arg(long)]
    grid_override: Option<String>,
}

fn prepare(cmd: Command, args: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(c) = cfg.command {
        if c != cmd {
            anyhow::bail!(gcy_core::Error::Config(format!(
                "config is for `{c:?}` but `{cmd:?}` was requested"
            )));
        }
    }
    cfg.command = Some(cmd);
    if let Some(g) = &args.grid_override {
        cfg.grid = parse_grid_override(g)?;
    }
    if let Some(t) = args.threads {
        cfg.threads = Some(t);
    }
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match &cli.command {
        Sub::Validate(a) => (Command::Validate, a),
        Sub::Analyze(a) => (Command::Analyze, a),
        Sub::Boundary(a) => (Command::Boundary, a),
        Sub::Solve(a) => (Command::Solve, a),
    };
    let result = prepare(cmd, args).and_then(|cfg| {
        let out = commands::output_dir(args.out.clone(), &cfg);
        commands::run(cmd, &cfg, &out).map(|o| (o, out))
    });
    match result {
        Ok((o, out)) => {
            print!("{}", o.summary);
            println!("reports written to {}", out.display());
            ExitCode::from(o.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
