use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mftg::experiments::{
    cmd_nash_gap, cmd_simulate, cmd_solve_mfte, cmd_sweep, with_threads, ExperimentConfig, RunOptions,
};
use mftg::Error;

#[derive(Parser)]
#[command(name = "mftg", version, about = "Mean-field team equilibria for LQG teams sharing a priced channel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the equilibrium mean-field trajectory and write solution.json.
    SolveMfte(Common),
    /// Simulate N teams under a stored solution; writes costs.csv and utilization.csv.
    Simulate(WithSolution),
    /// Solve and simulate every point of the configured sweep; writes sweep.csv.
    Sweep(Common),
    /// Search the configured deviation class; writes nash_gap.csv.
    NashGap(WithSolution),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Master seed; overrides sim.seed.
    #[arg(long, env = "MFTG_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "MFTG_THREADS")]
    threads: Option<usize>,
    /// Omit the #created line from CSV outputs.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args)]
struct WithSolution {
    #[command(flatten)]
    common: Common,
    /// Solution file written by solve-mfte.
    #[arg(long)]
    solution: PathBuf,
}

fn options(c: &Common) -> RunOptions {
    RunOptions {
        out_dir: c.out.clone(),
        seed: c.seed,
        no_timestamp: c.no_timestamp,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let common = match &cli.command {
        Command::SolveMfte(c) | Command::Sweep(c) => c,
        Command::Simulate(s) | Command::NashGap(s) => &s.common,
    };
    let cfg = ExperimentConfig::load(&common.config)?;
    let opts = options(common);
    with_threads(common.threads, || -> Result<(), Error> {
        match &cli.command {
            Command::SolveMfte(_) => {
                let s = cmd_solve_mfte(&cfg, &opts)?;
                println!("{}", s.line());
                println!("wrote {}", s.path.display());
            }
            Command::Simulate(w) => {
                let s = cmd_simulate(&cfg, &w.solution, &opts)?;
                println!("{}", s.costs.line());
                println!("wrote {} and {}", s.cost_path.display(), s.utilization_path.display());
            }
            Command::Sweep(_) => {
                let s = cmd_sweep(&cfg, &opts)?;
                for p in &s.points {
                    match &p.costs {
                        Some(c) => println!("point {} ({}): {}", p.index, p.value, c.line()),
                        None => println!("point {} ({}): {}", p.index, p.value, p.status),
                    }
                }
                if let Some(slope) = s.slope {
                    println!("mismatch log-log slope vs N: {slope:.4}");
                }
                println!("wrote {}", s.path.display());
            }
            Command::NashGap(w) => {
                let s = cmd_nash_gap(&cfg, &w.solution, &opts)?;
                for line in s.lines() {
                    println!("{line}");
                }
                println!("wrote {}", s.path.display());
            }
        }
        Ok(())
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
