//! `jeq`: scenario-driven runner for the J-equation solvers.
//!
//! Exit codes: 0 success, 2 invalid scenario, 3 solver failure.

mod expr;
mod run;
mod scenario;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scenario::{ConfigError, Task};

#[derive(Parser)]
#[command(name = "jeq", version = run::VERSION, about = "Batch runner for J-equation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Directory receiving run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Worker threads (falls back to JEQ_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// March the continuity path on a torus and dump the solution.
    SolveTorus(Common),
    /// Solve the reduced cusp equation and fit its asymptotics.
    SolveCusp(Common),
    /// Certify the subsolution condition pointwise.
    CheckSubsolution(Common),
    /// Exact intersection arithmetic on surface classes.
    Classes(Common),
    /// Energy functionals for a list of potentials.
    Energies(Common),
    /// Run member scenarios over a parameter list concurrently.
    Sweep(Common),
}

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, ConfigError> {
    if let Some(k) = flag {
        return Ok(Some(k));
    }
    match std::env::var("JEQ_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| ConfigError {
                field: "JEQ_THREADS".into(),
                msg: format!("expected a thread count, got {v:?}"),
            }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, common) = match cli.command {
        Command::SolveTorus(c) => (Task::SolveTorus, c),
        Command::SolveCusp(c) => (Task::SolveCusp, c),
        Command::CheckSubsolution(c) => (Task::CheckSubsolution, c),
        Command::Classes(c) => (Task::Classes, c),
        Command::Energies(c) => (Task::Energies, c),
        Command::Sweep(c) => (Task::Sweep, c),
    };
    let prepared = thread_count(common.threads).and_then(|threads| {
        let text = std::fs::read_to_string(&common.scenario).map_err(|e| ConfigError {
            field: common.scenario.display().to_string(),
            msg: format!("cannot read scenario: {e}"),
        })?;
        Ok((threads, scenario::parse_scenario(&text, task)?))
    });
    let (threads, scenario) = match prepared {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(k) = threads {
        if k == 0 {
            eprintln!("ConfigInvalid: threads: must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
        {
            eprintln!("warning: thread pool already initialized: {e}");
        }
    }
    let (dir, result) = tasks::run(&scenario, &common.out);
    println!("{}", dir.display());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("{e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("SolverFailed: {e:#}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}
