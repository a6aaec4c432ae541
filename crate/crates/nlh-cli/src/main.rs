//! `nlh`: command line driver for the adaptive nonlinear Helmholtz solver.
//!
//! Three subcommands, one job each:
//!
//! * `accuracy` — convergence study of the manufactured corner/soliton
//!   problem: plain vs CIP-stabilized P1, adaptive vs uniform refinement
//! * `bistability` — intensity sweeps of the hexagonal Kerr cavity with
//!   branch tracking (up, down, and middle branch)
//! * `verify` — the built-in oracle suite, printed as a pass/fail table
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage or config error.
//! Artifact-writing commands put everything under one run directory named
//! by timestamp plus a content hash of the resolved config.

mod accuracy;
mod bistability;
mod manifest;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nlh", version, about = "adaptive FEM for the 2D nonlinear Helmholtz equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence and estimator-effectivity study on the problem with a
    /// known exact solution
    Accuracy {
        /// config file (flat key = value with [sections])
        #[arg(long)]
        config: PathBuf,
        /// parent directory for the run directory (default: runs)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optical-bistability intensity sweeps on the hexagonal cavity
    Bistability {
        /// config file (flat key = value with [sections])
        #[arg(long)]
        config: PathBuf,
        /// parent directory for the run directory (default: runs)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle/invariant suite and print a pass/fail table
    Verify,
}

/// A command failure with its process exit code: 1 numerical, 2 usage.
pub(crate) struct Failure {
    pub code: u8,
    pub message: String,
}

pub(crate) fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

pub(crate) fn numerical(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

impl From<nlhfem::Error> for Failure {
    fn from(e: nlhfem::Error) -> Failure {
        let code = match e {
            nlhfem::Error::Config(_) | nlhfem::Error::InvalidParam(_) => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

/// NLH_THREADS caps the threads of the linear-algebra kernels. Unset or 1
/// runs sequentially, which is also the bit-reproducibility mode.
fn configure_threads() {
    let par = match std::env::var("NLH_THREADS") {
        Err(_) => faer::Par::Seq,
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(0) | Ok(1) => faer::Par::Seq,
            Ok(n) => faer::Par::rayon(n),
            Err(_) => {
                eprintln!("warning: NLH_THREADS={s:?} is not a thread count, running sequentially");
                faer::Par::Seq
            }
        },
    };
    faer::set_global_parallelism(par);
}

fn run_verify() -> Result<(), Failure> {
    let checks = nlhfem::verify::run_all();
    print!("{}", nlhfem::verify::render_table(&checks));
    if nlhfem::verify::all_passed(&checks) {
        Ok(())
    } else {
        Err(numerical("verification failed"))
    }
}

fn main() -> ExitCode {
    env_logger::init();
    configure_threads();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Accuracy { config, out } => accuracy::run(config, out.as_deref()),
        Command::Bistability { config, out } => bistability::run(config, out.as_deref()),
        Command::Verify => run_verify(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
