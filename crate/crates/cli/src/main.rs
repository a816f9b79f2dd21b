//! `coxfield` command-line interface.
//!
//! Exit codes: 0 success, 1 mathematical or verification failure, 2 input error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "coxfield",
    version,
    about = "Mean-field models of FCFS load balancers with Coxian job sizes"
)]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "coxfield-out")]
    pub out: PathBuf,

    /// Pass threshold of the command's own check (see each command's help).
    #[arg(long, global = true)]
    pub tol: Option<f64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Convert a distribution to Coxian form and report class C0 membership,
    /// mixture weights and moments. `--tol` bounds the CDF round trip (1e-10).
    Convert {
        /// Distribution JSON (`{"kind": "hyperexp" | "coxian", ...}`).
        input: PathBuf,
    },
    /// Fit a two-branch hyperexponential to a mean and normalized moments.
    Fit {
        #[arg(long)]
        m1: f64,
        #[arg(long)]
        n2: f64,
        #[arg(long)]
        n3: f64,
    },
    /// Solve for the fixed point of a model. `--tol` bounds the first-row
    /// structure residual (1e-10).
    FixedPoint {
        /// Model JSON.
        model: PathBuf,
        /// Double the buffer until the last level carries less than 1e-10.
        #[arg(long)]
        auto_buffer: bool,
    },
    /// Integrate the ODE and write the trajectory as CSV.
    Integrate {
        model: PathBuf,
        /// `empty`, `full`, `fixed-point`, or a state JSON file.
        #[arg(long, default_value = "empty")]
        init: String,
        #[arg(long = "t-end")]
        t_end: f64,
        /// Step size; defaults to the largest admissible step.
        #[arg(long)]
        dt: Option<f64>,
        /// Time between recorded rows; defaults to `t-end / 100`.
        #[arg(long)]
        sample: Option<f64>,
    },
    /// Simulate a finite system and compare with the fixed point.
    Simulate {
        /// Simulation config JSON (`N`, `seed`, `warmup`, `horizon`, `replications`, `model`).
        config: PathBuf,
        /// Also write one CSV row per replication.
        #[arg(long)]
        per_replication: bool,
    },
    /// Run a verification suite: monotone, attract, lyapunov or order-oracle.
    Verify {
        suite: String,
        /// Model JSON (not used by order-oracle).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Number of random cases.
        #[arg(long)]
        count: Option<usize>,
        /// Integration horizon.
        #[arg(long = "t-end")]
        t_end: Option<f64>,
        /// Buffer size for order-oracle.
        #[arg(long, default_value_t = 5)]
        buffer: usize,
        /// Number of phases for order-oracle.
        #[arg(long, default_value_t = 3)]
        phases: usize,
    },
}

fn init_threads() {
    if let Some(n) = std::env::var("COXFIELD_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    init_threads();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
