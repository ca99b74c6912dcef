//! `prom3`: generate instances, run the solvers, check oracles, sweep K.
//!
//! Exit codes: 0 on success, 1 on any error, 2 when a solver finished
//! without meeting its own stopping rule (cutting-plane round limit).

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::Settings;

#[derive(Debug, Parser)]
#[command(
    name = "prom3",
    version,
    about = "Robust optimization solvers and experiment harness"
)]
struct Cli {
    /// Cap on worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded instance file.
    Generate {
        #[command(subcommand)]
        family: Family,
        /// Output path of the instance JSON.
        #[arg(long, global = true)]
        out: Option<PathBuf>,
    },
    /// Run one solver on an instance.
    ///
    /// Settings come from flags, then from the --config TOML file (same
    /// kebab-case keys), then from built-in defaults.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
        /// Trace CSV path (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Summary JSON path.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Write zeros in the time column so repeated runs are byte-identical.
        #[arg(long)]
        no_timing: bool,
    },
    /// Verify oracle derivatives, declared bounds, convexity and the Slater point.
    Check {
        #[arg(long)]
        instance: PathBuf,
        /// Random sample points per oracle.
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Relative finite-difference tolerance.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Solve once per K and collect final values in one table.
    Bench {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated outer iteration counts.
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
        #[command(flatten)]
        settings: Settings,
        /// Directory for bench.csv and one trace per K.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        no_timing: bool,
    },
}

#[derive(Debug, Subcommand)]
enum Family {
    /// Robust QCQP with ellipsoidal uncertainty.
    Qcqp {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
        #[arg(long)]
        j: usize,
        #[arg(long)]
        seed: u64,
        /// Scale of the epigraph coordinate (default balances it with x).
        #[arg(long)]
        epigraph_scale: Option<f64>,
    },
    /// Robust log-sum-exp constraints.
    Lse {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        j: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Distributionally robust newsvendor with CVaR constraints.
    Newsvendor {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.9)]
        kappa: f64,
        #[arg(long, default_value_t = 0.1)]
        radius: f64,
        #[arg(long)]
        seed: u64,
    },
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(n) = cli.threads {
        anyhow::ensure!(n >= 1, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::Generate { family, out } => commands::generate(family, out),
        Command::Solve {
            instance,
            config,
            settings,
            out,
            summary,
            no_timing,
        } => commands::solve(
            &instance,
            config.as_deref(),
            settings,
            out,
            summary,
            !no_timing,
        ),
        Command::Check {
            instance,
            trials,
            tol,
            seed,
        } => commands::check(&instance, trials, tol, seed),
        Command::Bench {
            instance,
            config,
            ks,
            settings,
            out_dir,
            no_timing,
        } => commands::bench(
            &instance,
            config.as_deref(),
            &ks,
            settings,
            &out_dir,
            !no_timing,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
