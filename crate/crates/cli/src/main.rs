//! `hypercondense`: ingest datasets, condense them, run coreset baselines,
//! evaluate condensed data with a from-scratch HGNN, verify the numerical
//! claims, and aggregate reports.
//!
//! Exit codes: 0 success, 1 internal error, 2 user/config error,
//! 3 verification failure.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "hypercondense", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset file and print its statistics.
    Ingest {
        path: PathBuf,
        #[arg(long, default_value = "json")]
        format: String,
    },
    /// Generate a synthetic benchmark-scale dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "json")]
        format: String,
        #[arg(long, default_value_t = 2708)]
        nodes: usize,
        #[arg(long, default_value_t = 1579)]
        edges: usize,
        #[arg(long, default_value_t = 7494)]
        members: usize,
        #[arg(long, default_value_t = 7)]
        classes: usize,
        #[arg(long, default_value_t = 512)]
        dim: usize,
        #[arg(long, default_value_t = 0.85)]
        homophily: f64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Condense a dataset into one or more synthetic sets.
    Condense {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "json")]
        format: String,
        /// JSON config file; CLI flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Condensation ratio, e.g. `0.01` or `1%`.
        #[arg(long)]
        ratio: Option<String>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        k_override: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        sets: usize,
    },
    /// Select a coreset baseline (random, herding, kcenter).
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "json")]
        format: String,
        #[arg(long)]
        method: String,
        #[arg(long)]
        ratio: String,
        #[arg(long, default_value_t = 2.0)]
        lambda: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        sets: usize,
    },
    /// Train HGNNs on condensed/coreset sets (or the full data) and report
    /// test accuracy on the original split.
    Evaluate {
        /// Directory with set_* artifacts (or a single artifact directory).
        #[arg(long, required_unless_present = "full")]
        condensed: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "json")]
        format: String,
        /// Evaluate the whole original dataset instead of artifacts.
        #[arg(long, default_value_t = false)]
        full: bool,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Cap on the number of set_* artifacts evaluated (default: all).
        #[arg(long)]
        sets: Option<usize>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for report.csv (defaults to the artifact dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Numerically verify the spectral, tail, alignment and ranking claims.
    Verify {
        #[arg(long, default_value = "all")]
        check: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the results as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Aggregate evaluation reports from multiple run directories.
    Report {
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Optional directory for plot-data CSVs.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Ingest { path, format } => commands::ingest(&path, &format),
        Command::Gen {
            out,
            format,
            nodes,
            edges,
            members,
            classes,
            dim,
            homophily,
            noise,
            separation,
            seed,
        } => commands::gen(commands::GenArgs {
            out,
            format,
            nodes,
            edges,
            members,
            classes,
            dim,
            homophily,
            noise,
            separation,
            seed: resolve_seed(seed),
        }),
        Command::Condense {
            data,
            format,
            config,
            ratio,
            lambda,
            k_override,
            epochs,
            seed,
            out,
            sets,
        } => commands::condense(commands::CondenseArgs {
            data,
            format,
            config,
            ratio,
            lambda,
            k_override,
            epochs,
            seed,
            out,
            sets,
            env_seed: env_seed(),
        }),
        Command::Baseline {
            data,
            format,
            method,
            ratio,
            lambda,
            seed,
            out,
            sets,
        } => commands::baseline(commands::BaselineArgs {
            data,
            format,
            method,
            ratio,
            lambda,
            seed: resolve_seed(seed),
            out,
            sets,
        }),
        Command::Evaluate {
            condensed,
            data,
            format,
            full,
            repeats,
            sets,
            jobs,
            seed,
            out,
        } => commands::evaluate(commands::EvaluateArgs {
            condensed,
            data,
            format,
            full,
            repeats,
            sets,
            jobs: jobs.max(1),
            seed: resolve_seed(seed),
            out,
        }),
        Command::Verify { check, seed, json } => {
            commands::verify(&check, resolve_seed(seed), json.as_deref())
        }
        Command::Report { dirs, out, plot_data } => {
            commands::report(&dirs, &out, plot_data.as_deref())
        }
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(commands::classify_error(&err));
        }
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("HYPERCONDENSE_SEED").ok().and_then(|v| v.parse().ok())
}

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(env_seed).unwrap_or(0)
}
