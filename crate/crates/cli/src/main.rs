//! `dpca`: PCA on decomposable Gaussian graphical models from the command
//! line. Four workflows: synthetic data generation, eigenpair computation,
//! sliding-window eigenvalue tracking, and residual-norm anomaly detection.
//!
//! All outputs are deterministic given the inputs and `--seed`; floats are
//! printed with 17 significant digits so files round-trip exactly. Errors go
//! to stderr as a single `error: ...` line with a nonzero exit status.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dpca", version, about = "PCA on decomposable Gaussian graphical models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic graph + samples + ground-truth manifest.
    Gen {
        /// Preset: paper-tracking, two-clique-toy, or anomaly.
        #[arg(long)]
        preset: String,
        /// Seed for the generator; same seed gives byte-identical files.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (graph.json, samples.csv, manifest.json).
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the smallest eigenpairs of the fitted concentration.
    Eig {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Number of eigenpairs.
        #[arg(long, default_value_t = 1)]
        components: usize,
        /// Bisection tolerance.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Also run a dense eigendecomposition and report deltas.
        #[arg(long)]
        oracle: bool,
        /// Subtract per-column sample means before fitting.
        #[arg(long)]
        center: bool,
        /// Write the report as CSV in addition to the console summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sliding-window minimal-eigenvalue trace.
    Track {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Samples per window.
        #[arg(long)]
        window: usize,
        /// Samples shared between consecutive windows.
        #[arg(long, default_value_t = 0)]
        overlap: usize,
        /// Bisection tolerance.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Warm-start half-width around the previous estimate.
        #[arg(long, default_value_t = 0.1)]
        warm_margin: f64,
        /// Add a per-window |lambda - dense oracle| column.
        #[arg(long)]
        oracle: bool,
        /// Add per-iteration probed-midpoint columns.
        #[arg(long)]
        iters: bool,
        #[arg(long)]
        center: bool,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Residual-norm anomaly scores and flagged sample indices.
    Detect {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Principal-subspace dimension.
        #[arg(long, default_value_t = 1)]
        components: usize,
        /// Additional graph specs to score side by side.
        #[arg(long)]
        compare: Vec<PathBuf>,
        #[arg(long)]
        center: bool,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// `DPCA_THREADS` caps internal parallelism. The current implementation is
/// sequential, so the value is validated but otherwise inert.
fn check_threads() -> anyhow::Result<()> {
    if let Ok(value) = std::env::var("DPCA_THREADS") {
        let parsed: usize = value
            .parse()
            .map_err(|_| anyhow::anyhow!("DPCA_THREADS must be a positive integer, got '{value}'"))?;
        if parsed == 0 {
            anyhow::bail!("DPCA_THREADS must be a positive integer, got '0'");
        }
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    check_threads()?;
    match cli.command {
        Command::Gen { preset, seed, out } => commands::cmd_gen(&preset, seed, &out),
        Command::Eig {
            graph,
            data,
            components,
            tol,
            oracle,
            center,
            out,
        } => commands::cmd_eig(&graph, &data, components, tol, oracle, center, out.as_deref()),
        Command::Track {
            graph,
            data,
            window,
            overlap,
            tol,
            warm_margin,
            oracle,
            iters,
            center,
            out,
        } => commands::cmd_track(
            &graph,
            &data,
            window,
            overlap,
            tol,
            warm_margin,
            oracle,
            iters,
            center,
            out.as_deref(),
        ),
        Command::Detect {
            graph,
            data,
            components,
            compare,
            center,
            out,
        } => commands::cmd_detect(&graph, &data, components, &compare, center, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // single line, deepest cause appended for machine parsing
            let mut msg = err.to_string().replace('\n', " ");
            if let Some(cause) = err.chain().nth(1) {
                msg += &format!(": {}", cause.to_string().replace('\n', " "));
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
