use std::fs::File;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use vsla_core::bench::{emit_plots, write_csv, ExperimentPlan};
use vsla_net::matrix::run_matrix;

/// Batch-size by request-rate experiment matrix and its report.
#[derive(Parser)]
#[command(name = "bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a plan and write one CSV row per cell.
    Run {
        /// Plan file (YAML or JSON), or `defaults`.
        #[arg(long, default_value = "defaults")]
        plan: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the latency heatmap and verification-time series.
    Plots {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { plan, out } => {
            let plan = ExperimentPlan::load(&plan)?;
            let total = plan.cells().len();
            let mut done = 0;
            let results = run_matrix(&plan, |r| {
                done += 1;
                match &r.error {
                    None => eprintln!(
                        "[{done}/{total}] batch {} at {} rps: p50 {:.2} ms, p95 {:.2} ms, {} batches",
                        r.batch_size, r.rps, r.p50_ms, r.p95_ms, r.batches_anchored
                    ),
                    Some(e) => eprintln!("[{done}/{total}] batch {} at {} rps failed: {e}", r.batch_size, r.rps),
                }
            });
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_csv(&results, file)?;
        }
        Command::Plots { input, out } => {
            let summary = emit_plots(&input, &out)?;
            print!("{}", summary.heatmap_text);
            eprintln!("{} cells; report written to {}", summary.cells, out.display());
        }
    }
    Ok(())
}
