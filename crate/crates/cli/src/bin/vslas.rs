use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use vsla_core::vslas::compile_predicate;

/// Compile SLO documents with a verification section into predicates.
#[derive(Parser)]
#[command(name = "vslas", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one compiled predicate per clause as a JSON array.
    Compile {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    let Command::Compile { spec, out } = Cli::parse().command;
    let spec = vsla_cli::load_spec(&spec)?;
    let compiled = spec
        .clauses
        .iter()
        .map(|c| compile_predicate(c, &spec.verification.aggregation_engine))
        .collect::<Result<Vec<_>, _>>()?;
    vsla_cli::write_json(&out, &compiled)?;
    eprintln!("{} predicates, spec digest {}", compiled.len(), spec.spec_digest);
    Ok(())
}
