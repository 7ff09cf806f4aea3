use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use vsla_core::engine::{Engine, ProofPolicy, ReexecBackend, Strategy};
use vsla_core::evidence::KeyId;
use vsla_net::client::StoreClient;

/// SLA evaluation engine: evaluates one anchored batch against a clause,
/// stores and anchors the resulting claim.
#[derive(Parser)]
#[command(name = "see", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    /// Signed re-execution of the compliance program.
    Reexec,
}

#[derive(Clone, Copy)]
struct AnchorRef {
    monitor: KeyId,
    batch_seq: u64,
}

impl FromStr for AnchorRef {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (monitor, seq) = s.split_once(':').ok_or_else(|| anyhow!("expected <monitor>:<seq>"))?;
        Ok(Self {
            monitor: monitor.parse().map_err(|e| anyhow!("monitor id: {e}"))?,
            batch_seq: seq.parse().context("batch sequence number")?,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    Evaluate {
        /// `<monitor id>:<batch seq>`.
        #[arg(long)]
        anchor: AnchorRef,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        clause: String,
        #[arg(long, value_parser = Strategy::from_str)]
        strategy: Strategy,
        #[arg(long, value_enum, default_value = "reexec")]
        backend: Backend,
        /// Evidence store and registry base URL.
        #[arg(long, default_value = "http://127.0.0.1:7700")]
        store: String,
        #[arg(long)]
        engine_key: PathBuf,
        /// Emit a claim only when the clause is violated.
        #[arg(long)]
        only_violations: bool,
        /// Also write the claim here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    vsla_cli::init_tracing();
    let Command::Evaluate {
        anchor,
        spec,
        clause,
        strategy,
        backend: Backend::Reexec,
        store,
        engine_key,
        only_violations,
        out,
    } = Cli::parse().command;
    let spec = vsla_cli::load_spec(&spec)?;
    let client = StoreClient::new(&store)?;
    let backend = ReexecBackend::new(vsla_cli::read_key(&engine_key)?);
    let engine = Engine::new(&client, &client, &backend);
    let record = engine.lookup_anchor(&anchor.monitor, anchor.batch_seq)?;
    let policy = if only_violations {
        ProofPolicy::OnViolation
    } else {
        ProofPolicy::Always
    };
    match engine.run_with_policy(&record, &spec, &clause, strategy, policy)? {
        Some(claim) => {
            if let Some(out) = out {
                vsla_cli::write_json(&out, &claim)?;
            }
            vsla_cli::print_json(&claim)
        }
        None => {
            eprintln!("clause {clause} holds over batch {}; no claim emitted", anchor.batch_seq);
            Ok(())
        }
    }
}
