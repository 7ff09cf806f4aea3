use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use vsla_core::engine::ReexecBackend;
use vsla_core::evidence::PublicKey;
use vsla_core::store::{ContentId, RegistrySnapshot, RegistryView};
use vsla_core::verifier::Verifier;
use vsla_net::client::StoreClient;

/// Independent claim verifier.
#[derive(Parser)]
#[command(name = "verify", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a JSON verification report; exit 0 if accepted, 1 otherwise.
    Claim {
        #[arg(long)]
        claim_cid: ContentId,
        #[arg(long)]
        spec: PathBuf,
        /// Check anchors against this snapshot instead of the live registry.
        #[arg(long)]
        registry_snapshot: Option<PathBuf>,
        /// Required signer of the snapshot, if any.
        #[arg(long, requires = "registry_snapshot")]
        snapshot_signer: Option<PublicKey>,
        /// Evidence store (and live registry) base URL.
        #[arg(long, default_value = "http://127.0.0.1:7700")]
        store: String,
        /// Public key of the evaluation engine whose artifacts are trusted.
        #[arg(long)]
        engine_pubkey: PublicKey,
        #[arg(long)]
        manufacturer_root: Option<PublicKey>,
    },
}

fn run() -> Result<bool> {
    let Command::Claim {
        claim_cid,
        spec,
        registry_snapshot,
        snapshot_signer,
        store,
        engine_pubkey,
        manufacturer_root,
    } = Cli::parse().command;
    let spec = vsla_cli::load_spec(&spec)?;
    let client = StoreClient::new(&store)?;
    let snapshot = registry_snapshot
        .as_deref()
        .map(vsla_cli::read_json::<RegistrySnapshot>)
        .transpose()?;
    if let (Some(snapshot), Some(signer)) = (&snapshot, &snapshot_signer) {
        snapshot.verify_signature(signer).context("registry snapshot")?;
    }
    let registry: &dyn RegistryView = match &snapshot {
        Some(s) => s,
        None => &client,
    };
    let backend = ReexecBackend::verifier(engine_pubkey);
    let verifier = Verifier::new(registry, Some(&client), &backend, vsla_cli::manufacturer_root(manufacturer_root));
    let report = verifier.verify_cid(&claim_cid, &spec)?;
    vsla_cli::print_json(&report)?;
    Ok(report.accepted())
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
