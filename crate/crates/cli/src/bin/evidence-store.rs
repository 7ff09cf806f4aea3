use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Result;
use clap::{Parser, Subcommand};
use vsla_core::clock::SystemClock;
use vsla_core::evidence::PublicKey;
use vsla_core::store::{ContentStore, DirCas, Registry, SlaParties};
use vsla_net::server::{spawn_store, StoreState};

/// Evidence store: content-addressed objects plus the anchoring registry.
#[derive(Parser)]
#[command(name = "evidence-store", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the store over HTTP until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7700")]
        listen: SocketAddr,
        /// Directory holding `cas/` objects and `registry.jsonl`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        provider_pubkey: PublicKey,
        #[arg(long)]
        consumer_pubkey: PublicKey,
        /// Defaults to the simulated manufacturer.
        #[arg(long)]
        manufacturer_root: Option<PublicKey>,
        /// Key signing `/snapshot` responses.
        #[arg(long)]
        operator_key: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    vsla_cli::init_tracing();
    let Command::Serve {
        listen,
        data,
        provider_pubkey,
        consumer_pubkey,
        manufacturer_root,
        operator_key,
    } = Cli::parse().command;

    let cas: Arc<dyn ContentStore> = Arc::new(DirCas::open(data.join("cas"))?);
    let registry = Registry::open(
        data.join("registry.jsonl"),
        SlaParties {
            provider: provider_pubkey,
            consumer: consumer_pubkey,
        },
        vsla_cli::manufacturer_root(manufacturer_root),
        cas.clone(),
        Arc::new(SystemClock),
    )?;
    let operator = operator_key.as_deref().map(vsla_cli::read_key).transpose()?;
    let state = Arc::new(StoreState {
        registry: Arc::new(registry),
        cas,
        operator,
    });

    let runtime = vsla_cli::runtime()?;
    let mut server = spawn_store(runtime.handle(), listen, state)?;
    tracing::info!("evidence store listening on {}", server.url());
    vsla_cli::wait_for_ctrl_c(&runtime)?;
    server.stop();
    Ok(())
}
