use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::rngs::OsRng;
use serde_json::json;
use vsla_core::clock::SystemClock;
use vsla_core::evidence::{ProbeKind, PublicKey, SigningKey, SCHEMA_VERSION};
use vsla_core::monitor::{monitor_program_id, Manufacturer, Monitor, MonitorConfig, DEFAULT_TIMEOUT_MS};
use vsla_core::store::EvidenceRegistry;
use vsla_net::client::StoreClient;
use vsla_net::monitor::{run_active, run_passive, MonitorService};

/// Simulated-TEE monitor: probes or proxies a target, seals signed batches
/// into the evidence store and anchors them in the registry.
#[derive(Parser)]
#[command(name = "monitor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Write a fresh party key (hex seed) and print its public key.
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write an unsigned monitor configuration.
    InitConfig {
        #[arg(long)]
        target: String,
        #[arg(long, value_parser = ProbeKind::from_str)]
        kind: ProbeKind,
        #[arg(long, default_value_t = 512)]
        batch_size: u64,
        #[arg(long, default_value_t = 1000)]
        interval_ms: u64,
        #[arg(long, default_value_t = DEFAULT_TIMEOUT_MS)]
        timeout_ms: u64,
        /// Passive monitors seal a partial batch once it is this old.
        #[arg(long)]
        max_window_ms: Option<u64>,
        #[arg(long)]
        provider_pubkey: PublicKey,
        #[arg(long)]
        consumer_pubkey: PublicKey,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add one party's signature to a configuration, in place.
    SignConfig {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long, value_enum)]
        party: vsla_cli::PartyArg,
    },
    /// Boot, register with both parties' co-signatures and run until
    /// interrupted.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = ProbeKind::from_str)]
        kind: ProbeKind,
        /// Evidence store base URL.
        #[arg(long)]
        store: String,
        /// Registry base URL.
        #[arg(long)]
        registry: String,
        #[arg(long)]
        provider_key: PathBuf,
        #[arg(long)]
        consumer_key: PathBuf,
        /// `/attestation` (and, for passive monitors, the proxy) listen address.
        #[arg(long, default_value = "127.0.0.1:7800")]
        listen: SocketAddr,
        /// Proxy upstream for passive monitors; defaults to the first target.
        #[arg(long)]
        upstream: Option<String>,
    },
}

fn main() -> Result<()> {
    vsla_cli::init_tracing();
    match Cli::parse().command {
        Command::Keygen { out } => {
            let key = SigningKey::generate(&mut OsRng);
            vsla_cli::write_key(&out, &key)?;
            println!("{}", key.public_key());
        }
        Command::InitConfig {
            target,
            kind,
            batch_size,
            interval_ms,
            timeout_ms,
            max_window_ms,
            provider_pubkey,
            consumer_pubkey,
            out,
        } => {
            let config = MonitorConfig {
                target_endpoints: vec![target],
                interval_ms,
                batch_size,
                schema_version: SCHEMA_VERSION.into(),
                monitor_kind: kind,
                timeout_ms,
                max_window_ms,
                provider_pubkey,
                consumer_pubkey,
                provider_sig: None,
                consumer_sig: None,
            };
            config.validate()?;
            vsla_cli::write_json(&out, &config)?;
        }
        Command::SignConfig { config: path, key, party } => {
            let mut config: MonitorConfig = vsla_cli::read_json(&path)?;
            config.sign_as(party.into(), &vsla_cli::read_key(&key)?);
            vsla_cli::write_json(&path, &config)?;
        }
        Command::Run {
            config,
            kind,
            store,
            registry,
            provider_key,
            consumer_key,
            listen,
            upstream,
        } => run(config, kind, store, registry, provider_key, consumer_key, listen, upstream)?,
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: PathBuf,
    kind: ProbeKind,
    store: String,
    registry: String,
    provider_key: PathBuf,
    consumer_key: PathBuf,
    listen: SocketAddr,
    upstream: Option<String>,
) -> Result<()> {
    let config: MonitorConfig = vsla_cli::read_json(&config)?;
    if config.monitor_kind != kind {
        bail!("configuration is for a {} monitor", config.monitor_kind);
    }
    let target = config
        .target_endpoints
        .first()
        .cloned()
        .context("configuration lists no target endpoint")?;
    let interval = Duration::from_millis(config.interval_ms);
    let timeout = Duration::from_millis(config.timeout_ms);
    let max_window = config.max_window_ms.map(Duration::from_millis);

    let (monitor, _) = Monitor::boot(config, monitor_program_id(), Arc::new(Manufacturer::fixture()), &mut OsRng)?;
    let cas = Arc::new(StoreClient::new(&store)?);
    let registry = Arc::new(StoreClient::new(&registry)?);
    let record = monitor.registration_record();
    let payload = record.registration_payload();
    let provider = vsla_cli::read_key(&provider_key)?;
    let consumer = vsla_cli::read_key(&consumer_key)?;
    registry.register_monitor(record, Some(provider.sign(&payload)), Some(consumer.sign(&payload)))?;

    let runtime = vsla_cli::runtime()?;
    let service = MonitorService::new(monitor, cas, registry, Arc::new(SystemClock));
    let mut handle = match kind {
        ProbeKind::Active => run_active(runtime.handle(), service.clone(), target, interval, timeout, listen)?,
        ProbeKind::Passive => {
            run_passive(runtime.handle(), service.clone(), upstream.unwrap_or(target), max_window, listen)?
        }
    };
    vsla_cli::print_json(&json!({
        "monitor_id": service.id(),
        "kind": kind,
        "url": handle.url(),
    }))?;
    vsla_cli::wait_for_ctrl_c(&runtime)?;
    handle.shutdown(runtime.handle());
    if service.unanchored() > 0 {
        bail!("{} sealed batches were not anchored", service.unanchored());
    }
    Ok(())
}
