//! Helpers shared by the command-line tools.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::Serialize;
use vsla_core::evidence::{PublicKey, SigningKey};
use vsla_core::monitor::Manufacturer;
use vsla_core::store::Party;
use vsla_core::vslas::{parse_spec, VslaSpec};

pub fn init_tracing() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
}

/// Key files hold the 32-byte secret seed as hex.
pub fn read_key(path: &Path) -> Result<SigningKey> {
    let text = fs::read_to_string(path).with_context(|| format!("reading key {}", path.display()))?;
    SigningKey::from_hex(&text).with_context(|| format!("parsing key {}", path.display()))
}

pub fn write_key(path: &Path, key: &SigningKey) -> Result<()> {
    fs::write(path, format!("{}\n", key.to_hex())).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn load_spec(path: &Path) -> Result<VslaSpec> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_spec(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Root key of the simulated manufacturer unless one is given.
pub fn manufacturer_root(given: Option<PublicKey>) -> PublicKey {
    given.unwrap_or_else(|| Manufacturer::fixture().root_public_key())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PartyArg {
    Provider,
    Consumer,
}

impl From<PartyArg> for Party {
    fn from(p: PartyArg) -> Self {
        match p {
            PartyArg::Provider => Party::Provider,
            PartyArg::Consumer => Party::Consumer,
        }
    }
}

/// Runtime for the HTTP services; the calling thread stays outside it so
/// blocking clients can be used there.
pub fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

pub fn wait_for_ctrl_c(runtime: &tokio::runtime::Runtime) -> Result<()> {
    runtime.block_on(tokio::signal::ctrl_c())?;
    Ok(())
}
