//! HTTP side of the verifiable SLA pipeline: the evidence store server and
//! its blocking client, active and passive monitor processes, the dummy
//! target service, an open-loop load generator and the live experiment
//! runner.

pub mod client;
pub mod loadgen;
pub mod matrix;
pub mod monitor;
pub mod server;
pub mod target;
pub mod wire;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Store(#[from] vsla_core::store::StoreError),
    #[error(transparent)]
    Monitor(#[from] vsla_core::monitor::MonitorError),
    #[error("bench: {0}")]
    Bench(String),
}
