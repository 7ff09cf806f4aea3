//! Verifiable SLA evidence pipeline: signed measurements, Merkle batch
//! commitments, attested monitors, an evidence registry, SLA specifications
//! compiled to compliance predicates, claim generation and third-party
//! verification.

pub mod clock;
pub mod evidence;
pub mod merkle;
pub mod monitor;
pub mod store;
pub mod vslas;
pub mod engine;
pub mod verifier;
pub mod sim;
pub mod tamper;
pub mod bench;
