//! Trusted monitor core running in a simulated enclave.
//!
//! The enclave is a process-local key vault. Its "hardware" attestation is a
//! signature by a software manufacturer root over
//! `(mrtd, monitor public key, nonce)`, where `mrtd` is the keccak256 of the
//! monitor program identifier followed by the canonical config encoding.
//! The network-facing parts (probing, proxying, the attestation endpoint)
//! live in the `vsla-net` crate and drive this state machine.

use std::sync::Arc;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{
    batch_commitment_bytes, keccak256, keccak256_parts, leaf_digest, verify_sig, Digest, EvaluationWindow,
    EvidenceError, FieldWriter, KeyId, Measurement, ProbeKind, PublicKey, Signature, SignedMeasurement, SigningKey,
};
use crate::merkle::{compute_root, MerkleError};
use crate::store::{
    AnchorRecord, BatchManifest, ContentId, ContentStore, MonitorRecord, MonitorStatus, Party, RegistryView,
    StoreError,
};

pub const DEFAULT_TIMEOUT_MS: u64 = 2000;

/// Identifier of the monitor program shipped by this crate (stand-in for the
/// enclave image hash).
pub fn monitor_program_id() -> Digest {
    keccak256(concat!("vsla-monitor-core/", env!("CARGO_PKG_VERSION")).as_bytes())
}

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("missing {0} co-signature on monitor config")]
    MissingCoSignature(Party),
    #[error("{0} co-signature on monitor config does not verify")]
    InvalidCoSignature(Party),
    #[error("invalid monitor config: {0}")]
    InvalidConfig(String),
    #[error("monitor config is immutable after boot")]
    ConfigImmutable,
    #[error("operation requires a {expected} monitor, this one is {actual}")]
    WrongKind { expected: ProbeKind, actual: ProbeKind },
    #[error("cannot seal an empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Merkle(#[from] MerkleError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

/// Co-signed monitor configuration produced during SLA negotiation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub target_endpoints: Vec<String>,
    /// Probe interval for active monitors.
    pub interval_ms: u64,
    pub batch_size: u64,
    pub schema_version: String,
    pub monitor_kind: ProbeKind,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// Longest a passive monitor may go between batches.
    #[serde(default)]
    pub max_window_ms: Option<u64>,
    pub provider_pubkey: PublicKey,
    pub consumer_pubkey: PublicKey,
    #[serde(default)]
    pub provider_sig: Option<Signature>,
    #[serde(default)]
    pub consumer_sig: Option<Signature>,
}

impl MonitorConfig {
    /// Encoding covered by both co-signatures and by mrtd.
    pub fn canonical_encoding(&self) -> Vec<u8> {
        let mut w = FieldWriter::new()
            .str("vsla.monitor-config.v1")
            .u64(self.target_endpoints.len() as u64);
        for endpoint in &self.target_endpoints {
            w = w.str(endpoint);
        }
        w.u64(self.interval_ms)
            .u64(self.batch_size)
            .str(&self.schema_version)
            .str(&self.monitor_kind.to_string())
            .u64(self.timeout_ms)
            .u64(self.max_window_ms.unwrap_or(0))
            .bytes(self.provider_pubkey.as_bytes())
            .bytes(self.consumer_pubkey.as_bytes())
            .finish()
    }

    pub fn sign_as(&mut self, party: Party, key: &SigningKey) {
        let sig = key.sign(&self.canonical_encoding());
        match party {
            Party::Provider => self.provider_sig = Some(sig),
            Party::Consumer => self.consumer_sig = Some(sig),
        }
    }

    pub fn validate(&self) -> Result<(), MonitorError> {
        if self.batch_size == 0 {
            return Err(MonitorError::InvalidConfig("batch_size must be positive".into()));
        }
        if self.schema_version.is_empty() {
            return Err(MonitorError::InvalidConfig("schema_version is empty".into()));
        }
        if self.monitor_kind == ProbeKind::Active {
            if self.interval_ms == 0 {
                return Err(MonitorError::InvalidConfig("active monitors need interval_ms > 0".into()));
            }
            if self.target_endpoints.is_empty() {
                return Err(MonitorError::InvalidConfig("active monitors need a target endpoint".into()));
            }
        }
        Ok(())
    }

    pub fn verify_cosignatures(&self) -> Result<(), MonitorError> {
        let payload = self.canonical_encoding();
        for (party, sig, key) in [
            (Party::Provider, &self.provider_sig, &self.provider_pubkey),
            (Party::Consumer, &self.consumer_sig, &self.consumer_pubkey),
        ] {
            let sig = sig.as_ref().ok_or(MonitorError::MissingCoSignature(party))?;
            if !verify_sig(&payload, sig, key) {
                return Err(MonitorError::InvalidCoSignature(party));
            }
        }
        Ok(())
    }

    /// Time one batch is expected to take to fill. Heartbeat alerts fire
    /// after twice this without a new anchor.
    pub fn expected_batch_duration_ms(&self) -> u64 {
        match (self.monitor_kind, self.max_window_ms) {
            (ProbeKind::Passive, Some(window)) => window,
            _ => self.batch_size.saturating_mul(self.interval_ms),
        }
    }
}

pub fn compute_mrtd(program_id: &Digest, config: &MonitorConfig) -> Digest {
    keccak256_parts(&[program_id.as_bytes(), &config.canonical_encoding()])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestationQuote {
    pub mrtd: Digest,
    pub monitor_pubkey: PublicKey,
    #[serde(with = "hex::serde")]
    pub nonce: [u8; 32],
    pub manufacturer_sig: Signature,
}

impl AttestationQuote {
    pub fn signed_bytes(mrtd: &Digest, monitor_pubkey: &PublicKey, nonce: &[u8; 32]) -> Vec<u8> {
        FieldWriter::new()
            .str("vsla.quote.v1")
            .bytes(mrtd.as_bytes())
            .bytes(monitor_pubkey.as_bytes())
            .bytes(nonce)
            .finish()
    }

    pub fn verify(&self, manufacturer_root: &PublicKey) -> bool {
        verify_sig(
            &Self::signed_bytes(&self.mrtd, &self.monitor_pubkey, &self.nonce),
            &self.manufacturer_sig,
            manufacturer_root,
        )
    }
}

/// Software stand-in for the TEE vendor's attestation root.
#[derive(Debug, Clone)]
pub struct Manufacturer {
    key: SigningKey,
}

impl Manufacturer {
    /// Deterministic root shared by every local deployment.
    pub fn fixture() -> Self {
        Self::from_key(SigningKey::from_seed(
            *keccak256(b"vsla simulated manufacturer root").as_bytes(),
        ))
    }

    pub fn from_key(key: SigningKey) -> Self {
        Self { key }
    }

    pub fn root_public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    fn issue_quote(&self, mrtd: Digest, monitor_pubkey: PublicKey, nonce: [u8; 32]) -> AttestationQuote {
        let manufacturer_sig = self.key.sign(&AttestationQuote::signed_bytes(&mrtd, &monitor_pubkey, &nonce));
        AttestationQuote {
            mrtd,
            monitor_pubkey,
            nonce,
            manufacturer_sig,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeOutcome {
    Response { status: u16, latency_ms: u32 },
    TransportFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedBatch {
    pub monitor_id: KeyId,
    pub batch_seq: u64,
    pub root: Digest,
    pub window: EvaluationWindow,
    pub count: u64,
    pub root_signature: Signature,
    pub measurement_cids: Vec<ContentId>,
    pub manifest_cid: ContentId,
}

impl SealedBatch {
    pub fn anchor_record(&self) -> AnchorRecord {
        AnchorRecord {
            monitor_id: self.monitor_id,
            batch_seq: self.batch_seq,
            root: self.root,
            window: self.window,
            count: self.count,
            manifest_cid: self.manifest_cid,
            root_signature: self.root_signature,
            anchored_at_ms: 0,
        }
    }
}

/// A booted monitor instance. One writer: callers serialize access.
#[derive(Debug)]
pub struct Monitor {
    config: MonitorConfig,
    program_id: Digest,
    mrtd: Digest,
    key: SigningKey,
    manufacturer: Arc<Manufacturer>,
    boot_quote: AttestationQuote,
    next_sequence: u64,
    next_batch_seq: u64,
    last_timestamp_ms: u64,
    buffer: Vec<SignedMeasurement>,
}

impl Monitor {
    /// Refuses to start unless both parties co-signed the config; generates
    /// a fresh enclave key and returns the boot quote binding it to mrtd.
    pub fn boot<R: RngCore + CryptoRng>(
        config: MonitorConfig,
        program_id: Digest,
        manufacturer: Arc<Manufacturer>,
        rng: &mut R,
    ) -> Result<(Self, AttestationQuote), MonitorError> {
        config.verify_cosignatures()?;
        config.validate()?;
        let key = SigningKey::generate(rng);
        let mrtd = compute_mrtd(&program_id, &config);
        let mut nonce = [0u8; 32];
        rng.fill_bytes(&mut nonce);
        let boot_quote = manufacturer.issue_quote(mrtd, key.public_key(), nonce);
        let monitor = Self {
            config,
            program_id,
            mrtd,
            key,
            manufacturer,
            boot_quote: boot_quote.clone(),
            next_sequence: 0,
            next_batch_seq: 0,
            last_timestamp_ms: 0,
            buffer: Vec::new(),
        };
        Ok((monitor, boot_quote))
    }

    pub fn id(&self) -> KeyId {
        self.key.public_key().id()
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn program_id(&self) -> Digest {
        self.program_id
    }

    pub fn mrtd(&self) -> Digest {
        self.mrtd
    }

    pub fn boot_quote(&self) -> &AttestationQuote {
        &self.boot_quote
    }

    /// Fresh quote echoing a verifier-supplied nonce.
    pub fn attest(&self, nonce: [u8; 32]) -> AttestationQuote {
        self.manufacturer.issue_quote(self.mrtd, self.public_key(), nonce)
    }

    /// Amendments need a new monitor instance.
    pub fn apply_config(&mut self, _config: MonitorConfig) -> Result<(), MonitorError> {
        Err(MonitorError::ConfigImmutable)
    }

    pub fn registration_record(&self) -> MonitorRecord {
        MonitorRecord {
            monitor_id: self.id(),
            pubkey: self.public_key(),
            quote: self.boot_quote.clone(),
            program_id: self.program_id,
            config: self.config.clone(),
            status: MonitorStatus::Active,
            registered_at_ms: 0,
        }
    }

    /// Active probe result. Transport failures become status 0 with the
    /// configured timeout as latency.
    pub fn record_probe(&mut self, timestamp_ms: u64, outcome: ProbeOutcome) -> Result<SignedMeasurement, MonitorError> {
        self.require_kind(ProbeKind::Active)?;
        let (status, latency) = match outcome {
            ProbeOutcome::Response { status, latency_ms } => (status, latency_ms),
            ProbeOutcome::TransportFailure => (0, u32::try_from(self.config.timeout_ms).unwrap_or(u32::MAX)),
        };
        self.push(timestamp_ms, latency, status)
    }

    /// Proxied request observed by a passive monitor. Upstream transport
    /// failures are reported with status 0.
    pub fn observe(&mut self, timestamp_ms: u64, elapsed_ms: u32, status: u16) -> Result<SignedMeasurement, MonitorError> {
        self.require_kind(ProbeKind::Passive)?;
        self.push(timestamp_ms, elapsed_ms, status)
    }

    fn require_kind(&self, expected: ProbeKind) -> Result<(), MonitorError> {
        if self.config.monitor_kind != expected {
            return Err(MonitorError::WrongKind {
                expected,
                actual: self.config.monitor_kind,
            });
        }
        Ok(())
    }

    fn push(&mut self, timestamp_ms: u64, latency_ms: u32, status_code: u16) -> Result<SignedMeasurement, MonitorError> {
        // Wall clock may step backwards; keep per-monitor timestamps monotone.
        let timestamp_ms = timestamp_ms.max(self.last_timestamp_ms);
        let measurement = Measurement {
            monitor_id: self.id(),
            sequence_no: self.next_sequence,
            timestamp_ms,
            latency_ms,
            status_code,
            probe_kind: self.config.monitor_kind,
            schema_version: self.config.schema_version.clone(),
        };
        measurement.validate()?;
        let signed = SignedMeasurement::sign(measurement, &self.key);
        self.next_sequence += 1;
        self.last_timestamp_ms = timestamp_ms;
        self.buffer.push(signed.clone());
        Ok(signed)
    }

    /// Fault injection: buffers a measurement produced elsewhere, as a
    /// compromised host feeding the enclave could.
    pub fn inject_unchecked(&mut self, measurement: SignedMeasurement) {
        self.buffer.push(measurement);
    }

    pub fn pending(&self) -> usize {
        self.buffer.len()
    }

    pub fn batch_ready(&self) -> bool {
        self.buffer.len() as u64 >= self.config.batch_size
    }

    pub fn next_batch_seq(&self) -> u64 {
        self.next_batch_seq
    }

    /// Commits the buffered measurements: stores each one and the manifest
    /// in `cas`, signs the Merkle root and clears the buffer. The buffer is
    /// left untouched if storing fails.
    pub fn seal(&mut self, cas: &dyn ContentStore) -> Result<SealedBatch, MonitorError> {
        if self.buffer.is_empty() {
            return Err(MonitorError::EmptyBatch);
        }
        let leaves: Vec<Digest> = self.buffer.iter().map(|m| leaf_digest(&m.measurement)).collect();
        let root = compute_root(&leaves)?;
        let measurement_cids = self
            .buffer
            .iter()
            .map(|m| cas.put(&m.to_object_bytes()))
            .collect::<Result<Vec<_>, _>>()?;
        let window = EvaluationWindow::new(
            self.buffer[0].measurement.timestamp_ms,
            self.buffer[self.buffer.len() - 1].measurement.timestamp_ms,
        )?;
        let manifest = BatchManifest {
            monitor_id: self.id(),
            batch_seq: self.next_batch_seq,
            measurement_cids: measurement_cids.clone(),
            window,
            schema_version: self.config.schema_version.clone(),
        };
        let manifest_cid = cas.put(&manifest.to_bytes())?;
        let count = self.buffer.len() as u64;
        let root_signature = self
            .key
            .sign(&batch_commitment_bytes(&self.id(), self.next_batch_seq, &root, &window, count));
        let sealed = SealedBatch {
            monitor_id: self.id(),
            batch_seq: self.next_batch_seq,
            root,
            window,
            count,
            root_signature,
            measurement_cids,
            manifest_cid,
        };
        self.next_batch_seq += 1;
        self.buffer.clear();
        Ok(sealed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heartbeat {
    Healthy,
    Alert,
}

/// Alert once more than two expected batch durations have passed since the
/// last anchored batch ended (or since registration, before any batch).
pub fn heartbeat_status(registry: &dyn RegistryView, monitor_id: &KeyId, now_ms: u64) -> Result<Heartbeat, StoreError> {
    let record = registry.monitor(monitor_id)?;
    let last = registry
        .audit_trail(monitor_id)?
        .last()
        .map_or(record.registered_at_ms, |a| a.window.t_end_ms);
    let allowance = record.config.expected_batch_duration_ms().saturating_mul(2);
    Ok(if now_ms.saturating_sub(last) > allowance {
        Heartbeat::Alert
    } else {
        Heartbeat::Healthy
    })
}
