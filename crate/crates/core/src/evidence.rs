//! Canonical evidence types shared by monitors, the store, the evaluation
//! engine and verifiers.
//!
//! Everything that gets hashed or signed goes through a fixed binary
//! encoding: each field is written as a little-endian `u32` byte length
//! followed by the field bytes. Integers are written little-endian at their
//! natural width (`u64` sequence numbers and timestamps, `u32` latency,
//! `u16` status) and the probe kind as a single byte. JSON is only used for
//! human-facing documents (manifests, claims).

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, Verifier};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;
use tiny_keccak::{Hasher, Keccak};

/// Prefix byte for Merkle leaf hashes.
pub const LEAF_PREFIX: u8 = 0x00;
/// Prefix byte for Merkle internal node hashes.
pub const NODE_PREFIX: u8 = 0x01;

/// Schema version stamped on measurements produced by this crate.
pub const SCHEMA_VERSION: &str = "vsla-measurement/1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvidenceError {
    #[error("malformed key: {0}")]
    KeyFormat(String),
    #[error("malformed hex: {0}")]
    Hex(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error("invalid window: t_start {start} > t_end {end}")]
    InvalidWindow { start: u64, end: u64 },
    #[error("metric vector length mismatch: {latencies} latencies, {statuses} statuses")]
    LengthMismatch { latencies: usize, statuses: usize },
}

pub fn keccak256(data: &[u8]) -> Digest {
    keccak256_parts(&[data])
}

pub fn keccak256_parts(parts: &[&[u8]]) -> Digest {
    let mut hasher = Keccak::v256();
    for part in parts {
        hasher.update(part);
    }
    let mut out = [0u8; 32];
    hasher.finalize(&mut out);
    Digest(out)
}

fn decode_hex_array<const N: usize>(s: &str) -> Result<[u8; N], EvidenceError> {
    let s = s.strip_prefix("0x").unwrap_or(s);
    let bytes = hex::decode(s).map_err(|e| EvidenceError::Hex(e.to_string()))?;
    bytes
        .try_into()
        .map_err(|v: Vec<u8>| EvidenceError::Hex(format!("expected {N} bytes, got {}", v.len())))
}

macro_rules! hex_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(&self.to_string())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

/// 32-byte keccak256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest([u8; 32]);

impl Digest {
    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = EvidenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_hex_array(s).map(Self)
    }
}

hex_serde!(Digest);

/// 20-byte address derived from an Ed25519 public key
/// (last 20 bytes of its keccak256). Monitors are identified by the
/// address of their enclave key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyId([u8; 20]);

impl KeyId {
    pub fn of(key: &PublicKey) -> Self {
        let digest = keccak256(key.as_bytes());
        let mut out = [0u8; 20];
        out.copy_from_slice(&digest.as_bytes()[12..]);
        Self(out)
    }

    pub const fn from_bytes(bytes: [u8; 20]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({self})")
    }
}

impl FromStr for KeyId {
    type Err = EvidenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_hex_array(s).map(Self)
    }
}

hex_serde!(KeyId);

/// Ed25519 public key, validated on construction.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PublicKey(ed25519_dalek::VerifyingKey);

impl PublicKey {
    pub fn from_bytes(bytes: &[u8; 32]) -> Result<Self, EvidenceError> {
        ed25519_dalek::VerifyingKey::from_bytes(bytes)
            .map(Self)
            .map_err(|e| EvidenceError::KeyFormat(e.to_string()))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        self.0.as_bytes()
    }

    pub fn id(&self) -> KeyId {
        KeyId::of(self)
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.as_bytes()))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({self})")
    }
}

impl FromStr for PublicKey {
    type Err = EvidenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes: [u8; 32] = decode_hex_array(s).map_err(|e| EvidenceError::KeyFormat(e.to_string()))?;
        Self::from_bytes(&bytes)
    }
}

hex_serde!(PublicKey);

/// 64-byte Ed25519 signature.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature([u8; 64]);

impl Signature {
    pub const fn from_bytes(bytes: [u8; 64]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 64] {
        &self.0
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..8]))
    }
}

impl FromStr for Signature {
    type Err = EvidenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_hex_array(s).map(Self)
    }
}

hex_serde!(Signature);

/// Ed25519 signing key. Never serialized implicitly; use [`SigningKey::to_hex`]
/// for key files.
#[derive(Clone)]
pub struct SigningKey(ed25519_dalek::SigningKey);

impl SigningKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self(ed25519_dalek::SigningKey::generate(rng))
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self(ed25519_dalek::SigningKey::from_bytes(&seed))
    }

    pub fn from_hex(s: &str) -> Result<Self, EvidenceError> {
        let seed: [u8; 32] = decode_hex_array(s.trim()).map_err(|e| EvidenceError::KeyFormat(e.to_string()))?;
        Ok(Self::from_seed(seed))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0.to_bytes())
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.0.verifying_key())
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.0.sign(message).to_bytes())
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SigningKey({})", self.public_key().id())
    }
}

pub fn sign(encoding: &[u8], key: &SigningKey) -> Signature {
    key.sign(encoding)
}

pub fn verify_sig(encoding: &[u8], signature: &Signature, pubkey: &PublicKey) -> bool {
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    pubkey.0.verify(encoding, &sig).is_ok()
}

/// Length-prefixed field writer used by every canonical encoding.
#[derive(Default)]
pub(crate) struct FieldWriter {
    buf: Vec<u8>,
}

impl FieldWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(mut self, field: &[u8]) -> Self {
        let len = u32::try_from(field.len()).expect("field longer than u32::MAX");
        self.buf.extend_from_slice(&len.to_le_bytes());
        self.buf.extend_from_slice(field);
        self
    }

    pub fn str(self, field: &str) -> Self {
        self.bytes(field.as_bytes())
    }

    pub fn u64(self, v: u64) -> Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

struct FieldReader<'a> {
    buf: &'a [u8],
}

impl<'a> FieldReader<'a> {
    fn field(&mut self, name: &str) -> Result<&'a [u8], EvidenceError> {
        if self.buf.len() < 4 {
            return Err(EvidenceError::Decode(format!("truncated length prefix for {name}")));
        }
        let (len, rest) = self.buf.split_at(4);
        let len = u32::from_le_bytes(len.try_into().unwrap()) as usize;
        if rest.len() < len {
            return Err(EvidenceError::Decode(format!("truncated field {name}")));
        }
        let (field, rest) = rest.split_at(len);
        self.buf = rest;
        Ok(field)
    }

    fn fixed<const N: usize>(&mut self, name: &str) -> Result<[u8; N], EvidenceError> {
        let field = self.field(name)?;
        field
            .try_into()
            .map_err(|_| EvidenceError::Decode(format!("{name}: expected {N} bytes, got {}", field.len())))
    }

    fn string(&mut self, name: &str) -> Result<String, EvidenceError> {
        let field = self.field(name)?;
        String::from_utf8(field.to_vec()).map_err(|_| EvidenceError::Decode(format!("{name}: invalid utf-8")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Active,
    Passive,
}

impl ProbeKind {
    fn tag(self) -> u8 {
        match self {
            ProbeKind::Active => 0,
            ProbeKind::Passive => 1,
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::Active => "active",
            ProbeKind::Passive => "passive",
        })
    }
}

impl FromStr for ProbeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "active" => Ok(ProbeKind::Active),
            "passive" => Ok(ProbeKind::Passive),
            other => Err(format!("unknown probe kind {other:?}")),
        }
    }
}

/// One SLI sample. `status_code` 0 marks a transport failure.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Measurement {
    pub monitor_id: KeyId,
    pub sequence_no: u64,
    pub timestamp_ms: u64,
    pub latency_ms: u32,
    pub status_code: u16,
    pub probe_kind: ProbeKind,
    pub schema_version: String,
}

impl Measurement {
    pub fn validate(&self) -> Result<(), EvidenceError> {
        if self.timestamp_ms == 0 {
            return Err(EvidenceError::InvalidMeasurement("timestamp_ms must be nonzero".into()));
        }
        if self.schema_version.is_empty() {
            return Err(EvidenceError::InvalidMeasurement("schema_version is empty".into()));
        }
        Ok(())
    }

    pub fn canonical_encode(&self) -> Vec<u8> {
        canonical_encode(self)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EvidenceError> {
        let mut r = FieldReader { buf: bytes };
        let monitor_id: KeyId = r.string("monitor_id")?.parse()?;
        let sequence_no = u64::from_le_bytes(r.fixed("sequence_no")?);
        let timestamp_ms = u64::from_le_bytes(r.fixed("timestamp_ms")?);
        let latency_ms = u32::from_le_bytes(r.fixed("latency_ms")?);
        let status_code = u16::from_le_bytes(r.fixed("status_code")?);
        let probe_kind = match r.fixed::<1>("probe_kind")?[0] {
            0 => ProbeKind::Active,
            1 => ProbeKind::Passive,
            other => return Err(EvidenceError::Decode(format!("probe_kind: unknown tag {other}"))),
        };
        let schema_version = r.string("schema_version")?;
        if !r.buf.is_empty() {
            return Err(EvidenceError::Decode(format!("{} trailing bytes", r.buf.len())));
        }
        let m = Measurement {
            monitor_id,
            sequence_no,
            timestamp_ms,
            latency_ms,
            status_code,
            probe_kind,
            schema_version,
        };
        // Only encodings we would have produced are accepted.
        if canonical_encode(&m) != bytes {
            return Err(EvidenceError::Decode("monitor_id not in canonical form".into()));
        }
        Ok(m)
    }

    pub fn leaf_digest(&self) -> Digest {
        leaf_digest(self)
    }
}

/// Fixed field order: monitor_id, sequence_no, timestamp_ms, latency_ms,
/// status_code, probe_kind, schema_version.
pub fn canonical_encode(m: &Measurement) -> Vec<u8> {
    FieldWriter::new()
        .str(&m.monitor_id.to_string())
        .bytes(&m.sequence_no.to_le_bytes())
        .bytes(&m.timestamp_ms.to_le_bytes())
        .bytes(&m.latency_ms.to_le_bytes())
        .bytes(&m.status_code.to_le_bytes())
        .bytes(&[m.probe_kind.tag()])
        .str(&m.schema_version)
        .finish()
}

pub fn leaf_digest(m: &Measurement) -> Digest {
    keccak256_parts(&[&[LEAF_PREFIX], &canonical_encode(m)])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedMeasurement {
    pub measurement: Measurement,
    pub signature: Signature,
    pub signer_pubkey_id: KeyId,
}

impl SignedMeasurement {
    pub fn sign(measurement: Measurement, key: &SigningKey) -> Self {
        let signature = key.sign(&measurement.canonical_encode());
        Self {
            measurement,
            signature,
            signer_pubkey_id: key.public_key().id(),
        }
    }

    pub fn verify(&self, pubkey: &PublicKey) -> bool {
        self.signer_pubkey_id == pubkey.id()
            && verify_sig(&self.measurement.canonical_encode(), &self.signature, pubkey)
    }

    /// Bytes stored in the content store for this measurement.
    pub fn to_object_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("measurement serializes")
    }

    pub fn from_object_bytes(bytes: &[u8]) -> Result<Self, EvidenceError> {
        serde_json::from_slice(bytes).map_err(|e| EvidenceError::Decode(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvaluationWindow {
    pub t_start_ms: u64,
    pub t_end_ms: u64,
}

impl EvaluationWindow {
    pub fn new(t_start_ms: u64, t_end_ms: u64) -> Result<Self, EvidenceError> {
        if t_start_ms > t_end_ms {
            return Err(EvidenceError::InvalidWindow {
                start: t_start_ms,
                end: t_end_ms,
            });
        }
        Ok(Self { t_start_ms, t_end_ms })
    }

    pub fn duration_ms(&self) -> u64 {
        self.t_end_ms - self.t_start_ms
    }
}

/// Latency and status columns extracted from a batch, in leaf order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricVector {
    latencies_ms: Vec<u32>,
    statuses: Vec<u16>,
}

impl MetricVector {
    pub fn new(latencies_ms: Vec<u32>, statuses: Vec<u16>) -> Result<Self, EvidenceError> {
        if latencies_ms.len() != statuses.len() {
            return Err(EvidenceError::LengthMismatch {
                latencies: latencies_ms.len(),
                statuses: statuses.len(),
            });
        }
        Ok(Self { latencies_ms, statuses })
    }

    pub fn from_measurements<'a>(measurements: impl IntoIterator<Item = &'a Measurement>) -> Self {
        let (latencies_ms, statuses) = measurements
            .into_iter()
            .map(|m| (m.latency_ms, m.status_code))
            .unzip();
        Self { latencies_ms, statuses }
    }

    pub fn len(&self) -> usize {
        self.latencies_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latencies_ms.is_empty()
    }

    pub fn latencies_ms(&self) -> &[u32] {
        &self.latencies_ms
    }

    pub fn statuses(&self) -> &[u16] {
        &self.statuses
    }
}

/// Bytes a monitor signs when committing a batch root.
pub fn batch_commitment_bytes(
    monitor_id: &KeyId,
    batch_seq: u64,
    root: &Digest,
    window: &EvaluationWindow,
    count: u64,
) -> Vec<u8> {
    FieldWriter::new()
        .str("vsla.batch.v1")
        .bytes(monitor_id.as_bytes())
        .u64(batch_seq)
        .bytes(root.as_bytes())
        .u64(window.t_start_ms)
        .u64(window.t_end_ms)
        .u64(count)
        .finish()
}
