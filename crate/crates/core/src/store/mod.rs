//! Evidence storage: a content-addressable store for measurements,
//! manifests and claims, plus an append-only registry that plays the role of
//! the on-chain evidence contract (monitor registration, strictly sequenced
//! batch anchoring, claim anchoring).

mod cas;
mod registry;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{
    batch_commitment_bytes, keccak256, verify_sig, Digest, EvaluationWindow, EvidenceError, KeyId, PublicKey,
    Signature,
};
use crate::evidence::FieldWriter;
use crate::monitor::{AttestationQuote, MonitorConfig};

pub use cas::{DirCas, MemoryCas};
pub use registry::{LogEvent, Registry, RegistrySnapshot, SlaParties};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("content {0} not found")]
    NotFound(ContentId),
    #[error("content {cid} failed self-certification (digest {actual})")]
    Corrupted { cid: ContentId, actual: Digest },
    #[error("monitor {0} already registered")]
    DuplicateMonitor(KeyId),
    #[error("unknown monitor {0}")]
    UnknownMonitor(KeyId),
    #[error("monitor {0} is retired")]
    MonitorRetired(KeyId),
    #[error("invalid attestation quote: {0}")]
    InvalidQuote(String),
    #[error("missing or invalid {0} co-signature")]
    MissingCoSignature(Party),
    #[error("omission rejected for {monitor}: expected batch_seq {expected}, got {got}")]
    SequenceGap { monitor: KeyId, expected: u64, got: u64 },
    #[error("batch root signature does not verify under the registered key of {0}")]
    BadSignature(KeyId),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("snapshot signature invalid")]
    BadSnapshot,
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("transport: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    Provider,
    Consumer,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Party::Provider => "provider",
            Party::Consumer => "consumer",
        })
    }
}

/// Self-certifying content address: the keccak256 of the stored bytes,
/// written as plain lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContentId(pub Digest);

impl ContentId {
    pub fn for_content(content: &[u8]) -> Self {
        Self(keccak256(content))
    }

    pub fn digest(&self) -> &Digest {
        &self.0
    }
}

impl fmt::Display for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Debug for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cid({})", self.0)
    }
}

impl FromStr for ContentId {
    type Err = EvidenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(Self)
    }
}

pub trait ContentStore: Send + Sync {
    fn put(&self, content: &[u8]) -> Result<ContentId, StoreError>;

    /// Returns the stored bytes after checking they hash to `cid`.
    fn get(&self, cid: &ContentId) -> Result<Vec<u8>, StoreError>;

    fn contains(&self, cid: &ContentId) -> Result<bool, StoreError> {
        match self.get(cid) {
            Ok(_) => Ok(true),
            Err(StoreError::NotFound(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }
}

pub(crate) fn check_content(cid: &ContentId, bytes: &[u8]) -> Result<(), StoreError> {
    let actual = keccak256(bytes);
    if actual != cid.0 {
        return Err(StoreError::Corrupted { cid: *cid, actual });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MonitorStatus {
    Active,
    Retired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord {
    pub monitor_id: KeyId,
    pub pubkey: PublicKey,
    pub quote: AttestationQuote,
    /// Published monitor program identifier; with `config` it lets anyone
    /// recompute the quote's mrtd.
    pub program_id: Digest,
    pub config: MonitorConfig,
    pub status: MonitorStatus,
    /// Assigned by the registry.
    #[serde(default)]
    pub registered_at_ms: u64,
}

impl MonitorRecord {
    /// Bytes co-signed by provider and consumer to authorize registration.
    pub fn registration_payload(&self) -> Vec<u8> {
        FieldWriter::new()
            .str("vsla.register.v1")
            .bytes(self.monitor_id.as_bytes())
            .bytes(self.pubkey.as_bytes())
            .bytes(self.quote.mrtd.as_bytes())
            .bytes(self.program_id.as_bytes())
            .bytes(keccak256(&self.config.canonical_encoding()).as_bytes())
            .finish()
    }
}

/// Fixed-size batch anchor. Only the commitment header is registered, so
/// the payload length does not depend on how many measurements the batch
/// holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub monitor_id: KeyId,
    pub batch_seq: u64,
    pub root: Digest,
    pub window: EvaluationWindow,
    pub count: u64,
    pub manifest_cid: ContentId,
    pub root_signature: Signature,
    /// Assigned by the registry on acceptance.
    #[serde(default)]
    pub anchored_at_ms: u64,
}

/// 20 + 8 + 32 + 8 + 8 + 8 + 32 + 64.
pub const ANCHOR_PAYLOAD_LEN: usize = 180;

impl AnchorRecord {
    pub fn commitment_bytes(&self) -> Vec<u8> {
        batch_commitment_bytes(&self.monitor_id, self.batch_seq, &self.root, &self.window, self.count)
    }

    pub fn verify_signature(&self, pubkey: &PublicKey) -> bool {
        verify_sig(&self.commitment_bytes(), &self.root_signature, pubkey)
    }

    /// Submission payload: fixed-width fields, no length prefixes.
    pub fn encode_payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ANCHOR_PAYLOAD_LEN);
        out.extend_from_slice(self.monitor_id.as_bytes());
        out.extend_from_slice(&self.batch_seq.to_le_bytes());
        out.extend_from_slice(self.root.as_bytes());
        out.extend_from_slice(&self.window.t_start_ms.to_le_bytes());
        out.extend_from_slice(&self.window.t_end_ms.to_le_bytes());
        out.extend_from_slice(&self.count.to_le_bytes());
        out.extend_from_slice(self.manifest_cid.0.as_bytes());
        out.extend_from_slice(self.root_signature.as_bytes());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub monitor_id: KeyId,
    pub batch_seq: u64,
    pub measurement_cids: Vec<ContentId>,
    pub window: EvaluationWindow,
    pub schema_version: String,
}

impl BatchManifest {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("manifest serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimAnchor {
    /// Position in the claim log; re-anchoring a claim creates a new id.
    pub anchor_id: u64,
    pub claim_cid: ContentId,
    pub claim_root: Digest,
    pub submitter: String,
    pub anchored_at_ms: u64,
}

/// Read side of the evidence registry.
pub trait RegistryView {
    fn monitor(&self, id: &KeyId) -> Result<MonitorRecord, StoreError>;

    /// All anchors of a monitor in append order.
    fn audit_trail(&self, id: &KeyId) -> Result<Vec<AnchorRecord>, StoreError>;

    fn anchor(&self, id: &KeyId, batch_seq: u64) -> Result<Option<AnchorRecord>, StoreError> {
        Ok(self
            .audit_trail(id)?
            .into_iter()
            .find(|a| a.batch_seq == batch_seq))
    }

    fn claim_anchors(&self) -> Result<Vec<ClaimAnchor>, StoreError>;
}

/// Write side of the evidence registry.
pub trait EvidenceRegistry: RegistryView + Send + Sync {
    fn register_monitor(
        &self,
        record: MonitorRecord,
        provider_sig: Option<Signature>,
        consumer_sig: Option<Signature>,
    ) -> Result<MonitorRecord, StoreError>;

    fn anchor_batch(&self, record: AnchorRecord) -> Result<AnchorRecord, StoreError>;

    fn anchor_claim(&self, claim_cid: ContentId, claim_root: Digest, submitter: &str) -> Result<ClaimAnchor, StoreError>;
}
