//! Request and error bodies of the evidence store HTTP API.

use serde::{Deserialize, Serialize};
use vsla_core::evidence::{Digest, KeyId, Signature};
use vsla_core::store::{ContentId, MonitorRecord, Party, StoreError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub record: MonitorRecord,
    pub provider_sig: Option<Signature>,
    pub consumer_sig: Option<Signature>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimRequest {
    pub claim_cid: ContentId,
    pub claim_root: Digest,
    pub submitter: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PutResponse {
    pub cid: ContentId,
}

/// Store errors as sent over the wire, so clients can rebuild the variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ErrorBody {
    NotFound { cid: ContentId },
    Corrupted { cid: ContentId, actual: Digest },
    DuplicateMonitor { monitor: KeyId },
    UnknownMonitor { monitor: KeyId },
    MonitorRetired { monitor: KeyId },
    InvalidQuote { reason: String },
    MissingCoSignature { party: Party },
    SequenceGap { monitor: KeyId, expected: u64, got: u64 },
    BadSignature { monitor: KeyId },
    InvalidRecord { reason: String },
    BadSnapshot,
    BadRequest { reason: String },
    Internal { reason: String },
}

impl ErrorBody {
    pub fn status(&self) -> u16 {
        match self {
            ErrorBody::NotFound { .. } | ErrorBody::UnknownMonitor { .. } => 404,
            ErrorBody::DuplicateMonitor { .. } | ErrorBody::SequenceGap { .. } | ErrorBody::MonitorRetired { .. } => 409,
            ErrorBody::Corrupted { .. } | ErrorBody::Internal { .. } => 500,
            _ => 422,
        }
    }
}

impl From<&StoreError> for ErrorBody {
    fn from(e: &StoreError) -> Self {
        match e {
            StoreError::NotFound(cid) => ErrorBody::NotFound { cid: *cid },
            StoreError::Corrupted { cid, actual } => ErrorBody::Corrupted {
                cid: *cid,
                actual: *actual,
            },
            StoreError::DuplicateMonitor(m) => ErrorBody::DuplicateMonitor { monitor: *m },
            StoreError::UnknownMonitor(m) => ErrorBody::UnknownMonitor { monitor: *m },
            StoreError::MonitorRetired(m) => ErrorBody::MonitorRetired { monitor: *m },
            StoreError::InvalidQuote(r) => ErrorBody::InvalidQuote { reason: r.clone() },
            StoreError::MissingCoSignature(p) => ErrorBody::MissingCoSignature { party: *p },
            StoreError::SequenceGap { monitor, expected, got } => ErrorBody::SequenceGap {
                monitor: *monitor,
                expected: *expected,
                got: *got,
            },
            StoreError::BadSignature(m) => ErrorBody::BadSignature { monitor: *m },
            StoreError::InvalidRecord(r) => ErrorBody::InvalidRecord { reason: r.clone() },
            StoreError::BadSnapshot => ErrorBody::BadSnapshot,
            StoreError::Evidence(e) => ErrorBody::BadRequest { reason: e.to_string() },
            StoreError::Serde(e) => ErrorBody::BadRequest { reason: e.to_string() },
            other => ErrorBody::Internal {
                reason: other.to_string(),
            },
        }
    }
}

impl From<ErrorBody> for StoreError {
    fn from(b: ErrorBody) -> Self {
        match b {
            ErrorBody::NotFound { cid } => StoreError::NotFound(cid),
            ErrorBody::Corrupted { cid, actual } => StoreError::Corrupted { cid, actual },
            ErrorBody::DuplicateMonitor { monitor } => StoreError::DuplicateMonitor(monitor),
            ErrorBody::UnknownMonitor { monitor } => StoreError::UnknownMonitor(monitor),
            ErrorBody::MonitorRetired { monitor } => StoreError::MonitorRetired(monitor),
            ErrorBody::InvalidQuote { reason } => StoreError::InvalidQuote(reason),
            ErrorBody::MissingCoSignature { party } => StoreError::MissingCoSignature(party),
            ErrorBody::SequenceGap { monitor, expected, got } => StoreError::SequenceGap { monitor, expected, got },
            ErrorBody::BadSignature { monitor } => StoreError::BadSignature(monitor),
            ErrorBody::InvalidRecord { reason } => StoreError::InvalidRecord(reason),
            ErrorBody::BadSnapshot => StoreError::BadSnapshot,
            ErrorBody::BadRequest { reason } => StoreError::Transport(format!("bad request: {reason}")),
            ErrorBody::Internal { reason } => StoreError::Transport(format!("server error: {reason}")),
        }
    }
}
