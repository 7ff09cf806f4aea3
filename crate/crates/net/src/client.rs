//! Blocking client for the evidence store API. Implements the store and
//! registry traits, so the engine and verifier run against a remote store
//! unchanged.

use std::time::Duration;

use reqwest::blocking::{Client, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;
use vsla_core::evidence::{keccak256, Digest, KeyId, Signature};
use vsla_core::store::{
    AnchorRecord, ClaimAnchor, ContentId, ContentStore, EvidenceRegistry, MonitorRecord, RegistrySnapshot,
    RegistryView, StoreError,
};

use crate::wire::{ClaimRequest, ErrorBody, PutResponse, RegisterRequest};

#[derive(Debug, Clone)]
pub struct StoreClient {
    base: String,
    http: Client,
}

fn transport(e: reqwest::Error) -> StoreError {
    StoreError::Transport(e.to_string())
}

impl StoreClient {
    /// Must not be called from inside an async runtime.
    pub fn new(base_url: &str) -> Result<Self, StoreError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(60))
            .pool_max_idle_per_host(4)
            .build()
            .map_err(transport)?;
        Ok(Self {
            base: base_url.trim_end_matches('/').to_string(),
            http,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn check(resp: Response) -> Result<Response, StoreError> {
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let text = resp.text().map_err(transport)?;
        match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => Err(body.into()),
            Err(_) => Err(StoreError::Transport(format!("HTTP {status}: {text}"))),
        }
    }

    fn get_json<T: DeserializeOwned>(&self, path: &str) -> Result<T, StoreError> {
        let resp = self.http.get(format!("{}{path}", self.base)).send().map_err(transport)?;
        Self::check(resp)?.json().map_err(transport)
    }

    fn post_json<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, StoreError> {
        let resp = self
            .http
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .map_err(transport)?;
        Self::check(resp)?.json().map_err(transport)
    }

    pub fn monitors(&self) -> Result<Vec<MonitorRecord>, StoreError> {
        self.get_json("/monitors")
    }

    pub fn snapshot(&self) -> Result<RegistrySnapshot, StoreError> {
        self.get_json("/snapshot")
    }
}

impl ContentStore for StoreClient {
    fn put(&self, content: &[u8]) -> Result<ContentId, StoreError> {
        let resp = self
            .http
            .put(format!("{}/cas", self.base))
            .body(content.to_vec())
            .send()
            .map_err(transport)?;
        let PutResponse { cid } = Self::check(resp)?.json().map_err(transport)?;
        let expected = ContentId::for_content(content);
        if cid != expected {
            return Err(StoreError::Corrupted {
                cid: expected,
                actual: cid.0,
            });
        }
        Ok(cid)
    }

    /// The store is not trusted: content is re-hashed on arrival.
    fn get(&self, cid: &ContentId) -> Result<Vec<u8>, StoreError> {
        let resp = self
            .http
            .get(format!("{}/cas/{cid}", self.base))
            .send()
            .map_err(transport)?;
        let bytes = Self::check(resp)?.bytes().map_err(transport)?.to_vec();
        let actual = keccak256(&bytes);
        if actual != cid.0 {
            return Err(StoreError::Corrupted { cid: *cid, actual });
        }
        Ok(bytes)
    }
}

impl RegistryView for StoreClient {
    fn monitor(&self, id: &KeyId) -> Result<MonitorRecord, StoreError> {
        self.get_json(&format!("/monitors/{id}"))
    }

    fn audit_trail(&self, id: &KeyId) -> Result<Vec<AnchorRecord>, StoreError> {
        self.get_json(&format!("/monitors/{id}/batches"))
    }

    fn claim_anchors(&self) -> Result<Vec<ClaimAnchor>, StoreError> {
        self.get_json("/claims")
    }
}

impl EvidenceRegistry for StoreClient {
    fn register_monitor(
        &self,
        record: MonitorRecord,
        provider_sig: Option<Signature>,
        consumer_sig: Option<Signature>,
    ) -> Result<MonitorRecord, StoreError> {
        self.post_json(
            "/monitors",
            &RegisterRequest {
                record,
                provider_sig,
                consumer_sig,
            },
        )
    }

    fn anchor_batch(&self, record: AnchorRecord) -> Result<AnchorRecord, StoreError> {
        self.post_json("/batches", &record)
    }

    fn anchor_claim(&self, claim_cid: ContentId, claim_root: Digest, submitter: &str) -> Result<ClaimAnchor, StoreError> {
        self.post_json(
            "/claims",
            &ClaimRequest {
                claim_cid,
                claim_root,
                submitter: submitter.to_string(),
            },
        )
    }
}
