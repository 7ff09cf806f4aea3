use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{
    AnchorRecord, ClaimAnchor, ContentId, ContentStore, EvidenceRegistry, MonitorRecord, MonitorStatus, Party,
    RegistryView, StoreError,
};
use crate::clock::Clock;
use crate::evidence::{keccak256, verify_sig, Digest, KeyId, PublicKey, Signature, SigningKey};
use crate::monitor::compute_mrtd;

/// Keys of the two contracting parties of the SLA the registry serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlaParties {
    pub provider: PublicKey,
    pub consumer: PublicKey,
}

/// One line of the registry's append log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum LogEvent {
    MonitorRegistered { record: MonitorRecord },
    MonitorRetired { monitor_id: KeyId, at_ms: u64 },
    BatchAnchored { record: AnchorRecord },
    ClaimAnchored { anchor: ClaimAnchor },
}

#[derive(Debug, Default)]
struct State {
    monitors: BTreeMap<KeyId, MonitorRecord>,
    trails: HashMap<KeyId, Vec<AnchorRecord>>,
    claims: Vec<ClaimAnchor>,
}

impl State {
    fn apply(&mut self, event: LogEvent) {
        match event {
            LogEvent::MonitorRegistered { record } => {
                self.trails.entry(record.monitor_id).or_default();
                self.monitors.insert(record.monitor_id, record);
            }
            LogEvent::MonitorRetired { monitor_id, .. } => {
                if let Some(m) = self.monitors.get_mut(&monitor_id) {
                    m.status = MonitorStatus::Retired;
                }
            }
            LogEvent::BatchAnchored { record } => {
                self.trails.entry(record.monitor_id).or_default().push(record);
            }
            LogEvent::ClaimAnchored { anchor } => self.claims.push(anchor),
        }
    }

    /// BatchSequence: the next batch_seq the registry will accept.
    fn expected_seq(&self, id: &KeyId) -> u64 {
        self.trails.get(id).map_or(0, |t| t.len() as u64)
    }
}

/// Append-only evidence registry.
///
/// Anchoring takes the state write lock for the whole check-and-append, so
/// the sequence check and the append are atomic.
pub struct Registry {
    parties: SlaParties,
    manufacturer_root: PublicKey,
    cas: Arc<dyn ContentStore>,
    clock: Arc<dyn Clock>,
    state: RwLock<State>,
    log: Option<Mutex<BufWriter<File>>>,
}

impl Registry {
    pub fn new(
        parties: SlaParties,
        manufacturer_root: PublicKey,
        cas: Arc<dyn ContentStore>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            parties,
            manufacturer_root,
            cas,
            clock,
            state: RwLock::new(State::default()),
            log: None,
        }
    }

    /// Opens (or creates) a JSON-lines log at `path`, replaying existing
    /// events before accepting new ones.
    pub fn open(
        path: impl AsRef<Path>,
        parties: SlaParties,
        manufacturer_root: PublicKey,
        cas: Arc<dyn ContentStore>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let mut state = State::default();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                state.apply(serde_json::from_str(&line)?);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            parties,
            manufacturer_root,
            cas,
            clock,
            state: RwLock::new(state),
            log: Some(Mutex::new(BufWriter::new(file))),
        })
    }

    pub fn parties(&self) -> &SlaParties {
        &self.parties
    }

    pub fn manufacturer_root(&self) -> &PublicKey {
        &self.manufacturer_root
    }

    pub fn cas(&self) -> &Arc<dyn ContentStore> {
        &self.cas
    }

    pub fn expected_seq(&self, id: &KeyId) -> Result<u64, StoreError> {
        let state = self.state.read().unwrap();
        if !state.monitors.contains_key(id) {
            return Err(StoreError::UnknownMonitor(*id));
        }
        Ok(state.expected_seq(id))
    }

    pub fn monitors(&self) -> Vec<MonitorRecord> {
        self.state.read().unwrap().monitors.values().cloned().collect()
    }

    pub fn retire_monitor(&self, id: &KeyId) -> Result<(), StoreError> {
        let mut state = self.state.write().unwrap();
        if !state.monitors.contains_key(id) {
            return Err(StoreError::UnknownMonitor(*id));
        }
        self.commit(
            &mut state,
            LogEvent::MonitorRetired {
                monitor_id: *id,
                at_ms: self.clock.now_ms(),
            },
        )
    }

    pub fn snapshot(&self, signer: Option<&SigningKey>) -> RegistrySnapshot {
        let state = self.state.read().unwrap();
        let monitors: Vec<MonitorRecord> = state.monitors.values().cloned().collect();
        let anchors = monitors
            .iter()
            .flat_map(|m| state.trails.get(&m.monitor_id).cloned().unwrap_or_default())
            .collect();
        let mut snapshot = RegistrySnapshot {
            parties: self.parties,
            manufacturer_root: self.manufacturer_root,
            monitors,
            anchors,
            claims: state.claims.clone(),
            taken_at_ms: self.clock.now_ms(),
            signer: None,
            signature: None,
        };
        if let Some(key) = signer {
            snapshot.signer = Some(key.public_key());
            snapshot.signature = Some(key.sign(snapshot.signing_digest().as_bytes()));
        }
        snapshot
    }

    fn commit(&self, state: &mut State, event: LogEvent) -> Result<(), StoreError> {
        if let Some(log) = &self.log {
            let mut log = log.lock().unwrap();
            serde_json::to_writer(&mut *log, &event)?;
            log.write_all(b"\n")?;
            log.flush()?;
        }
        state.apply(event);
        Ok(())
    }

    fn check_registration(
        &self,
        record: &MonitorRecord,
        provider_sig: Option<&Signature>,
        consumer_sig: Option<&Signature>,
    ) -> Result<(), StoreError> {
        if record.monitor_id != record.pubkey.id() {
            return Err(StoreError::InvalidRecord(format!(
                "monitor_id {} is not the address of the registered key",
                record.monitor_id
            )));
        }
        let quote = &record.quote;
        if !quote.verify(&self.manufacturer_root) {
            return Err(StoreError::InvalidQuote(
                "signature does not chain to the manufacturer root".into(),
            ));
        }
        if quote.monitor_pubkey != record.pubkey {
            return Err(StoreError::InvalidQuote("quote binds a different public key".into()));
        }
        if quote.mrtd != compute_mrtd(&record.program_id, &record.config) {
            return Err(StoreError::InvalidQuote(
                "mrtd does not match the published program and config".into(),
            ));
        }
        if record.config.provider_pubkey != self.parties.provider
            || record.config.consumer_pubkey != self.parties.consumer
        {
            return Err(StoreError::InvalidRecord("config names different SLA parties".into()));
        }
        record
            .config
            .verify_cosignatures()
            .map_err(|e| StoreError::InvalidRecord(e.to_string()))?;
        let payload = record.registration_payload();
        let signed_by = |sig: Option<&Signature>, key: &PublicKey| sig.is_some_and(|s| verify_sig(&payload, s, key));
        if !signed_by(provider_sig, &self.parties.provider) {
            return Err(StoreError::MissingCoSignature(Party::Provider));
        }
        if !signed_by(consumer_sig, &self.parties.consumer) {
            return Err(StoreError::MissingCoSignature(Party::Consumer));
        }
        Ok(())
    }
}

impl RegistryView for Registry {
    fn monitor(&self, id: &KeyId) -> Result<MonitorRecord, StoreError> {
        self.state
            .read()
            .unwrap()
            .monitors
            .get(id)
            .cloned()
            .ok_or(StoreError::UnknownMonitor(*id))
    }

    fn audit_trail(&self, id: &KeyId) -> Result<Vec<AnchorRecord>, StoreError> {
        let state = self.state.read().unwrap();
        if !state.monitors.contains_key(id) {
            return Err(StoreError::UnknownMonitor(*id));
        }
        Ok(state.trails.get(id).cloned().unwrap_or_default())
    }

    fn anchor(&self, id: &KeyId, batch_seq: u64) -> Result<Option<AnchorRecord>, StoreError> {
        let state = self.state.read().unwrap();
        if !state.monitors.contains_key(id) {
            return Err(StoreError::UnknownMonitor(*id));
        }
        Ok(state
            .trails
            .get(id)
            .and_then(|t| usize::try_from(batch_seq).ok().and_then(|i| t.get(i)))
            .cloned())
    }

    fn claim_anchors(&self) -> Result<Vec<ClaimAnchor>, StoreError> {
        Ok(self.state.read().unwrap().claims.clone())
    }
}

impl EvidenceRegistry for Registry {
    fn register_monitor(
        &self,
        mut record: MonitorRecord,
        provider_sig: Option<Signature>,
        consumer_sig: Option<Signature>,
    ) -> Result<MonitorRecord, StoreError> {
        let mut state = self.state.write().unwrap();
        if state.monitors.contains_key(&record.monitor_id) {
            return Err(StoreError::DuplicateMonitor(record.monitor_id));
        }
        self.check_registration(&record, provider_sig.as_ref(), consumer_sig.as_ref())?;
        record.status = MonitorStatus::Active;
        record.registered_at_ms = self.clock.now_ms();
        self.commit(&mut state, LogEvent::MonitorRegistered { record: record.clone() })?;
        Ok(record)
    }

    fn anchor_batch(&self, mut record: AnchorRecord) -> Result<AnchorRecord, StoreError> {
        let mut state = self.state.write().unwrap();
        let monitor = state
            .monitors
            .get(&record.monitor_id)
            .ok_or(StoreError::UnknownMonitor(record.monitor_id))?;
        if monitor.status != MonitorStatus::Active {
            return Err(StoreError::MonitorRetired(record.monitor_id));
        }
        if record.count == 0 || record.window.t_start_ms > record.window.t_end_ms {
            return Err(StoreError::InvalidRecord("empty batch or inverted window".into()));
        }
        if !record.verify_signature(&monitor.pubkey) {
            return Err(StoreError::BadSignature(record.monitor_id));
        }
        let expected = state.expected_seq(&record.monitor_id);
        if record.batch_seq != expected {
            return Err(StoreError::SequenceGap {
                monitor: record.monitor_id,
                expected,
                got: record.batch_seq,
            });
        }
        record.anchored_at_ms = self.clock.now_ms();
        self.commit(&mut state, LogEvent::BatchAnchored { record: record.clone() })?;
        Ok(record)
    }

    fn anchor_claim(&self, claim_cid: ContentId, claim_root: Digest, submitter: &str) -> Result<ClaimAnchor, StoreError> {
        if !self.cas.contains(&claim_cid)? {
            return Err(StoreError::NotFound(claim_cid));
        }
        let mut state = self.state.write().unwrap();
        let anchor = ClaimAnchor {
            anchor_id: state.claims.len() as u64,
            claim_cid,
            claim_root,
            submitter: submitter.to_string(),
            anchored_at_ms: self.clock.now_ms(),
        };
        self.commit(&mut state, LogEvent::ClaimAnchored { anchor: anchor.clone() })?;
        Ok(anchor)
    }
}

/// Point-in-time export of the registry for offline verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrySnapshot {
    pub parties: SlaParties,
    pub manufacturer_root: PublicKey,
    pub monitors: Vec<MonitorRecord>,
    pub anchors: Vec<AnchorRecord>,
    pub claims: Vec<ClaimAnchor>,
    pub taken_at_ms: u64,
    pub signer: Option<PublicKey>,
    pub signature: Option<Signature>,
}

impl RegistrySnapshot {
    pub fn signing_digest(&self) -> Digest {
        let mut unsigned = self.clone();
        unsigned.signer = None;
        unsigned.signature = None;
        keccak256(&serde_json::to_vec(&unsigned).expect("snapshot serializes"))
    }

    pub fn verify_signature(&self, expected_signer: &PublicKey) -> Result<(), StoreError> {
        match (&self.signer, &self.signature) {
            (Some(signer), Some(sig))
                if signer == expected_signer && verify_sig(self.signing_digest().as_bytes(), sig, signer) =>
            {
                Ok(())
            }
            _ => Err(StoreError::BadSnapshot),
        }
    }
}

impl RegistryView for RegistrySnapshot {
    fn monitor(&self, id: &KeyId) -> Result<MonitorRecord, StoreError> {
        self.monitors
            .iter()
            .find(|m| &m.monitor_id == id)
            .cloned()
            .ok_or(StoreError::UnknownMonitor(*id))
    }

    fn audit_trail(&self, id: &KeyId) -> Result<Vec<AnchorRecord>, StoreError> {
        self.monitor(id)?;
        Ok(self.anchors.iter().filter(|a| &a.monitor_id == id).cloned().collect())
    }

    fn claim_anchors(&self) -> Result<Vec<ClaimAnchor>, StoreError> {
        Ok(self.claims.clone())
    }
}
