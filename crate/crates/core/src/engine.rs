//! SLO evaluation engine: preflight validation of an anchored batch,
//! evaluation of a compiled predicate under a proving backend, claim
//! emission under one of three disclosure strategies, and anchoring.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{
    keccak256, leaf_digest, Digest, EvaluationWindow, FieldWriter, KeyId, MetricVector, PublicKey, Signature,
    SignedMeasurement, SigningKey,
};
use crate::merkle::{compute_root, InclusionProof, MerkleTree};
use crate::store::{AnchorRecord, BatchManifest, ContentId, ContentStore, EvidenceRegistry, RegistryView, StoreError};
use crate::vslas::{compile_predicate, evaluate_predicate, CompiledPredicate, PredicateError, VslaSpec, WindowPolicy};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("evidence unavailable: {0}")]
    Availability(StoreError),
    #[error("integrity failure: {0}")]
    Integrity(String),
    #[error("authenticity failure: {0}")]
    Authenticity(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("clause is satisfied; there is no violation to disclose")]
    NoViolation,
    #[error("no clause {0:?} in the SLA document")]
    UnknownClause(String),
    #[error("no anchored batch {batch_seq} for monitor {monitor}")]
    UnknownAnchor { monitor: KeyId, batch_seq: u64 },
    #[error("proving failed: {0}")]
    Proving(String),
    #[error(transparent)]
    Predicate(#[from] PredicateError),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for EngineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => EngineError::Availability(e),
            StoreError::Corrupted { .. } => EngineError::Integrity(e.to_string()),
            other => EngineError::Store(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    FullDisclosure,
    BatchPrivacy,
    ViolationPrivacy,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::FullDisclosure, Strategy::BatchPrivacy, Strategy::ViolationPrivacy];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::FullDisclosure => "full_disclosure",
            Strategy::BatchPrivacy => "batch_privacy",
            Strategy::ViolationPrivacy => "violation_privacy",
        }
    }

    pub fn requires_proof(self) -> bool {
        self != Strategy::FullDisclosure
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" | "full_disclosure" => Ok(Strategy::FullDisclosure),
            "batch" | "batch_privacy" => Ok(Strategy::BatchPrivacy),
            "violation" | "violation_privacy" => Ok(Strategy::ViolationPrivacy),
            other => Err(format!("unknown strategy {other:?} (expected full, batch or violation)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicInputs {
    pub root: Digest,
    pub window: EvaluationWindow,
    pub monitor_pubkey_id: KeyId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicOutputs {
    pub ok: bool,
    pub sig_ok: bool,
    pub merkle_ok: bool,
}

/// Inputs the compliance program sees but a verifier of a privacy claim
/// does not.
#[derive(Debug, Clone, Copy)]
pub struct PrivateInputs<'a> {
    pub measurements: &'a [SignedMeasurement],
    pub monitor_pubkey: &'a PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofArtifact {
    pub backend_tag: String,
    pub program_id: Digest,
    pub public_inputs: PublicInputs,
    pub public_outputs: PublicOutputs,
    #[serde(with = "hex::serde")]
    pub payload: Vec<u8>,
}

/// The compliance program: re-checks every signature and the Merkle root,
/// then evaluates the predicate. Each result is reported as its own bit.
pub fn run_compliance_program(
    pred: &CompiledPredicate,
    public: &PublicInputs,
    private: &PrivateInputs<'_>,
) -> Result<PublicOutputs, PredicateError> {
    let key_ok = private.monitor_pubkey.id() == public.monitor_pubkey_id;
    let sig_ok = key_ok
        && private
            .measurements
            .iter()
            .all(|m| m.signer_pubkey_id == public.monitor_pubkey_id && m.verify(private.monitor_pubkey));
    let leaves: Vec<Digest> = private.measurements.iter().map(|m| leaf_digest(&m.measurement)).collect();
    let merkle_ok = compute_root(&leaves).is_ok_and(|r| r == public.root);
    let v = MetricVector::from_measurements(private.measurements.iter().map(|m| &m.measurement));
    let ok = evaluate_predicate(pred, &v)?;
    Ok(PublicOutputs { ok, sig_ok, merkle_ok })
}

/// Commitment to the private inputs: every leaf digest and signature in order.
pub fn input_commitment(measurements: &[SignedMeasurement]) -> Digest {
    let mut w = FieldWriter::new().str("vsla.inputs.v1").u64(measurements.len() as u64);
    for m in measurements {
        w = w.bytes(leaf_digest(&m.measurement).as_bytes()).bytes(m.signature.as_bytes());
    }
    keccak256(&w.finish())
}

pub trait ProvingBackend: Send + Sync {
    fn tag(&self) -> &str;

    fn prove(
        &self,
        pred: &CompiledPredicate,
        public: &PublicInputs,
        private: &PrivateInputs<'_>,
    ) -> Result<ProofArtifact, EngineError>;

    /// Checks the artifact without access to private inputs.
    fn verify(&self, artifact: &ProofArtifact) -> bool;

    /// Checks the artifact against disclosed private inputs. Backends with
    /// succinct proofs need nothing beyond `verify`.
    fn verify_with_inputs(&self, artifact: &ProofArtifact, private: &PrivateInputs<'_>) -> bool {
        let _ = private;
        self.verify(artifact)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ReexecPayload {
    predicate: CompiledPredicate,
    input_commitment: Digest,
    engine_pubkey: PublicKey,
    signature: Signature,
}

/// Deterministic re-execution backend. The engine operator runs the
/// compliance program and signs the statement (program id, predicate,
/// public inputs, outputs, input commitment). A verifier checks that signature against the
/// operator key it trusts; with disclosed inputs it re-runs the program.
#[derive(Debug)]
pub struct ReexecBackend {
    signer: Option<SigningKey>,
    engine_pubkey: PublicKey,
}

pub const REEXEC_TAG: &str = "reexec";

impl ReexecBackend {
    pub fn new(engine_key: SigningKey) -> Self {
        Self {
            engine_pubkey: engine_key.public_key(),
            signer: Some(engine_key),
        }
    }

    /// A backend that can only verify.
    pub fn verifier(engine_pubkey: PublicKey) -> Self {
        Self {
            signer: None,
            engine_pubkey,
        }
    }

    pub fn engine_pubkey(&self) -> PublicKey {
        self.engine_pubkey
    }

    fn statement(
        program_id: &Digest,
        public: &PublicInputs,
        outputs: &PublicOutputs,
        commitment: &Digest,
        predicate: &CompiledPredicate,
    ) -> Vec<u8> {
        let predicate_digest = keccak256(&serde_json::to_vec(predicate).expect("predicate serializes"));
        FieldWriter::new()
            .str("vsla.reexec.v1")
            .bytes(program_id.as_bytes())
            .bytes(predicate_digest.as_bytes())
            .bytes(public.root.as_bytes())
            .u64(public.window.t_start_ms)
            .u64(public.window.t_end_ms)
            .bytes(public.monitor_pubkey_id.as_bytes())
            .u64(u64::from(outputs.ok))
            .u64(u64::from(outputs.sig_ok))
            .u64(u64::from(outputs.merkle_ok))
            .bytes(commitment.as_bytes())
            .finish()
    }

    fn payload(&self, artifact: &ProofArtifact) -> Option<ReexecPayload> {
        if artifact.backend_tag != REEXEC_TAG {
            return None;
        }
        let payload: ReexecPayload = serde_json::from_slice(&artifact.payload).ok()?;
        if payload.engine_pubkey != self.engine_pubkey
            || payload.predicate.program_id != artifact.program_id
            || payload.predicate.check().is_err()
        {
            return None;
        }
        let statement = Self::statement(
            &artifact.program_id,
            &artifact.public_inputs,
            &artifact.public_outputs,
            &payload.input_commitment,
            &payload.predicate,
        );
        crate::evidence::verify_sig(&statement, &payload.signature, &self.engine_pubkey).then_some(payload)
    }
}

impl ProvingBackend for ReexecBackend {
    fn tag(&self) -> &str {
        REEXEC_TAG
    }

    fn prove(
        &self,
        pred: &CompiledPredicate,
        public: &PublicInputs,
        private: &PrivateInputs<'_>,
    ) -> Result<ProofArtifact, EngineError> {
        let signer = self
            .signer
            .as_ref()
            .ok_or_else(|| EngineError::Proving("backend has no engine signing key".into()))?;
        pred.check()?;
        let outputs = run_compliance_program(pred, public, private)?;
        let commitment = input_commitment(private.measurements);
        let signature = signer.sign(&Self::statement(&pred.program_id, public, &outputs, &commitment, pred));
        let payload = ReexecPayload {
            predicate: pred.clone(),
            input_commitment: commitment,
            engine_pubkey: self.engine_pubkey,
            signature,
        };
        Ok(ProofArtifact {
            backend_tag: REEXEC_TAG.to_string(),
            program_id: pred.program_id,
            public_inputs: *public,
            public_outputs: outputs,
            payload: serde_json::to_vec(&payload).map_err(|e| EngineError::Proving(e.to_string()))?,
        })
    }

    fn verify(&self, artifact: &ProofArtifact) -> bool {
        self.payload(artifact).is_some()
    }

    fn verify_with_inputs(&self, artifact: &ProofArtifact, private: &PrivateInputs<'_>) -> bool {
        let Some(payload) = self.payload(artifact) else {
            return false;
        };
        payload.input_commitment == input_commitment(private.measurements)
            && run_compliance_program(&payload.predicate, &artifact.public_inputs, private)
                .is_ok_and(|out| out == artifact.public_outputs)
    }
}

/// A batch that passed preflight, in manifest order.
#[derive(Debug, Clone)]
pub struct Preflight {
    pub anchor: AnchorRecord,
    pub monitor_pubkey: PublicKey,
    pub measurement_cids: Vec<ContentId>,
    pub measurements: Vec<SignedMeasurement>,
    pub vector: MetricVector,
    pub tree: MerkleTree,
}

impl Preflight {
    pub fn public_inputs(&self) -> PublicInputs {
        PublicInputs {
            root: self.anchor.root,
            window: self.anchor.window,
            monitor_pubkey_id: self.anchor.monitor_id,
        }
    }

    pub fn private_inputs(&self) -> PrivateInputs<'_> {
        PrivateInputs {
            measurements: &self.measurements,
            monitor_pubkey: &self.monitor_pubkey,
        }
    }
}

/// Fetches the manifest and measurements behind `anchor`, checks every
/// signature and recomputes the root.
pub fn preflight(
    anchor: &AnchorRecord,
    registry: &dyn RegistryView,
    cas: &dyn ContentStore,
) -> Result<Preflight, EngineError> {
    let record = registry.monitor(&anchor.monitor_id).map_err(EngineError::Store)?;
    let manifest = BatchManifest::from_bytes(&cas.get(&anchor.manifest_cid)?)
        .map_err(|e| EngineError::Integrity(format!("manifest: {e}")))?;
    if manifest.monitor_id != anchor.monitor_id
        || manifest.batch_seq != anchor.batch_seq
        || manifest.window != anchor.window
        || manifest.measurement_cids.len() as u64 != anchor.count
    {
        return Err(EngineError::Integrity("manifest does not match the anchored batch header".into()));
    }

    let mut measurements = Vec::with_capacity(manifest.measurement_cids.len());
    for (i, cid) in manifest.measurement_cids.iter().enumerate() {
        let m = SignedMeasurement::from_object_bytes(&cas.get(cid)?)
            .map_err(|e| EngineError::Integrity(format!("measurement {i}: {e}")))?;
        if m.signer_pubkey_id != anchor.monitor_id || !m.verify(&record.pubkey) {
            return Err(EngineError::Authenticity(format!(
                "measurement {i} is not signed by monitor {}",
                anchor.monitor_id
            )));
        }
        measurements.push(m);
    }

    let tree = MerkleTree::build(measurements.iter().map(|m| leaf_digest(&m.measurement)).collect())
        .map_err(|e| EngineError::Integrity(e.to_string()))?;
    if tree.root() != anchor.root {
        return Err(EngineError::Integrity(format!(
            "recomputed root {} differs from anchored root {}",
            tree.root(),
            anchor.root
        )));
    }
    let vector = MetricVector::from_measurements(measurements.iter().map(|m| &m.measurement));
    Ok(Preflight {
        anchor: anchor.clone(),
        monitor_pubkey: record.pubkey,
        measurement_cids: manifest.measurement_cids,
        measurements,
        vector,
        tree,
    })
}

pub fn prove_compliance(
    pred: &CompiledPredicate,
    batch: &Preflight,
    backend: &dyn ProvingBackend,
) -> Result<ProofArtifact, EngineError> {
    backend.prove(pred, &batch.public_inputs(), &batch.private_inputs())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisclosedMeasurement {
    pub measurement: SignedMeasurement,
    pub proof: InclusionProof,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disclosure {
    FullBatch {
        manifest_cid: ContentId,
        measurement_cids: Vec<ContentId>,
        root_signature: Signature,
    },
    None,
    Violations {
        items: Vec<DisclosedMeasurement>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationClaim {
    pub spec_digest: Digest,
    pub clause_id: String,
    pub program_id: Digest,
    pub monitor_id: KeyId,
    pub batch_seq: u64,
    pub window: EvaluationWindow,
    pub root: Digest,
    pub count: u64,
    /// 1 when the clause holds over the batch.
    pub ok: bool,
    pub strategy: Strategy,
    pub proof: Option<ProofArtifact>,
    pub disclosed: Disclosure,
    /// Set once stored; not part of the stored bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim_cid: Option<ContentId>,
}

impl ViolationClaim {
    /// Stored form, without `claim_cid`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut unset = self.clone();
        unset.claim_cid = None;
        serde_json::to_vec_pretty(&unset).expect("claim serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn fetch(cas: &dyn ContentStore, cid: &ContentId) -> Result<Self, StoreError> {
        let mut claim = Self::from_bytes(&cas.get(cid)?)?;
        claim.claim_cid = Some(*cid);
        Ok(claim)
    }

    pub fn disclosed_count(&self) -> usize {
        match &self.disclosed {
            Disclosure::FullBatch { measurement_cids, .. } => measurement_cids.len(),
            Disclosure::None => 0,
            Disclosure::Violations { items } => items.len(),
        }
    }
}

/// Builds the claim payload for `strategy`. For the privacy strategies the
/// artifact must be present and verify.
#[allow(clippy::too_many_arguments)]
pub fn emit_claim(
    spec: &VslaSpec,
    clause_id: &str,
    pred: &CompiledPredicate,
    batch: &Preflight,
    ok: bool,
    artifact: Option<ProofArtifact>,
    strategy: Strategy,
    backend: &dyn ProvingBackend,
) -> Result<ViolationClaim, EngineError> {
    if strategy.requires_proof() {
        let art = artifact
            .as_ref()
            .ok_or_else(|| EngineError::Proving(format!("{strategy} requires a proof artifact")))?;
        if !backend.verify(art) || art.public_outputs.ok != ok {
            return Err(EngineError::Proving("artifact does not verify".into()));
        }
    }
    let disclosed = match strategy {
        Strategy::FullDisclosure => Disclosure::FullBatch {
            manifest_cid: batch.anchor.manifest_cid,
            measurement_cids: batch.measurement_cids.clone(),
            root_signature: batch.anchor.root_signature,
        },
        Strategy::BatchPrivacy => Disclosure::None,
        Strategy::ViolationPrivacy => {
            if ok {
                return Err(EngineError::NoViolation);
            }
            let items = pred
                .violating_indices(&batch.vector)
                .into_iter()
                .map(|i| {
                    Ok(DisclosedMeasurement {
                        measurement: batch.measurements[i].clone(),
                        proof: batch.tree.prove(i).map_err(|e| EngineError::Integrity(e.to_string()))?,
                    })
                })
                .collect::<Result<Vec<_>, EngineError>>()?;
            Disclosure::Violations { items }
        }
    };
    Ok(ViolationClaim {
        spec_digest: spec.spec_digest,
        clause_id: clause_id.to_string(),
        program_id: pred.program_id,
        monitor_id: batch.anchor.monitor_id,
        batch_seq: batch.anchor.batch_seq,
        window: batch.anchor.window,
        root: batch.anchor.root,
        count: batch.anchor.count,
        ok,
        strategy,
        proof: if strategy.requires_proof() { artifact } else { None },
        disclosed,
        claim_cid: None,
    })
}

/// Compiles `clause_id` of `spec` for the engine named in its verification section.
pub fn compile_clause(spec: &VslaSpec, clause_id: &str) -> Result<CompiledPredicate, EngineError> {
    let clause = spec
        .clause(clause_id)
        .ok_or_else(|| EngineError::UnknownClause(clause_id.to_string()))?;
    if let WindowPolicy::TimeWindow { .. } = clause.window {
        return Err(EngineError::Unsupported(
            "time_window clauses span batches; only per_batch is evaluated".into(),
        ));
    }
    Ok(compile_predicate(clause, &spec.verification.aggregation_engine)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProofPolicy {
    Always,
    /// Optimistic mode: compliant batches get no artifact and no claim.
    OnViolation,
}

/// Evaluation pipeline over a registry and content store.
pub struct Engine<'a> {
    pub registry: &'a dyn EvidenceRegistry,
    pub cas: &'a dyn ContentStore,
    pub backend: &'a dyn ProvingBackend,
    pub submitter: String,
}

impl<'a> Engine<'a> {
    pub fn new(registry: &'a dyn EvidenceRegistry, cas: &'a dyn ContentStore, backend: &'a dyn ProvingBackend) -> Self {
        Self {
            registry,
            cas,
            backend,
            submitter: "engine".to_string(),
        }
    }

    pub fn lookup_anchor(&self, monitor: &KeyId, batch_seq: u64) -> Result<AnchorRecord, EngineError> {
        self.registry
            .anchor(monitor, batch_seq)
            .map_err(EngineError::Store)?
            .ok_or(EngineError::UnknownAnchor {
                monitor: *monitor,
                batch_seq,
            })
    }

    /// Builds a claim without storing or anchoring it.
    pub fn build_claim(
        &self,
        anchor: &AnchorRecord,
        spec: &VslaSpec,
        clause_id: &str,
        strategy: Strategy,
    ) -> Result<ViolationClaim, EngineError> {
        let pred = compile_clause(spec, clause_id)?;
        let batch = preflight(anchor, self.registry, self.cas)?;
        self.claim_for(spec, clause_id, &pred, &batch, strategy)
    }

    fn claim_for(
        &self,
        spec: &VslaSpec,
        clause_id: &str,
        pred: &CompiledPredicate,
        batch: &Preflight,
        strategy: Strategy,
    ) -> Result<ViolationClaim, EngineError> {
        let (ok, artifact) = if strategy.requires_proof() {
            let art = prove_compliance(pred, batch, self.backend)?;
            (art.public_outputs.ok, Some(art))
        } else {
            (evaluate_predicate(pred, &batch.vector)?, None)
        };
        emit_claim(spec, clause_id, pred, batch, ok, artifact, strategy, self.backend)
    }

    /// Stores the claim, then anchors it. Nothing is anchored if storing fails.
    pub fn publish(&self, mut claim: ViolationClaim) -> Result<ViolationClaim, EngineError> {
        let cid = self.cas.put(&claim.to_bytes()).map_err(EngineError::Store)?;
        self.registry
            .anchor_claim(cid, claim.root, &self.submitter)
            .map_err(EngineError::Store)?;
        claim.claim_cid = Some(cid);
        Ok(claim)
    }

    pub fn run_pipeline(
        &self,
        anchor: &AnchorRecord,
        spec: &VslaSpec,
        clause_id: &str,
        strategy: Strategy,
    ) -> Result<ViolationClaim, EngineError> {
        let claim = self.build_claim(anchor, spec, clause_id, strategy)?;
        self.publish(claim)
    }

    /// Under `OnViolation`, evaluates first and only proves, stores and
    /// anchors when the clause is breached.
    pub fn run_with_policy(
        &self,
        anchor: &AnchorRecord,
        spec: &VslaSpec,
        clause_id: &str,
        strategy: Strategy,
        policy: ProofPolicy,
    ) -> Result<Option<ViolationClaim>, EngineError> {
        let pred = compile_clause(spec, clause_id)?;
        let batch = preflight(anchor, self.registry, self.cas)?;
        if policy == ProofPolicy::OnViolation && evaluate_predicate(&pred, &batch.vector)? {
            return Ok(None);
        }
        let claim = self.claim_for(spec, clause_id, &pred, &batch, strategy)?;
        self.publish(claim).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::{Measurement, ProbeKind, SCHEMA_VERSION};
    use crate::vslas::{Comparator, Quantile, SliMetric, SloClause};

    fn batch(n: usize, slow: &[usize], key: &SigningKey) -> (Vec<SignedMeasurement>, Digest) {
        let ms: Vec<SignedMeasurement> = (0..n)
            .map(|i| {
                let m = Measurement {
                    monitor_id: key.public_key().id(),
                    sequence_no: i as u64,
                    timestamp_ms: 1_000 + i as u64,
                    latency_ms: if slow.contains(&i) { 400 } else { 10 },
                    status_code: 200,
                    probe_kind: ProbeKind::Active,
                    schema_version: SCHEMA_VERSION.into(),
                };
                SignedMeasurement::sign(m, key)
            })
            .collect();
        let leaves: Vec<Digest> = ms.iter().map(|m| leaf_digest(&m.measurement)).collect();
        let root = compute_root(&leaves).unwrap();
        (ms, root)
    }

    fn pred() -> CompiledPredicate {
        compile_predicate(
            &SloClause {
                id: "p95".into(),
                sli: SliMetric::LatencyMs,
                comparator: Comparator::Lt,
                threshold: 300,
                target: Quantile::new(95, 100).unwrap(),
                window: WindowPolicy::PerBatch,
            },
            "risc0",
        )
        .unwrap()
    }

    fn prove(n: usize, slow: &[usize]) -> (ReexecBackend, ProofArtifact, Vec<SignedMeasurement>, PublicKey) {
        let monitor = SigningKey::from_seed([3; 32]);
        let (ms, root) = batch(n, slow, &monitor);
        let public = PublicInputs {
            root,
            window: EvaluationWindow::new(1_000, 1_000 + n as u64 - 1).unwrap(),
            monitor_pubkey_id: monitor.public_key().id(),
        };
        let backend = ReexecBackend::new(SigningKey::from_seed([9; 32]));
        let pk = monitor.public_key();
        let art = backend
            .prove(&pred(), &public, &PrivateInputs { measurements: &ms, monitor_pubkey: &pk })
            .unwrap();
        (backend, art, ms, pk)
    }

    #[test]
    fn compliant_batch_outputs() {
        let (backend, art, ms, pk) = prove(20, &[]);
        assert_eq!(art.public_outputs, PublicOutputs { ok: true, sig_ok: true, merkle_ok: true });
        assert!(backend.verify(&art));
        assert!(backend.verify_with_inputs(&art, &PrivateInputs { measurements: &ms, monitor_pubkey: &pk }));
        let verifier_only = ReexecBackend::verifier(backend.engine_pubkey());
        assert!(verifier_only.verify(&art));
    }

    #[test]
    fn ten_percent_slow_violates() {
        let (_, art, _, _) = prove(100, &(0..10).collect::<Vec<_>>());
        assert_eq!(art.public_outputs, PublicOutputs { ok: false, sig_ok: true, merkle_ok: true });
    }

    #[test]
    fn artifact_binding() {
        let (backend, art, ms, pk) = prove(16, &[]);
        let mut flipped = art.clone();
        flipped.public_outputs.ok = false;
        assert!(!backend.verify(&flipped));

        let mut moved = art.clone();
        moved.public_inputs.window.t_end_ms += 1;
        assert!(!backend.verify(&moved));

        let mut rerooted = art.clone();
        rerooted.public_inputs.root = keccak256(b"other");
        assert!(!backend.verify(&rerooted));

        let mut reprogrammed = art.clone();
        reprogrammed.program_id = keccak256(b"other program");
        assert!(!backend.verify(&reprogrammed));

        let untrusted = ReexecBackend::verifier(SigningKey::from_seed([10; 32]).public_key());
        assert!(!untrusted.verify(&art));

        let mut fewer = ms.clone();
        fewer.pop();
        assert!(!backend.verify_with_inputs(&art, &PrivateInputs { measurements: &fewer, monitor_pubkey: &pk }));
    }

    #[test]
    fn payload_bit_flips_are_rejected() {
        let (backend, art, _, _) = prove(8, &[]);
        for i in 0..art.payload.len() {
            let mut bad = art.clone();
            bad.payload[i] ^= 0x01;
            assert!(!backend.verify(&bad), "flip at byte {i} accepted");
        }
    }

    #[test]
    fn wrong_signer_clears_sig_ok() {
        let monitor = SigningKey::from_seed([3; 32]);
        let (mut ms, _) = batch(4, &[], &monitor);
        ms[2] = SignedMeasurement {
            signature: SigningKey::from_seed([4; 32]).sign(&ms[2].measurement.canonical_encode()),
            ..ms[2].clone()
        };
        let leaves: Vec<Digest> = ms.iter().map(|m| leaf_digest(&m.measurement)).collect();
        let public = PublicInputs {
            root: compute_root(&leaves).unwrap(),
            window: EvaluationWindow::new(1_000, 1_003).unwrap(),
            monitor_pubkey_id: monitor.public_key().id(),
        };
        let out = run_compliance_program(
            &pred(),
            &public,
            &PrivateInputs { measurements: &ms, monitor_pubkey: &monitor.public_key() },
        )
        .unwrap();
        assert_eq!(out, PublicOutputs { ok: true, sig_ok: false, merkle_ok: true });
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("full".parse::<Strategy>(), Ok(Strategy::FullDisclosure));
        assert_eq!("batch_privacy".parse::<Strategy>(), Ok(Strategy::BatchPrivacy));
        assert_eq!("violation".parse::<Strategy>(), Ok(Strategy::ViolationPrivacy));
        assert!("partial".parse::<Strategy>().is_err());
    }
}
