//! Third-party claim verification. Each failed check is attributed to the
//! security property it violates: integrity (evidence unaltered),
//! authenticity (evidence from the registered, attested monitor) or
//! validity (the evaluated program is the one the parties agreed on).

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    compile_clause, preflight, Disclosure, EngineError, PrivateInputs, ProvingBackend, Strategy, ViolationClaim,
};
use crate::evidence::{leaf_digest, Digest, PublicKey, SignedMeasurement};
use crate::merkle::compute_root;
use crate::monitor::{compute_mrtd, monitor_program_id};
use crate::store::{BatchManifest, ContentId, ContentStore, MonitorRecord, RegistryView, StoreError};
use crate::vslas::{evaluate_predicate, CompiledPredicate, VslaSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Property {
    Integrity,
    Authenticity,
    Validity,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Property::Integrity => "integrity",
            Property::Authenticity => "authenticity",
            Property::Validity => "validity",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    SpecBinding,
    Registry,
    Attestation,
    Proof,
    Disclosure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Checks {
    pub spec_binding_ok: bool,
    pub registry_ok: bool,
    pub attestation_ok: bool,
    pub proof_ok: bool,
    pub disclosure_ok: bool,
}

impl Checks {
    pub fn all(&self) -> bool {
        self.spec_binding_ok && self.registry_ok && self.attestation_ok && self.proof_ok && self.disclosure_ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub check: CheckName,
    pub property: Property,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected(Failure),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub claim_cid: Option<ContentId>,
    pub checks: Checks,
    /// Every failed check, in evaluation order.
    pub failures: Vec<Failure>,
    pub verdict: Verdict,
}

impl VerificationReport {
    pub fn accepted(&self) -> bool {
        self.verdict == Verdict::Accepted
    }

    /// Property named by the verdict, if rejected.
    pub fn violated_property(&self) -> Option<Property> {
        match &self.verdict {
            Verdict::Accepted => None,
            Verdict::Rejected(f) => Some(f.property),
        }
    }
}

/// Errors that prevent verification from running at all; distinct from a
/// rejection.
#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("claim unavailable: {0}")]
    Retrieval(StoreError),
    #[error("claim is not well-formed: {0}")]
    Malformed(String),
}

type CheckResult = Result<(), (Property, String)>;

fn integrity(reason: impl Into<String>) -> CheckResult {
    Err((Property::Integrity, reason.into()))
}

fn authenticity(reason: impl Into<String>) -> CheckResult {
    Err((Property::Authenticity, reason.into()))
}

fn validity(reason: impl Into<String>) -> CheckResult {
    Err((Property::Validity, reason.into()))
}

fn store_failure(context: &str, e: StoreError) -> (Property, String) {
    (Property::Integrity, format!("{context}: {e}"))
}

/// Verifier configuration: the trust anchors and read access to evidence.
pub struct Verifier<'a> {
    pub registry: &'a dyn RegistryView,
    /// Needed only for full-disclosure claims and disputes.
    pub cas: Option<&'a dyn ContentStore>,
    pub backend: &'a dyn ProvingBackend,
    pub manufacturer_root: PublicKey,
    /// Published monitor program the mrtd must be derived from.
    pub monitor_program_id: Digest,
}

impl<'a> Verifier<'a> {
    pub fn new(
        registry: &'a dyn RegistryView,
        cas: Option<&'a dyn ContentStore>,
        backend: &'a dyn ProvingBackend,
        manufacturer_root: PublicKey,
    ) -> Self {
        Self {
            registry,
            cas,
            backend,
            manufacturer_root,
            monitor_program_id: monitor_program_id(),
        }
    }

    /// Fetches the claim from the content store and verifies it.
    pub fn verify_cid(&self, claim_cid: &ContentId, spec: &VslaSpec) -> Result<VerificationReport, VerifyError> {
        let cas = self
            .cas
            .ok_or_else(|| VerifyError::Malformed("no content store configured".into()))?;
        let claim = ViolationClaim::fetch(cas, claim_cid).map_err(|e| match e {
            StoreError::Serde(e) => VerifyError::Malformed(e.to_string()),
            other => VerifyError::Retrieval(other),
        })?;
        Ok(self.verify_claim(&claim, spec))
    }

    /// Runs every check; the verdict names the first failure.
    pub fn verify_claim(&self, claim: &ViolationClaim, spec: &VslaSpec) -> VerificationReport {
        let mut checks = Checks::default();
        let mut failures = Vec::new();
        let mut record_result = |name: CheckName, slot: &mut bool, result: CheckResult| {
            *slot = result.is_ok();
            if let Err((property, reason)) = result {
                failures.push(Failure {
                    check: name,
                    property,
                    reason,
                });
            }
        };

        let pred = self.spec_binding(claim, spec);
        record_result(
            CheckName::SpecBinding,
            &mut checks.spec_binding_ok,
            pred.as_ref().map(|_| ()).map_err(Clone::clone),
        );
        let record = self.registry.monitor(&claim.monitor_id).ok();
        record_result(CheckName::Registry, &mut checks.registry_ok, self.registry_check(claim, record.as_ref()));
        record_result(
            CheckName::Attestation,
            &mut checks.attestation_ok,
            self.attestation_check(record.as_ref(), spec),
        );
        record_result(CheckName::Proof, &mut checks.proof_ok, self.proof_check(claim));
        record_result(
            CheckName::Disclosure,
            &mut checks.disclosure_ok,
            self.disclosure_check(claim, pred.as_ref().ok(), record.as_ref()),
        );

        let verdict = match failures.first() {
            None => Verdict::Accepted,
            Some(f) => Verdict::Rejected(f.clone()),
        };
        debug_assert_eq!(verdict == Verdict::Accepted, checks.all());
        VerificationReport {
            claim_cid: claim.claim_cid,
            checks,
            failures,
            verdict,
        }
    }

    fn spec_binding(&self, claim: &ViolationClaim, spec: &VslaSpec) -> Result<CompiledPredicate, (Property, String)> {
        if claim.spec_digest != spec.spec_digest {
            return Err((Property::Validity, "claim refers to a different specification".into()));
        }
        let pred = compile_clause(spec, &claim.clause_id).map_err(|e| (Property::Validity, e.to_string()))?;
        if pred.program_id != claim.program_id {
            return Err((
                Property::Validity,
                format!("program id {} is not the compiled clause {}", claim.program_id, pred.program_id),
            ));
        }
        if let Some(art) = &claim.proof {
            if art.program_id != pred.program_id {
                return Err((Property::Validity, "proof was produced for a different program".into()));
            }
        }
        Ok(pred)
    }

    fn registry_check(&self, claim: &ViolationClaim, record: Option<&MonitorRecord>) -> CheckResult {
        let Some(record) = record else {
            return authenticity(format!("monitor {} is not registered", claim.monitor_id));
        };
        let trail = match self.registry.audit_trail(&claim.monitor_id) {
            Ok(t) => t,
            Err(e) => return authenticity(e.to_string()),
        };
        if trail.iter().enumerate().any(|(i, a)| a.batch_seq != i as u64) {
            return authenticity("audit trail has a sequence gap");
        }
        let Some(anchor) = trail.iter().find(|a| a.batch_seq == claim.batch_seq) else {
            return authenticity(format!("batch {} was never anchored", claim.batch_seq));
        };
        if anchor.root != claim.root {
            return authenticity(format!("root {} is not the anchored root of batch {}", claim.root, claim.batch_seq));
        }
        if anchor.window != claim.window || anchor.count != claim.count {
            return authenticity("claim window or count differs from the anchored batch header");
        }
        if !anchor.verify_signature(&record.pubkey) {
            return authenticity("anchored root is not signed by the registered monitor key");
        }
        Ok(())
    }

    fn attestation_check(&self, record: Option<&MonitorRecord>, spec: &VslaSpec) -> CheckResult {
        let Some(record) = record else {
            return authenticity("no monitor record to attest");
        };
        if !record.quote.verify(&self.manufacturer_root) {
            return authenticity("attestation quote does not chain to the manufacturer root");
        }
        if record.quote.monitor_pubkey != record.pubkey || record.pubkey.id() != record.monitor_id {
            return authenticity("quote does not bind the registered monitor key");
        }
        if record.config.verify_cosignatures().is_err() {
            return authenticity("monitor configuration is not co-signed by both parties");
        }
        if record.program_id != self.monitor_program_id {
            return validity("monitor runs an unpublished program");
        }
        if record.quote.mrtd != compute_mrtd(&record.program_id, &record.config) {
            return validity("mrtd does not match the published program and configuration");
        }
        if !spec.declares_monitor_kind(record.config.monitor_kind) {
            return validity(format!(
                "specification declares no {} monitor",
                record.config.monitor_kind
            ));
        }
        Ok(())
    }

    fn proof_check(&self, claim: &ViolationClaim) -> CheckResult {
        let art = match (&claim.proof, claim.strategy) {
            (None, Strategy::FullDisclosure) => return Ok(()),
            (None, s) => return integrity(format!("{s} claim carries no proof")),
            (Some(art), _) => art,
        };
        if !self.backend.verify(art) {
            return integrity("proof artifact does not verify");
        }
        let public = &art.public_inputs;
        if public.root != claim.root || public.window != claim.window || public.monitor_pubkey_id != claim.monitor_id {
            return integrity("proof public inputs differ from the claim");
        }
        if art.public_outputs.ok != claim.ok {
            return integrity("claimed ok bit differs from the proven output");
        }
        if !art.public_outputs.merkle_ok {
            return integrity("proven program reports a Merkle root mismatch");
        }
        if !art.public_outputs.sig_ok {
            return authenticity("proven program reports a measurement signature failure");
        }
        Ok(())
    }

    fn disclosure_check(
        &self,
        claim: &ViolationClaim,
        pred: Option<&CompiledPredicate>,
        record: Option<&MonitorRecord>,
    ) -> CheckResult {
        match (&claim.disclosed, claim.strategy) {
            (Disclosure::None, Strategy::BatchPrivacy) => Ok(()),
            (Disclosure::FullBatch { manifest_cid, measurement_cids, .. }, Strategy::FullDisclosure) => {
                let Some(record) = record else {
                    return authenticity("unknown monitor");
                };
                let Some(pred) = pred else {
                    return validity("no predicate to re-evaluate");
                };
                self.check_full_batch(claim, pred, &record.pubkey, manifest_cid, measurement_cids)
            }
            (Disclosure::Violations { items }, Strategy::ViolationPrivacy) => {
                let Some(record) = record else {
                    return authenticity("unknown monitor");
                };
                let Some(pred) = pred else {
                    return validity("no predicate to check disclosures against");
                };
                check_violations(claim, pred, &record.pubkey, items.iter().map(|d| (&d.measurement, &d.proof)))
            }
            (_, s) => integrity(format!("disclosure payload does not match strategy {s}")),
        }
    }

    fn check_full_batch(
        &self,
        claim: &ViolationClaim,
        pred: &CompiledPredicate,
        pubkey: &PublicKey,
        manifest_cid: &ContentId,
        measurement_cids: &[ContentId],
    ) -> CheckResult {
        let Some(cas) = self.cas else {
            return integrity("full disclosure requires access to the content store");
        };
        let anchor = match self.registry.anchor(&claim.monitor_id, claim.batch_seq) {
            Ok(Some(a)) => a,
            _ => return authenticity("batch not anchored"),
        };
        if &anchor.manifest_cid != manifest_cid {
            return integrity("disclosed manifest is not the anchored manifest");
        }
        let manifest = match cas.get(manifest_cid).and_then(|b| BatchManifest::from_bytes(&b)) {
            Ok(m) => m,
            Err(e) => return Err(store_failure("manifest", e)),
        };
        if manifest.measurement_cids != measurement_cids {
            return integrity("disclosed measurement list differs from the manifest");
        }
        let mut measurements = Vec::with_capacity(measurement_cids.len());
        for (i, cid) in measurement_cids.iter().enumerate() {
            let bytes = match cas.get(cid) {
                Ok(b) => b,
                Err(e) => return Err(store_failure(&format!("measurement {i}"), e)),
            };
            match SignedMeasurement::from_object_bytes(&bytes) {
                Ok(m) => measurements.push(m),
                Err(e) => return integrity(format!("measurement {i}: {e}")),
            }
        }
        let leaves: Vec<Digest> = measurements.iter().map(|m| leaf_digest(&m.measurement)).collect();
        if compute_root(&leaves).ok() != Some(claim.root) {
            return integrity("disclosed measurements do not hash to the claimed root");
        }
        if let Some(i) = measurements
            .iter()
            .position(|m| m.signer_pubkey_id != claim.monitor_id || !m.verify(pubkey))
        {
            return authenticity(format!("measurement {i} is not signed by the monitor"));
        }
        let v = crate::evidence::MetricVector::from_measurements(measurements.iter().map(|m| &m.measurement));
        match evaluate_predicate(pred, &v) {
            Ok(ok) if ok == claim.ok => {}
            Ok(_) => return integrity("re-evaluation of the disclosed batch contradicts the claimed ok bit"),
            Err(e) => return integrity(e.to_string()),
        }
        if let Some(art) = &claim.proof {
            let private = PrivateInputs {
                measurements: &measurements,
                monitor_pubkey: pubkey,
            };
            if !self.backend.verify_with_inputs(art, &private) {
                return integrity("proof does not match the disclosed inputs");
            }
        }
        Ok(())
    }

    /// Re-checks a claim's evidence in depth after a challenge.
    pub fn resolve_dispute(&self, claim: &ViolationClaim, challenge: &Challenge) -> Result<Resolution, DisputeError> {
        let outcome = match claim.strategy {
            Strategy::FullDisclosure => ResolutionOutcome::NotApplicable,
            Strategy::BatchPrivacy => {
                let cas = self.cas.ok_or(DisputeError::NoStore)?;
                let anchor = self
                    .registry
                    .anchor(&claim.monitor_id, claim.batch_seq)
                    .map_err(DisputeError::Registry)?
                    .ok_or(DisputeError::NotAnchored)?;
                let batch = preflight(&anchor, self.registry, cas).map_err(DisputeError::Evidence)?;
                let pred = match &claim.proof {
                    Some(art) if art.program_id == claim.program_id => pred_from_artifact(art)?,
                    _ => return Err(DisputeError::Malformed("batch privacy claim has no usable proof".into())),
                };
                let ok = evaluate_predicate(&pred, &batch.vector).map_err(|e| DisputeError::Malformed(e.to_string()))?;
                let proof_matches = claim
                    .proof
                    .as_ref()
                    .is_some_and(|art| self.backend.verify_with_inputs(art, &batch.private_inputs()));
                ResolutionOutcome::BatchRevealed {
                    verified: batch.measurements.len(),
                    ok,
                    consistent: ok == claim.ok && proof_matches,
                }
            }
            Strategy::ViolationPrivacy => {
                let Disclosure::Violations { items } = &claim.disclosed else {
                    return Err(DisputeError::Malformed("violation claim without violations".into()));
                };
                let record = self.registry.monitor(&claim.monitor_id).map_err(DisputeError::Registry)?;
                let pred = match &claim.proof {
                    Some(art) => pred_from_artifact(art)?,
                    None => return Err(DisputeError::Malformed("violation claim has no proof".into())),
                };
                let valid = check_violations(claim, &pred, &record.pubkey, items.iter().map(|d| (&d.measurement, &d.proof)));
                ResolutionOutcome::ViolationsChecked {
                    checked: items.len(),
                    consistent: valid.is_ok(),
                }
            }
        };
        Ok(Resolution {
            claim_cid: claim.claim_cid,
            challenger: challenge.challenger.clone(),
            outcome,
        })
    }
}

fn pred_from_artifact(art: &crate::engine::ProofArtifact) -> Result<CompiledPredicate, DisputeError> {
    #[derive(Deserialize)]
    struct Payload {
        predicate: CompiledPredicate,
    }
    let p: Payload = serde_json::from_slice(&art.payload).map_err(|e| DisputeError::Malformed(e.to_string()))?;
    p.predicate
        .check()
        .map_err(|e| DisputeError::Malformed(e.to_string()))?;
    Ok(p.predicate)
}

/// Checks violation disclosures: each is included under the root, signed by
/// the monitor and actually fails the clause; together they must be enough
/// to breach the target.
fn check_violations<'m>(
    claim: &ViolationClaim,
    pred: &CompiledPredicate,
    pubkey: &PublicKey,
    items: impl ExactSizeIterator<Item = (&'m SignedMeasurement, &'m crate::merkle::InclusionProof)>,
) -> CheckResult {
    if claim.ok {
        return integrity("violation disclosure on a claim reporting compliance");
    }
    let k = items.len() as u64;
    let mut seen = BTreeSet::new();
    let mut signature_failure = None;
    for (i, (m, proof)) in items.enumerate() {
        if proof.root != claim.root
            || proof.leaf_index >= claim.count
            || !proof.sides_match_index()
            || !proof.verify(&leaf_digest(&m.measurement))
        {
            return integrity(format!("disclosed measurement {i} is not included under the claimed root"));
        }
        if !seen.insert(proof.leaf_index) {
            return integrity(format!("leaf {} disclosed twice", proof.leaf_index));
        }
        if pred
            .clause
            .satisfied_by(m.measurement.latency_ms, m.measurement.status_code)
        {
            return integrity(format!("disclosed measurement {i} does not violate the clause"));
        }
        if signature_failure.is_none() && (m.signer_pubkey_id != claim.monitor_id || !m.verify(pubkey)) {
            signature_failure = Some(i);
        }
    }
    if let Some(i) = signature_failure {
        return authenticity(format!("disclosed measurement {i} is not signed by the monitor"));
    }
    if pred.clause.target.met_by(claim.count - k.min(claim.count), claim.count) {
        return integrity(format!("{k} disclosed violations of {} samples cannot breach the target", claim.count));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Challenge {
    pub challenger: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResolutionOutcome {
    /// The evidence is already public.
    NotApplicable,
    BatchRevealed { verified: usize, ok: bool, consistent: bool },
    ViolationsChecked { checked: usize, consistent: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub claim_cid: Option<ContentId>,
    pub challenger: String,
    pub outcome: ResolutionOutcome,
}

#[derive(Debug, Error)]
pub enum DisputeError {
    #[error("no content store available for disclosure")]
    NoStore,
    #[error("the claimed batch is not anchored")]
    NotAnchored,
    #[error("registry: {0}")]
    Registry(StoreError),
    #[error("store could not produce the disclosure: {0}")]
    Evidence(EngineError),
    #[error("claim is malformed: {0}")]
    Malformed(String),
}
