use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsla_core::engine::{Disclosure, ReexecBackend, Strategy, ViolationClaim};
use vsla_core::evidence::{ProbeKind, SigningKey};
use vsla_core::sim::{random_clause, random_samples, spec_document, spec_for, ClauseDoc, Deployment, Sample};
use vsla_core::store::{BatchManifest, ContentId, ContentStore};
use vsla_core::tamper::{forge, TamperClass};
use vsla_core::verifier::{
    Challenge, CheckName, DisputeError, Property, ResolutionOutcome, Verdict, Verifier, VerifyError,
};
use vsla_core::vslas::{parse_spec, Comparator, SliMetric, VslaSpec};

const CLAUSE: &str = "p95-under-300";

fn spec() -> VslaSpec {
    spec_for(&[ClauseDoc::latency_below(CLAUSE, 300, 95, 100)])
}

fn batch(d: &Deployment, slow: usize) -> vsla_core::store::AnchorRecord {
    let mut m = d.active_monitor(100, 10).unwrap();
    let samples: Vec<Sample> = (0..100).map(|i| Sample::ok(if i < slow { 400 } else { 30 })).collect();
    d.anchor_samples(&mut m, &samples).unwrap()
}

fn challenge() -> Challenge {
    Challenge {
        challenger: "consumer".into(),
    }
}

#[test]
fn honest_claims_are_accepted_for_every_strategy() {
    let d = Deployment::new(1);
    let spec = spec();
    let anchor = batch(&d, 8);
    for strategy in Strategy::ALL {
        let claim = d.engine().run_pipeline(&anchor, &spec, CLAUSE, strategy).unwrap();
        let report = d.verifier().verify_claim(&claim, &spec);
        assert!(report.accepted(), "{strategy}: {:?}", report.failures);
        assert!(report.checks.all());
        assert_eq!(report.claim_cid, claim.claim_cid);
    }
}

#[test]
fn verify_by_cid() {
    let d = Deployment::new(2);
    let spec = spec();
    let claim = d
        .engine()
        .run_pipeline(&batch(&d, 10), &spec, CLAUSE, Strategy::ViolationPrivacy)
        .unwrap();
    let report = d.verifier().verify_cid(&claim.claim_cid.unwrap(), &spec).unwrap();
    assert!(report.accepted());

    let missing = ContentId::for_content(b"missing");
    assert!(matches!(d.verifier().verify_cid(&missing, &spec), Err(VerifyError::Retrieval(_))));
    let junk = d.cas.put(b"not a claim").unwrap();
    assert!(matches!(d.verifier().verify_cid(&junk, &spec), Err(VerifyError::Malformed(_))));
}

#[test]
fn report_serializes_with_named_checks() {
    let d = Deployment::new(3);
    let spec = spec();
    let mut claim = d
        .engine()
        .run_pipeline(&batch(&d, 10), &spec, CLAUSE, Strategy::BatchPrivacy)
        .unwrap();
    claim.ok = true;
    let report = d.verifier().verify_claim(&claim, &spec);
    let json = serde_json::to_value(&report).unwrap();
    assert_eq!(json["checks"]["proof_ok"], false);
    assert_eq!(json["checks"]["registry_ok"], true);
    assert_eq!(json["verdict"]["verdict"], "rejected");
    assert_eq!(json["verdict"]["check"], "proof");
    assert_eq!(json["verdict"]["property"], "integrity");
}

#[test]
fn each_tamper_class_is_rejected_with_its_property() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for class in TamperClass::ALL {
        for _ in 0..8 {
            let d = Deployment::new(rng.gen());
            let case = forge(&d, class, &mut rng);
            let report = d.verifier().verify_claim(&case.claim, &case.spec);
            assert!(!report.accepted(), "{} accepted", class.as_str());
            assert_eq!(
                report.violated_property(),
                Some(class.expected_property()),
                "{}: {:?}",
                class.as_str(),
                report.verdict
            );
        }
    }
}

#[test]
fn claim_against_another_spec_is_invalid() {
    let d = Deployment::new(5);
    let claim = d
        .engine()
        .run_pipeline(&batch(&d, 10), &spec(), CLAUSE, Strategy::BatchPrivacy)
        .unwrap();
    let other = spec_for(&[ClauseDoc::latency_below(CLAUSE, 300, 9, 10)]);
    let report = d.verifier().verify_claim(&claim, &other);
    assert_eq!(report.violated_property(), Some(Property::Validity));
    let Verdict::Rejected(f) = report.verdict else { unreachable!() };
    assert_eq!(f.check, CheckName::SpecBinding);
}

#[test]
fn monitor_kind_must_be_declared() {
    let d = Deployment::new(6);
    let claim = d
        .engine()
        .run_pipeline(&batch(&d, 10), &spec(), CLAUSE, Strategy::BatchPrivacy)
        .unwrap();
    // Same clause, but only passive monitors agreed on; the digest changes so
    // the claim is re-pointed at it to isolate the attestation check.
    let doc = spec_document("sim", &[ClauseDoc::latency_below(CLAUSE, 300, 95, 100)], "tee-passive", "risc0");
    let passive = parse_spec(doc.as_bytes()).unwrap();
    let mut retargeted = claim.clone();
    retargeted.spec_digest = passive.spec_digest;
    let report = d.verifier().verify_claim(&retargeted, &passive);
    let Verdict::Rejected(f) = report.verdict else { panic!("accepted") };
    assert_eq!((f.check, f.property), (CheckName::Attestation, Property::Validity));
}

#[test]
fn unpublished_monitor_program_is_invalid() {
    let d = Deployment::new(7);
    let spec = spec();
    let claim = d
        .engine()
        .run_pipeline(&batch(&d, 10), &spec, CLAUSE, Strategy::BatchPrivacy)
        .unwrap();
    let mut verifier = d.verifier();
    verifier.monitor_program_id = vsla_core::evidence::keccak256(b"some other monitor build");
    let report = verifier.verify_claim(&claim, &spec);
    assert_eq!(report.violated_property(), Some(Property::Validity));
}

#[test]
fn untrusted_manufacturer_root_fails_attestation() {
    let d = Deployment::new(8);
    let spec = spec();
    let claim = d
        .engine()
        .run_pipeline(&batch(&d, 10), &spec, CLAUSE, Strategy::BatchPrivacy)
        .unwrap();
    let mut verifier = d.verifier();
    verifier.manufacturer_root = SigningKey::from_seed([4; 32]).public_key();
    let Verdict::Rejected(f) = verifier.verify_claim(&claim, &spec).verdict else {
        panic!("accepted")
    };
    assert_eq!((f.check, f.property), (CheckName::Attestation, Property::Authenticity));
}

#[test]
fn untrusted_engine_key_fails_proof() {
    let d = Deployment::new(9);
    let spec = spec();
    let claim = d
        .engine()
        .run_pipeline(&batch(&d, 10), &spec, CLAUSE, Strategy::BatchPrivacy)
        .unwrap();
    let other = ReexecBackend::verifier(SigningKey::from_seed([5; 32]).public_key());
    let verifier = Verifier::new(d.registry.as_ref(), Some(d.cas.as_ref()), &other, d.manufacturer_root());
    let Verdict::Rejected(f) = verifier.verify_claim(&claim, &spec).verdict else {
        panic!("accepted")
    };
    assert_eq!((f.check, f.property), (CheckName::Proof, Property::Integrity));
}

#[test]
fn missing_proof_for_privacy_strategy() {
    let d = Deployment::new(10);
    let spec = spec();
    let mut claim = d
        .engine()
        .run_pipeline(&batch(&d, 10), &spec, CLAUSE, Strategy::BatchPrivacy)
        .unwrap();
    claim.proof = None;
    assert_eq!(d.verifier().verify_claim(&claim, &spec).violated_property(), Some(Property::Integrity));
}

#[test]
fn too_few_disclosed_violations() {
    let d = Deployment::new(11);
    let spec = spec();
    let honest = d
        .engine()
        .run_pipeline(&batch(&d, 10), &spec, CLAUSE, Strategy::ViolationPrivacy)
        .unwrap();
    // 95% of 100 tolerates 5 violations; disclosing only 5 proves nothing.
    let mut claim = honest.clone();
    let Disclosure::Violations { items } = &mut claim.disclosed else { unreachable!() };
    items.truncate(5);
    let Verdict::Rejected(f) = d.verifier().verify_claim(&claim, &spec).verdict else {
        panic!("accepted")
    };
    assert_eq!((f.check, f.property), (CheckName::Disclosure, Property::Integrity));

    // Six suffice.
    let mut claim = honest.clone();
    let Disclosure::Violations { items } = &mut claim.disclosed else { unreachable!() };
    items.truncate(6);
    assert!(d.verifier().verify_claim(&claim, &spec).accepted());
}

#[test]
fn repeated_disclosures_do_not_count_twice() {
    let d = Deployment::new(12);
    let spec = spec();
    let mut claim = d
        .engine()
        .run_pipeline(&batch(&d, 6), &spec, CLAUSE, Strategy::ViolationPrivacy)
        .unwrap();
    let Disclosure::Violations { items } = &mut claim.disclosed else { unreachable!() };
    items.truncate(5);
    items.push(items[0].clone());
    assert_eq!(d.verifier().verify_claim(&claim, &spec).violated_property(), Some(Property::Integrity));

    // Same leaf relabelled with another index is caught by the path sides.
    let Disclosure::Violations { items } = &mut claim.disclosed else { unreachable!() };
    items[5].proof.leaf_index = 99;
    assert_eq!(d.verifier().verify_claim(&claim, &spec).violated_property(), Some(Property::Integrity));
}

#[test]
fn disclosing_a_compliant_sample_is_rejected() {
    let d = Deployment::new(13);
    let spec = spec();
    let anchor = batch(&d, 10);
    let full = d.engine().build_claim(&anchor, &spec, CLAUSE, Strategy::FullDisclosure).unwrap();
    let mut claim = d
        .engine()
        .run_pipeline(&anchor, &spec, CLAUSE, Strategy::ViolationPrivacy)
        .unwrap();
    let Disclosure::FullBatch { measurement_cids, .. } = &full.disclosed else { unreachable!() };
    let batch = vsla_core::engine::preflight(&anchor, d.registry.as_ref(), d.cas.as_ref()).unwrap();
    assert_eq!(batch.measurement_cids, *measurement_cids);
    let Disclosure::Violations { items } = &mut claim.disclosed else { unreachable!() };
    items[0] = vsla_core::engine::DisclosedMeasurement {
        measurement: batch.measurements[50].clone(),
        proof: batch.tree.prove(50).unwrap(),
    };
    assert_eq!(d.verifier().verify_claim(&claim, &spec).violated_property(), Some(Property::Integrity));
}

#[test]
fn privacy_strategies_verify_without_measurements() {
    let d = Deployment::new(14);
    let spec = spec();
    let anchor = batch(&d, 10);
    let engine = d.engine();
    let claims: Vec<ViolationClaim> = Strategy::ALL
        .iter()
        .map(|s| engine.run_pipeline(&anchor, &spec, CLAUSE, *s).unwrap())
        .collect();
    let manifest = BatchManifest::from_bytes(&d.cas.get(&anchor.manifest_cid).unwrap()).unwrap();
    for cid in &manifest.measurement_cids {
        assert!(d.cas.remove(cid));
    }
    assert!(d.cas.remove(&anchor.manifest_cid));
    for claim in &claims {
        let report = d.verifier().verify_claim(claim, &spec);
        if claim.strategy == Strategy::FullDisclosure {
            assert_eq!(report.violated_property(), Some(Property::Integrity));
        } else {
            assert!(report.accepted(), "{}: {:?}", claim.strategy, report.failures);
        }
    }
}

#[test]
fn offline_verification_from_snapshot() {
    let d = Deployment::new(15);
    let spec = spec();
    let claim = d
        .engine()
        .run_pipeline(&batch(&d, 10), &spec, CLAUSE, Strategy::ViolationPrivacy)
        .unwrap();
    let snapshot = d.registry.snapshot(None);
    let backend = ReexecBackend::verifier(d.backend.engine_pubkey());
    let verifier = Verifier::new(&snapshot, None, &backend, d.manufacturer_root());
    let report = verifier.verify_claim(&claim, &spec);
    assert!(report.accepted(), "{:?}", report.failures);
}

#[test]
fn all_checks_run_after_a_failure() {
    let d = Deployment::new(16);
    let spec = spec();
    let mut claim = d
        .engine()
        .run_pipeline(&batch(&d, 10), &spec, CLAUSE, Strategy::BatchPrivacy)
        .unwrap();
    claim.program_id = vsla_core::evidence::keccak256(b"x");
    claim.ok = true;
    let report = d.verifier().verify_claim(&claim, &spec);
    let names: Vec<CheckName> = report.failures.iter().map(|f| f.check).collect();
    assert_eq!(names, vec![CheckName::SpecBinding, CheckName::Proof]);
    assert!(report.checks.registry_ok && report.checks.attestation_ok && report.checks.disclosure_ok);
    assert_eq!(report.violated_property(), Some(Property::Validity));
}

#[test]
fn dispute_reveals_batch_for_batch_privacy() {
    let d = Deployment::new(17);
    let spec = spec();
    let claim = d
        .engine()
        .run_pipeline(&batch(&d, 10), &spec, CLAUSE, Strategy::BatchPrivacy)
        .unwrap();
    let res = d.verifier().resolve_dispute(&claim, &challenge()).unwrap();
    assert_eq!(res.challenger, "consumer");
    assert_eq!(
        res.outcome,
        ResolutionOutcome::BatchRevealed {
            verified: 100,
            ok: false,
            consistent: true
        }
    );

    let mut lying = claim.clone();
    lying.ok = true;
    let res = d.verifier().resolve_dispute(&lying, &challenge()).unwrap();
    assert!(matches!(res.outcome, ResolutionOutcome::BatchRevealed { consistent: false, .. }));
}

#[test]
fn dispute_outcomes_for_other_strategies() {
    let d = Deployment::new(18);
    let spec = spec();
    let anchor = batch(&d, 10);
    let engine = d.engine();
    let full = engine.run_pipeline(&anchor, &spec, CLAUSE, Strategy::FullDisclosure).unwrap();
    assert_eq!(
        d.verifier().resolve_dispute(&full, &challenge()).unwrap().outcome,
        ResolutionOutcome::NotApplicable
    );
    let viol = engine.run_pipeline(&anchor, &spec, CLAUSE, Strategy::ViolationPrivacy).unwrap();
    assert_eq!(
        d.verifier().resolve_dispute(&viol, &challenge()).unwrap().outcome,
        ResolutionOutcome::ViolationsChecked {
            checked: 10,
            consistent: true
        }
    );
}

#[test]
fn dispute_fails_when_evidence_is_withheld() {
    let d = Deployment::new(19);
    let spec = spec();
    let anchor = batch(&d, 10);
    let claim = d.engine().run_pipeline(&anchor, &spec, CLAUSE, Strategy::BatchPrivacy).unwrap();
    d.cas.remove(&anchor.manifest_cid);
    assert!(matches!(
        d.verifier().resolve_dispute(&claim, &challenge()),
        Err(DisputeError::Evidence(_))
    ));
    let snapshot = d.registry.snapshot(None);
    let verifier = Verifier::new(&snapshot, None, &d.backend, d.manufacturer_root());
    assert!(matches!(verifier.resolve_dispute(&claim, &challenge()), Err(DisputeError::NoStore)));
}

/// Independent oracle: indices whose sample fails the clause.
fn oracle_violations(doc: &ClauseDoc, samples: &[Sample]) -> Vec<u64> {
    samples
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            let v = match doc.sli {
                SliMetric::LatencyMs => u64::from(s.latency_ms),
                SliMetric::SuccessStatus => u64::from((200..400).contains(&s.status)),
            };
            let holds = match doc.op {
                Comparator::Lt => v < doc.value,
                Comparator::Le => v <= doc.value,
                Comparator::Gt => v > doc.value,
                Comparator::Ge => v >= doc.value,
            };
            !holds
        })
        .map(|(i, _)| i as u64)
        .collect()
}

#[test]
fn random_honest_runs_are_accepted() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let d = Deployment::new(20);
    for _ in 0..60 {
        let n = rng.gen_range(1..=256);
        let doc = random_clause(&mut rng, "c");
        let spec = spec_for(std::slice::from_ref(&doc));
        let samples = random_samples(&mut rng, n);
        let violating = oracle_violations(&doc, &samples);
        let breached = (n as u64 - violating.len() as u64) * doc.target.den() < doc.target.num() * n as u64;
        let mut m = d.active_monitor(n as u64, 5).unwrap();
        let anchor = d.anchor_samples(&mut m, &samples).unwrap();
        let strategy = if breached {
            Strategy::ALL[rng.gen_range(0..3)]
        } else {
            Strategy::ALL[rng.gen_range(0..2)]
        };
        let claim = d.engine().run_pipeline(&anchor, &spec, "c", strategy).unwrap();
        assert_eq!(claim.ok, !breached);
        let report = d.verifier().verify_claim(&claim, &spec);
        assert!(report.accepted(), "{:?}", report.failures);
        if let Disclosure::Violations { items } = &claim.disclosed {
            let disclosed: Vec<u64> = items.iter().map(|i| i.proof.leaf_index).collect();
            assert_eq!(disclosed, violating);
        }
    }
}

#[test]
fn passive_claims_need_a_passive_declaration() {
    let d = Deployment::new(21);
    let mut m = d.boot(d.config(ProbeKind::Passive, 2, 10)).unwrap();
    d.register(&m).unwrap();
    m.observe(d.clock.advance(1), 20, 200).unwrap();
    m.observe(d.clock.advance(1), 900, 200).unwrap();
    let anchor = d.seal_and_anchor(&mut m).unwrap();
    let spec = spec_for(&[ClauseDoc::latency_below("c", 300, 1, 1)]);
    let claim = d.engine().run_pipeline(&anchor, &spec, "c", Strategy::ViolationPrivacy).unwrap();
    assert_eq!(d.verifier().verify_claim(&claim, &spec).violated_property(), Some(Property::Validity));
}
