//! Forged and corrupted claims for soundness testing. Each [`TamperClass`]
//! starts from an honest claim over a freshly anchored batch and applies one
//! mutation; [`TamperClass::expected_property`] is the property a verifier
//! must name when rejecting it.

use rand::Rng;

use crate::engine::{Disclosure, Strategy, ViolationClaim};
use crate::evidence::{keccak256, Digest, SignedMeasurement, SigningKey};
use crate::sim::{spec_for, ClauseDoc, Deployment, Sample};
use crate::store::ContentStore;
use crate::verifier::Property;
use crate::vslas::{compile_predicate, VslaSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TamperClass {
    /// Stored measurement bytes overwritten behind their CID.
    MeasurementBytes,
    /// Latency field changed and the leaf recomputed.
    LatencyRehash,
    /// Disclosed measurement signed by a key other than the monitor's.
    WrongKey,
    FlippedOk,
    /// Program id of a different clause.
    MismatchedProgram,
    /// Claim over a root the registry never anchored.
    UnanchoredRoot,
}

impl TamperClass {
    pub const ALL: [TamperClass; 6] = [
        TamperClass::MeasurementBytes,
        TamperClass::LatencyRehash,
        TamperClass::WrongKey,
        TamperClass::FlippedOk,
        TamperClass::MismatchedProgram,
        TamperClass::UnanchoredRoot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TamperClass::MeasurementBytes => "modified measurement bytes",
            TamperClass::LatencyRehash => "altered latency with re-hash",
            TamperClass::WrongKey => "wrong signing key",
            TamperClass::FlippedOk => "flipped ok bit",
            TamperClass::MismatchedProgram => "mismatched program_id",
            TamperClass::UnanchoredRoot => "unanchored root",
        }
    }

    pub fn expected_property(self) -> Property {
        match self {
            TamperClass::MeasurementBytes | TamperClass::LatencyRehash | TamperClass::FlippedOk => Property::Integrity,
            TamperClass::WrongKey | TamperClass::UnanchoredRoot => Property::Authenticity,
            TamperClass::MismatchedProgram => Property::Validity,
        }
    }
}

pub const PRIMARY_CLAUSE: &str = "latency";
pub const DECOY_CLAUSE: &str = "latency-strict";

pub struct TamperCase {
    pub class: TamperClass,
    pub spec: VslaSpec,
    pub claim: ViolationClaim,
}

/// Samples with at least a fifth slow, so every primary target is breached.
fn violating_samples<R: Rng>(rng: &mut R, n: usize) -> Vec<Sample> {
    let mut samples: Vec<Sample> = (0..n).map(|_| Sample::ok(rng.gen_range(1..300))).collect();
    let slow = n / 5 + 1;
    for _ in 0..slow {
        let i = rng.gen_range(0..n);
        samples[i] = Sample::ok(rng.gen_range(300..3000));
    }
    let missing = slow.saturating_sub(samples.iter().filter(|s| s.latency_ms >= 300).count());
    for s in samples.iter_mut().filter(|s| s.latency_ms < 300).take(missing) {
        s.latency_ms += 300;
    }
    samples
}

fn tamper_spec<R: Rng>(rng: &mut R) -> VslaSpec {
    let (num, den) = [(1, 1), (9, 10), (19, 20), (4, 5)][rng.gen_range(0..4)];
    spec_for(&[
        ClauseDoc::latency_below(PRIMARY_CLAUSE, 300, num, den),
        ClauseDoc::latency_below(DECOY_CLAUSE, rng.gen_range(10..300), num, den),
    ])
}

fn honest(d: &Deployment, spec: &VslaSpec, samples: &[Sample], strategy: Strategy) -> ViolationClaim {
    let mut monitor = d.active_monitor(samples.len() as u64, 10).expect("monitor boots");
    let anchor = d.anchor_samples(&mut monitor, samples).expect("batch anchors");
    d.engine()
        .run_pipeline(&anchor, spec, PRIMARY_CLAUSE, strategy)
        .expect("honest claim")
}

fn violation_items(claim: &mut ViolationClaim) -> &mut Vec<crate::engine::DisclosedMeasurement> {
    match &mut claim.disclosed {
        Disclosure::Violations { items } => items,
        _ => panic!("not a violation claim"),
    }
}

/// Builds one randomized instance of `class` against `d`.
pub fn forge<R: Rng>(d: &Deployment, class: TamperClass, rng: &mut R) -> TamperCase {
    let n = rng.gen_range(8..=256);
    let spec = tamper_spec(rng);
    let samples = violating_samples(rng, n);
    let claim = match class {
        TamperClass::MeasurementBytes => {
            let claim = honest(d, &spec, &samples, Strategy::FullDisclosure);
            let Disclosure::FullBatch { measurement_cids, manifest_cid, .. } = &claim.disclosed else {
                unreachable!()
            };
            let target = if rng.gen_bool(0.8) {
                measurement_cids[rng.gen_range(0..measurement_cids.len())]
            } else {
                *manifest_cid
            };
            let mut bytes = d.cas.get(&target).expect("stored");
            let at = rng.gen_range(0..bytes.len());
            bytes[at] ^= rng.gen_range(1..=255u8);
            d.cas.overwrite_unchecked(target, bytes);
            claim
        }
        TamperClass::LatencyRehash => {
            if rng.gen_bool(0.5) {
                let mut claim = honest(d, &spec, &samples, Strategy::ViolationPrivacy);
                let items = violation_items(&mut claim);
                let i = rng.gen_range(0..items.len());
                items[i].measurement.measurement.latency_ms += rng.gen_range(1..1000);
                claim
            } else {
                // Re-stored under a fresh CID and substituted into the list.
                let mut claim = honest(d, &spec, &samples, Strategy::FullDisclosure);
                let Disclosure::FullBatch { measurement_cids, .. } = &mut claim.disclosed else {
                    unreachable!()
                };
                let i = rng.gen_range(0..measurement_cids.len());
                let mut m = SignedMeasurement::from_object_bytes(&d.cas.get(&measurement_cids[i]).unwrap()).unwrap();
                m.measurement.latency_ms = m.measurement.latency_ms.wrapping_add(rng.gen_range(1..1000));
                measurement_cids[i] = d.cas.put(&m.to_object_bytes()).unwrap();
                claim
            }
        }
        TamperClass::WrongKey => {
            let mut claim = honest(d, &spec, &samples, Strategy::ViolationPrivacy);
            let rogue = SigningKey::from_seed(rng.gen());
            let keep_id = rng.gen_bool(0.5);
            let items = violation_items(&mut claim);
            let i = rng.gen_range(0..items.len());
            let original = items[i].measurement.signer_pubkey_id;
            let mut forged = SignedMeasurement::sign(items[i].measurement.measurement.clone(), &rogue);
            if keep_id {
                forged.signer_pubkey_id = original;
            }
            items[i].measurement = forged;
            claim
        }
        TamperClass::FlippedOk => {
            let strategy = [Strategy::BatchPrivacy, Strategy::ViolationPrivacy, Strategy::FullDisclosure]
                [rng.gen_range(0..3)];
            let mut claim = honest(d, &spec, &samples, strategy);
            claim.ok = !claim.ok;
            claim
        }
        TamperClass::MismatchedProgram => {
            let strategy = Strategy::ALL[rng.gen_range(0..3)];
            let mut claim = honest(d, &spec, &samples, strategy);
            let decoy = compile_predicate(spec.clause(DECOY_CLAUSE).unwrap(), &spec.verification.aggregation_engine)
                .unwrap();
            if rng.gen_bool(0.5) {
                claim.program_id = decoy.program_id;
            } else {
                // Relabelled as the decoy clause while keeping the original proof.
                claim.clause_id = DECOY_CLAUSE.into();
                claim.program_id = decoy.program_id;
                if claim.proof.is_none() {
                    claim.proof = honest(d, &spec, &samples, Strategy::BatchPrivacy).proof;
                }
            }
            claim
        }
        TamperClass::UnanchoredRoot => {
            if rng.gen_bool(0.5) {
                // Sealed by the registered monitor but never submitted.
                let mut monitor = d.active_monitor(n as u64, 10).expect("monitor boots");
                for s in &samples {
                    let now = d.clock.advance(10);
                    monitor
                        .record_probe(
                            now,
                            crate::monitor::ProbeOutcome::Response {
                                status: s.status,
                                latency_ms: s.latency_ms,
                            },
                        )
                        .unwrap();
                }
                let sealed = monitor.seal(d.cas.as_ref()).unwrap();
                let strategy = Strategy::ALL[rng.gen_range(0..3)];
                d.engine()
                    .build_claim(&sealed.anchor_record(), &spec, PRIMARY_CLAUSE, strategy)
                    .expect("claim over unanchored batch")
            } else {
                let mut claim = honest(d, &spec, &samples, Strategy::ViolationPrivacy);
                let fake: Digest = keccak256(&rng.gen::<[u8; 32]>());
                claim.root = fake;
                for item in violation_items(&mut claim) {
                    item.proof.root = fake;
                }
                claim
            }
        }
    };
    TamperCase { class, spec, claim }
}
