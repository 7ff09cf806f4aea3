//! In-process deployment used by tests, the acceptance suite and the
//! benchmark harness: both SLA parties, the simulated manufacturer, a
//! memory-backed store and registry, an engine key, and helpers to boot
//! monitors and anchor batches of chosen samples.

use std::sync::{Arc, Mutex};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::clock::{Clock, ManualClock};
use crate::engine::{Engine, ReexecBackend};
use crate::evidence::{keccak256, ProbeKind, PublicKey, SigningKey, SCHEMA_VERSION};
use crate::monitor::{monitor_program_id, Manufacturer, Monitor, MonitorConfig, MonitorError, ProbeOutcome};
use crate::store::{
    AnchorRecord, EvidenceRegistry, MemoryCas, MonitorRecord, Party, Registry, SlaParties, StoreError,
};
use crate::verifier::Verifier;
use crate::vslas::{parse_spec, Comparator, Quantile, SliMetric, VslaSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub latency_ms: u32,
    pub status: u16,
}

impl Sample {
    pub const fn ok(latency_ms: u32) -> Self {
        Self { latency_ms, status: 200 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn seeded_key(label: &str, seed: u64) -> SigningKey {
    SigningKey::from_seed(*keccak256(format!("{label}/{seed}").as_bytes()).as_bytes())
}

pub struct Deployment {
    pub provider: SigningKey,
    pub consumer: SigningKey,
    pub manufacturer: Arc<Manufacturer>,
    pub cas: Arc<MemoryCas>,
    pub clock: Arc<ManualClock>,
    pub registry: Arc<Registry>,
    pub backend: ReexecBackend,
    rng: Mutex<StdRng>,
}

pub const SIM_EPOCH_MS: u64 = 1_700_000_000_000;

impl Deployment {
    pub fn new(seed: u64) -> Self {
        let provider = seeded_key("provider", seed);
        let consumer = seeded_key("consumer", seed);
        let manufacturer = Arc::new(Manufacturer::fixture());
        let cas = Arc::new(MemoryCas::new());
        let clock = Arc::new(ManualClock::new(SIM_EPOCH_MS));
        let parties = SlaParties {
            provider: provider.public_key(),
            consumer: consumer.public_key(),
        };
        let registry = Arc::new(Registry::new(
            parties,
            manufacturer.root_public_key(),
            cas.clone(),
            clock.clone(),
        ));
        Self {
            provider,
            consumer,
            manufacturer,
            cas,
            clock,
            registry,
            backend: ReexecBackend::new(seeded_key("engine", seed)),
            rng: Mutex::new(StdRng::seed_from_u64(seed)),
        }
    }

    pub fn parties(&self) -> SlaParties {
        SlaParties {
            provider: self.provider.public_key(),
            consumer: self.consumer.public_key(),
        }
    }

    pub fn manufacturer_root(&self) -> PublicKey {
        self.manufacturer.root_public_key()
    }

    /// A configuration co-signed by both parties.
    pub fn config(&self, kind: ProbeKind, batch_size: u64, interval_ms: u64) -> MonitorConfig {
        let mut config = MonitorConfig {
            target_endpoints: vec!["http://127.0.0.1:8080/health".into()],
            interval_ms,
            batch_size,
            schema_version: SCHEMA_VERSION.into(),
            monitor_kind: kind,
            timeout_ms: crate::monitor::DEFAULT_TIMEOUT_MS,
            max_window_ms: None,
            provider_pubkey: self.provider.public_key(),
            consumer_pubkey: self.consumer.public_key(),
            provider_sig: None,
            consumer_sig: None,
        };
        config.sign_as(Party::Provider, &self.provider);
        config.sign_as(Party::Consumer, &self.consumer);
        config
    }

    pub fn boot(&self, config: MonitorConfig) -> Result<Monitor, MonitorError> {
        let mut rng = self.rng.lock().unwrap();
        let (monitor, _) = Monitor::boot(config, monitor_program_id(), self.manufacturer.clone(), &mut *rng)?;
        Ok(monitor)
    }

    pub fn register(&self, monitor: &Monitor) -> Result<MonitorRecord, StoreError> {
        let record = monitor.registration_record();
        let payload = record.registration_payload();
        self.registry.register_monitor(
            record,
            Some(self.provider.sign(&payload)),
            Some(self.consumer.sign(&payload)),
        )
    }

    /// Boots and registers an active monitor.
    pub fn active_monitor(&self, batch_size: u64, interval_ms: u64) -> Result<Monitor, SimError> {
        let monitor = self.boot(self.config(ProbeKind::Active, batch_size, interval_ms))?;
        self.register(&monitor)?;
        Ok(monitor)
    }

    /// Records `samples` one probe interval apart on the simulated clock,
    /// seals and anchors them as one batch.
    pub fn anchor_samples(&self, monitor: &mut Monitor, samples: &[Sample]) -> Result<AnchorRecord, SimError> {
        let step = monitor.config().interval_ms.max(1);
        for s in samples {
            let now = self.clock.advance(step);
            monitor.record_probe(
                now,
                ProbeOutcome::Response {
                    status: s.status,
                    latency_ms: s.latency_ms,
                },
            )?;
        }
        self.seal_and_anchor(monitor)
    }

    pub fn seal_and_anchor(&self, monitor: &mut Monitor) -> Result<AnchorRecord, SimError> {
        let sealed = monitor.seal(self.cas.as_ref())?;
        Ok(self.registry.anchor_batch(sealed.anchor_record())?)
    }

    pub fn engine(&self) -> Engine<'_> {
        Engine::new(self.registry.as_ref(), self.cas.as_ref(), &self.backend)
    }

    pub fn verifier(&self) -> Verifier<'_> {
        Verifier::new(
            self.registry.as_ref(),
            Some(self.cas.as_ref()),
            &self.backend,
            self.manufacturer_root(),
        )
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }
}

/// One SLO clause as written in a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClauseDoc {
    pub id: String,
    pub sli: SliMetric,
    pub op: Comparator,
    pub value: u64,
    pub target: Quantile,
}

impl ClauseDoc {
    pub fn latency_below(id: &str, threshold_ms: u64, num: u64, den: u64) -> Self {
        Self {
            id: id.into(),
            sli: SliMetric::LatencyMs,
            op: Comparator::Lt,
            value: threshold_ms,
            target: Quantile::new(num, den).expect("valid quantile"),
        }
    }
}

/// Exact decimal form of a quantile whose denominator divides a power of ten.
pub fn decimal_text(q: &Quantile) -> String {
    let digits = (0..=18u32)
        .find(|k| 10u64.pow(*k) % q.den() == 0)
        .expect("target denominator must divide a power of ten");
    let scaled = q.num() * (10u64.pow(digits) / q.den());
    if digits == 0 {
        return scaled.to_string();
    }
    let scale = 10u64.pow(digits);
    format!("{}.{:0width$}", scaled / scale, scaled % scale, width = digits as usize)
}

/// Renders an OpenSLO-style document with a verification section.
pub fn spec_document(name: &str, clauses: &[ClauseDoc], monitor_type: &str, engine_tag: &str) -> String {
    let mut doc = format!(
        "apiVersion: openslo/v1\nkind: SLO\nmetadata:\n  name: {name}\nspec:\n  service: checkout\n  objectives:\n"
    );
    for c in clauses {
        let target_text = decimal_text(&c.target);
        doc.push_str(&format!(
            "    - id: {}\n      sli: {}\n      op: {}\n      value: {}\n      target: {}\n",
            c.id,
            c.sli.as_str(),
            c.op.as_str(),
            c.value,
            target_text
        ));
    }
    doc.push_str(&format!(
        "  verification:\n    monitors:\n      - type: {monitor_type}\n        location: local\n        tee-provider: simulated\n    evidence:\n      storage-type: cas-local\n      blockchain:\n        network: local\n        contract: registry\n    aggregation-engine: {engine_tag}\n"
    ));
    doc
}

pub fn spec_for(clauses: &[ClauseDoc]) -> VslaSpec {
    parse_spec(spec_document("sim", clauses, "tee-active", "risc0").as_bytes()).expect("generated spec parses")
}

/// Random clause over latency or success status with a target in
/// {1/2, ..., 100/100}.
pub fn random_clause<R: Rng>(rng: &mut R, id: &str) -> ClauseDoc {
    let den = *[2u64, 4, 5, 10, 20, 100].get(rng.gen_range(0..6)).unwrap();
    let num = rng.gen_range(1..=den);
    let target = Quantile::new(num, den).unwrap();
    if rng.gen_bool(0.8) {
        let op = [Comparator::Lt, Comparator::Le][rng.gen_range(0..2)];
        ClauseDoc {
            id: id.into(),
            sli: SliMetric::LatencyMs,
            op,
            value: rng.gen_range(50..500),
            target,
        }
    } else {
        ClauseDoc {
            id: id.into(),
            sli: SliMetric::SuccessStatus,
            op: Comparator::Ge,
            value: 1,
            target,
        }
    }
}

/// Random samples: mostly fast 200s with a random share of slow or failed
/// responses.
pub fn random_samples<R: Rng>(rng: &mut R, n: usize) -> Vec<Sample> {
    let slow_share = rng.gen_range(0.0..0.3);
    let fail_share = rng.gen_range(0.0..0.1);
    (0..n)
        .map(|_| {
            let status = if rng.gen_bool(fail_share) {
                [0u16, 500, 503][rng.gen_range(0..3)]
            } else {
                200
            };
            let latency_ms = if rng.gen_bool(slow_share) {
                rng.gen_range(300..2000)
            } else {
                rng.gen_range(1..300)
            };
            Sample { latency_ms, status }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_documents_round_trip_targets() {
        for (num, den) in [(95, 100), (1, 1), (1, 2), (3, 8), (999, 1000)] {
            let spec = spec_for(&[ClauseDoc::latency_below("c", 300, num, den)]);
            assert_eq!(spec.clauses[0].target, Quantile::new(num, den).unwrap(), "{num}/{den}");
        }
    }

    #[test]
    fn deployment_anchors_batches() {
        let d = Deployment::new(1);
        let mut m = d.active_monitor(4, 1000).unwrap();
        let a0 = d.anchor_samples(&mut m, &[Sample::ok(10); 4]).unwrap();
        let a1 = d.anchor_samples(&mut m, &[Sample::ok(20); 4]).unwrap();
        assert_eq!((a0.batch_seq, a1.batch_seq), (0, 1));
        assert_eq!(d.registry.expected_seq(&m.id()).unwrap(), 2);
    }
}
