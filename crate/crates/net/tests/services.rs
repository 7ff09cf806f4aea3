use std::net::SocketAddr;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::SeedableRng;
use vsla_core::clock::SystemClock;
use vsla_core::engine::{preflight, Engine, ReexecBackend, Strategy};
use vsla_core::evidence::{ProbeKind, SigningKey, SCHEMA_VERSION};
use vsla_core::monitor::{monitor_program_id, AttestationQuote, Manufacturer, Monitor, MonitorConfig, DEFAULT_TIMEOUT_MS};
use vsla_core::store::{
    AnchorRecord, ContentId, ContentStore, EvidenceRegistry, MemoryCas, Party, Registry, RegistryView, SlaParties,
    StoreError,
};
use vsla_core::verifier::Verifier;
use vsla_net::client::StoreClient;
use vsla_net::matrix::{cell_spec, LATENCY_CLAUSE};
use vsla_net::monitor::{run_active, run_passive, MonitorService};
use vsla_net::server::{spawn_store, ServerHandle, StoreState};
use vsla_net::target::{run_target, TargetConfig};

fn loopback() -> SocketAddr {
    ([127, 0, 0, 1], 0).into()
}

struct Env {
    runtime: tokio::runtime::Runtime,
    provider: SigningKey,
    consumer: SigningKey,
    operator: SigningKey,
    manufacturer: Arc<Manufacturer>,
    store: ServerHandle,
    client: Arc<StoreClient>,
}

impl Env {
    fn new() -> Self {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let provider = SigningKey::from_seed([1; 32]);
        let consumer = SigningKey::from_seed([2; 32]);
        let operator = SigningKey::from_seed([3; 32]);
        let manufacturer = Arc::new(Manufacturer::fixture());
        let cas = Arc::new(MemoryCas::new());
        let parties = SlaParties {
            provider: provider.public_key(),
            consumer: consumer.public_key(),
        };
        let registry = Arc::new(Registry::new(
            parties,
            manufacturer.root_public_key(),
            cas.clone(),
            Arc::new(SystemClock),
        ));
        let state = Arc::new(StoreState {
            registry,
            cas,
            operator: Some(operator.clone()),
        });
        let store = spawn_store(runtime.handle(), loopback(), state).unwrap();
        let client = Arc::new(StoreClient::new(&store.url()).unwrap());
        Self {
            runtime,
            provider,
            consumer,
            operator,
            manufacturer,
            store,
            client,
        }
    }

    fn config(&self, kind: ProbeKind, target: &str, batch_size: u64) -> MonitorConfig {
        let mut config = MonitorConfig {
            target_endpoints: vec![target.to_string()],
            interval_ms: 10,
            batch_size,
            schema_version: SCHEMA_VERSION.into(),
            monitor_kind: kind,
            timeout_ms: DEFAULT_TIMEOUT_MS,
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

    fn boot(&self, config: MonitorConfig, seed: u64) -> Monitor {
        Monitor::boot(
            config,
            monitor_program_id(),
            self.manufacturer.clone(),
            &mut StdRng::seed_from_u64(seed),
        )
        .unwrap()
        .0
    }

    fn register(&self, monitor: &Monitor) {
        let record = monitor.registration_record();
        let payload = record.registration_payload();
        self.client
            .register_monitor(record, Some(self.provider.sign(&payload)), Some(self.consumer.sign(&payload)))
            .unwrap();
    }

    fn service(&self, monitor: Monitor) -> Arc<MonitorService> {
        MonitorService::new(monitor, self.client.clone(), self.client.clone(), Arc::new(SystemClock))
    }
}

fn wait_for(mut done: impl FnMut() -> bool, limit: Duration) -> bool {
    let started = Instant::now();
    while started.elapsed() < limit {
        if done() {
            return true;
        }
        thread::sleep(Duration::from_millis(10));
    }
    done()
}

fn status_codes(env: &Env, anchors: &[AnchorRecord]) -> Vec<u16> {
    anchors
        .iter()
        .flat_map(|a| {
            preflight(a, env.client.as_ref(), env.client.as_ref())
                .unwrap()
                .measurements
                .into_iter()
                .map(|m| m.measurement.status_code)
        })
        .collect()
}

#[test]
fn content_roundtrips_and_missing_content_is_not_found() {
    let env = Env::new();
    let cid = env.client.put(b"evidence bytes").unwrap();
    assert_eq!(cid, ContentId::for_content(b"evidence bytes"));
    assert_eq!(env.client.get(&cid).unwrap(), b"evidence bytes");
    assert!(env.client.contains(&cid).unwrap());
    let missing = ContentId::for_content(b"never stored");
    assert!(matches!(env.client.get(&missing), Err(StoreError::NotFound(c)) if c == missing));
    assert!(!env.client.contains(&missing).unwrap());
}

#[test]
fn registry_errors_keep_their_variant_across_http() {
    let env = Env::new();
    let monitor = env.boot(env.config(ProbeKind::Active, "http://127.0.0.1:9/", 4), 1);
    let record = monitor.registration_record();
    let payload = record.registration_payload();

    let missing = env
        .client
        .register_monitor(record.clone(), Some(env.provider.sign(&payload)), None);
    assert!(matches!(missing, Err(StoreError::MissingCoSignature(Party::Consumer))), "{missing:?}");

    env.register(&monitor);
    let dup = env.client.register_monitor(
        record.clone(),
        Some(env.provider.sign(&payload)),
        Some(env.consumer.sign(&payload)),
    );
    assert!(matches!(dup, Err(StoreError::DuplicateMonitor(id)) if id == monitor.id()));

    let stranger = env.boot(env.config(ProbeKind::Active, "http://127.0.0.1:9/", 4), 2);
    assert!(matches!(env.client.monitor(&stranger.id()), Err(StoreError::UnknownMonitor(_))));
    assert_eq!(env.client.monitor(&monitor.id()).unwrap().pubkey, monitor.public_key());
    assert_eq!(env.client.monitors().unwrap().len(), 1);
    assert!(env.client.audit_trail(&monitor.id()).unwrap().is_empty());
}

#[test]
fn anchoring_over_http_enforces_sequence_and_snapshot_is_signed() {
    let env = Env::new();
    let mut monitor = env.boot(env.config(ProbeKind::Active, "http://127.0.0.1:9/", 2), 3);
    env.register(&monitor);
    let mut sealed = Vec::new();
    for b in 0..3u64 {
        for i in 0..2 {
            monitor
                .record_probe(1_000 + b * 10 + i, vsla_core::monitor::ProbeOutcome::Response { status: 200, latency_ms: 5 })
                .unwrap();
        }
        sealed.push(monitor.seal(env.client.as_ref()).unwrap());
    }
    env.client.anchor_batch(sealed[0].anchor_record()).unwrap();
    let gap = env.client.anchor_batch(sealed[2].anchor_record());
    assert!(
        matches!(gap, Err(StoreError::SequenceGap { expected: 1, got: 2, .. })),
        "{gap:?}"
    );
    env.client.anchor_batch(sealed[1].anchor_record()).unwrap();
    env.client.anchor_batch(sealed[2].anchor_record()).unwrap();
    let trail = env.client.audit_trail(&monitor.id()).unwrap();
    assert_eq!(trail.iter().map(|a| a.batch_seq).collect::<Vec<_>>(), [0, 1, 2]);
    assert!(trail.iter().all(|a| a.anchored_at_ms > 0));

    let snapshot = env.client.snapshot().unwrap();
    snapshot.verify_signature(&env.operator.public_key()).unwrap();
    assert!(snapshot.verify_signature(&env.provider.public_key()).is_err());
}

#[test]
fn target_answers_after_configured_delay() {
    let env = Env::new();
    let target = run_target(env.runtime.handle(), TargetConfig::default(), loopback()).unwrap();
    let http = reqwest::blocking::Client::new();
    let mut latencies = Vec::new();
    for _ in 0..20 {
        let started = Instant::now();
        let resp = http.get(format!("{}/health", target.url())).send().unwrap();
        assert_eq!(resp.status().as_u16(), 200);
        assert_eq!(resp.text().unwrap(), "ok\n");
        latencies.push(started.elapsed());
    }
    latencies.sort();
    let median = latencies[10];
    assert!(median >= Duration::from_millis(5), "{median:?}");
    assert!(median < Duration::from_millis(50), "{median:?}");
    assert_eq!(target.served(), 20);
    assert_eq!(target.failed(), 0);
}

fn count_failures(env: &Env, seed: u64, draws: usize) -> u64 {
    let config = TargetConfig {
        delay_ms: 0,
        fail_rate: 0.05,
        seed,
    };
    let mut target = run_target(env.runtime.handle(), config, loopback()).unwrap();
    let http = reqwest::blocking::Client::new();
    let mut failed = 0;
    for _ in 0..draws {
        let status = http.get(target.url()).send().unwrap().status().as_u16();
        match status {
            200 => {}
            503 => failed += 1,
            other => panic!("unexpected status {other}"),
        }
    }
    assert_eq!(target.failed(), failed);
    target.stop();
    failed
}

#[test]
fn seeded_failure_rate_is_binomial_and_reproducible() {
    let env = Env::new();
    let failed = count_failures(&env, 11, 10_000);
    // Binomial(10000, 0.05): mean 500, sd ~21.8; four sd either side.
    assert!((413..=587).contains(&failed), "{failed}");
    assert_eq!(count_failures(&env, 11, 2_000), count_failures(&env, 11, 2_000));
}

#[test]
fn active_monitor_anchors_and_records_unreachable_target_as_status_zero() {
    let env = Env::new();
    let mut target = run_target(env.runtime.handle(), TargetConfig::default(), loopback()).unwrap();
    let monitor = env.boot(env.config(ProbeKind::Active, &target.url(), 8), 4);
    let id = monitor.id();
    env.register(&monitor);
    let service = env.service(monitor);
    let mut handle = run_active(
        env.runtime.handle(),
        service.clone(),
        target.url(),
        Duration::from_millis(10),
        Duration::from_millis(500),
        loopback(),
    )
    .unwrap();

    assert!(wait_for(|| env.client.audit_trail(&id).unwrap().len() >= 2, Duration::from_secs(20)));
    target.stop();
    let before = env.client.audit_trail(&id).unwrap().len();
    assert!(wait_for(
        || env.client.audit_trail(&id).unwrap().len() >= before + 2,
        Duration::from_secs(20)
    ));
    handle.shutdown(env.runtime.handle());

    let trail = env.client.audit_trail(&id).unwrap();
    assert_eq!(trail.iter().map(|a| a.batch_seq).collect::<Vec<_>>(), (0..trail.len() as u64).collect::<Vec<_>>());
    assert_eq!(service.unanchored(), 0);
    let statuses = status_codes(&env, &trail);
    assert!(statuses[..16].iter().all(|&s| s == 200), "{statuses:?}");
    assert_eq!(statuses.last(), Some(&0));
    assert!(statuses.iter().all(|&s| s == 200 || s == 0));
}

#[test]
fn passive_proxy_forwards_records_and_flushes_partial_batch() {
    let env = Env::new();
    let mut target = run_target(env.runtime.handle(), TargetConfig::default(), loopback()).unwrap();
    let monitor = env.boot(env.config(ProbeKind::Passive, &target.url(), 16), 5);
    let id = monitor.id();
    env.register(&monitor);
    let service = env.service(monitor);
    let mut proxy = run_passive(env.runtime.handle(), service.clone(), target.url(), None, loopback()).unwrap();

    let http = reqwest::blocking::Client::new();
    for i in 0..40 {
        let resp = http.get(format!("{}/item/{i}", proxy.url())).send().unwrap();
        assert_eq!(resp.status().as_u16(), 200);
        assert_eq!(resp.text().unwrap(), "ok\n");
    }
    target.stop();
    let resp = http.get(format!("{}/after-outage", proxy.url())).send().unwrap();
    assert_eq!(resp.status().as_u16(), 502);
    proxy.shutdown(env.runtime.handle());

    let trail = env.client.audit_trail(&id).unwrap();
    assert_eq!(trail.iter().map(|a| a.count).collect::<Vec<_>>(), [16, 16, 9]);
    let statuses = status_codes(&env, &trail);
    assert_eq!(statuses.len(), 41);
    assert!(statuses[..40].iter().all(|&s| s == 200));
    assert_eq!(statuses[40], 0);
    assert_eq!(service.seal_events().len(), 3);
}

#[test]
fn attestation_endpoint_echoes_nonce_under_manufacturer_signature() {
    let env = Env::new();
    let monitor = env.boot(env.config(ProbeKind::Passive, "http://127.0.0.1:9/", 16), 6);
    let pubkey = monitor.public_key();
    let service = env.service(monitor);
    let mut proxy = run_passive(
        env.runtime.handle(),
        service.clone(),
        "http://127.0.0.1:9".into(),
        None,
        loopback(),
    )
    .unwrap();
    let root = env.manufacturer.root_public_key();
    let http = reqwest::blocking::Client::new();

    let nonce = [0xa5u8; 32];
    let quote: AttestationQuote = http
        .get(format!("{}/attestation?nonce={}", proxy.url(), hex::encode(nonce)))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(quote.nonce, nonce);
    assert_eq!(quote.monitor_pubkey, pubkey);
    assert!(quote.verify(&root));
    assert!(!quote.verify(&SigningKey::from_seed([9; 32]).public_key()));

    let boot: AttestationQuote = http
        .get(format!("{}/attestation", proxy.url()))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(&boot, service.boot_quote());
    assert!(boot.verify(&root));

    let bad = http.get(format!("{}/attestation?nonce=abcd", proxy.url())).send().unwrap();
    assert_eq!(bad.status().as_u16(), 400);
    proxy.shutdown(env.runtime.handle());
}

#[test]
fn engine_and_verifier_work_against_the_http_store() {
    let env = Env::new();
    let mut target = run_target(env.runtime.handle(), TargetConfig::default(), loopback()).unwrap();
    let monitor = env.boot(env.config(ProbeKind::Passive, &target.url(), 32), 7);
    let id = monitor.id();
    env.register(&monitor);
    let mut proxy = run_passive(env.runtime.handle(), env.service(monitor), target.url(), None, loopback()).unwrap();
    let http = reqwest::blocking::Client::new();
    for _ in 0..32 {
        http.get(proxy.url()).send().unwrap();
    }
    proxy.shutdown(env.runtime.handle());
    target.stop();

    let anchor = env.client.anchor(&id, 0).unwrap().expect("batch 0 anchored");
    let spec = cell_spec(300);
    let backend = ReexecBackend::new(SigningKey::from_seed([8; 32]));
    let engine = Engine::new(env.client.as_ref(), env.client.as_ref(), &backend);
    let verifier = Verifier::new(
        env.client.as_ref(),
        Some(env.client.as_ref()),
        &backend,
        env.manufacturer.root_public_key(),
    );
    for strategy in [Strategy::FullDisclosure, Strategy::BatchPrivacy] {
        let claim = engine.run_pipeline(&anchor, &spec, LATENCY_CLAUSE, strategy).unwrap();
        assert!(claim.ok);
        let report = verifier.verify_claim(&claim, &spec);
        assert!(report.accepted(), "{strategy}: {:?}", report.verdict);
    }
    let claims = env.client.claim_anchors().unwrap();
    assert_eq!(claims.len(), 2);
    let stored = env.store.url();
    assert!(stored.starts_with("http://127.0.0.1:"));
}
