//! Live experiment cells: dummy target behind a passive monitor proxy, an
//! evidence store over HTTP, an engine worker evaluating and verifying each
//! anchored batch, and open-loop load through the proxy.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::SeedableRng;
use vsla_core::bench::{median, percentile, CellResult, ExperimentPlan};
use vsla_core::clock::SystemClock;
use vsla_core::engine::{Engine, EngineError, ReexecBackend, Strategy};
use vsla_core::evidence::{keccak256, ProbeKind, SigningKey, SCHEMA_VERSION};
use vsla_core::monitor::{monitor_program_id, Manufacturer, Monitor, MonitorConfig, DEFAULT_TIMEOUT_MS};
use vsla_core::sim::{spec_document, ClauseDoc};
use vsla_core::store::{ContentStore, DirCas, EvidenceRegistry, MemoryCas, Party, Registry, RegistryView, SlaParties};
use vsla_core::verifier::Verifier;
use vsla_core::vslas::{parse_spec, Comparator, Quantile, SliMetric, VslaSpec};

use crate::client::StoreClient;
use crate::loadgen::{run_open_loop, LoadPlan, LoadReport};
use crate::monitor::{run_passive, MonitorService, SealEvent};
use crate::server::{spawn_store, StoreState};
use crate::target::{run_target, TargetConfig};
use crate::NetError;

pub const LATENCY_CLAUSE: &str = "latency";
pub const AVAILABILITY_CLAUSE: &str = "availability";

/// Requests in flight are capped well above what the target can absorb at
/// the top desk rate.
const MAX_IN_FLIGHT: usize = 1024;
const ENGINE_DRAIN_LIMIT: Duration = Duration::from_secs(300);

fn seeded_key(label: &str, seed: u64) -> SigningKey {
    SigningKey::from_seed(*keccak256(format!("{label}/{seed}").as_bytes()).as_bytes())
}

/// The two clauses evaluated on every batch: a latency target and full
/// availability, the second giving violation claims whenever the target
/// injects failures.
pub fn cell_spec(threshold_ms: u64) -> VslaSpec {
    let clauses = [
        ClauseDoc::latency_below(LATENCY_CLAUSE, threshold_ms, 95, 100),
        ClauseDoc {
            id: AVAILABILITY_CLAUSE.into(),
            sli: SliMetric::SuccessStatus,
            op: Comparator::Ge,
            value: 1,
            target: Quantile::new(1, 1).expect("valid"),
        },
    ];
    parse_spec(spec_document("bench", &clauses, "tee-passive", "risc0").as_bytes()).expect("cell spec parses")
}

#[derive(Debug, Default)]
struct EngineTimings {
    proving: Vec<Duration>,
    violation_verify: Vec<Duration>,
    full_verify: Vec<Duration>,
    errors: Vec<String>,
    processed: u64,
}

/// Evaluates each newly anchored batch with every planned strategy and
/// verifies the resulting claims, timing both.
fn engine_worker(
    store_url: String,
    monitor: vsla_core::evidence::KeyId,
    engine_key: SigningKey,
    spec: VslaSpec,
    strategies: Vec<Strategy>,
    load_done: Arc<AtomicBool>,
    timings: Arc<Mutex<EngineTimings>>,
) {
    let client = match StoreClient::new(&store_url) {
        Ok(c) => c,
        Err(e) => {
            timings.lock().unwrap().errors.push(e.to_string());
            return;
        }
    };
    let backend = ReexecBackend::new(engine_key);
    let engine = Engine::new(&client, &client, &backend);
    let verifier = Verifier::new(&client, Some(&client), &backend, Manufacturer::fixture().root_public_key());
    let mut next = 0usize;
    let mut idle_since = None::<Instant>;
    loop {
        let trail = client.audit_trail(&monitor).unwrap_or_default();
        if next >= trail.len() {
            if load_done.load(Ordering::SeqCst) {
                let since = *idle_since.get_or_insert_with(Instant::now);
                if since.elapsed() > Duration::from_millis(500) {
                    return;
                }
            }
            thread::sleep(Duration::from_millis(50));
            continue;
        }
        idle_since = None;
        for anchor in &trail[next..] {
            for &strategy in &strategies {
                let clause = if strategy == Strategy::ViolationPrivacy {
                    AVAILABILITY_CLAUSE
                } else {
                    LATENCY_CLAUSE
                };
                let started = Instant::now();
                let claim = match engine.run_pipeline(anchor, &spec, clause, strategy) {
                    Ok(c) => c,
                    Err(EngineError::NoViolation) => continue,
                    Err(e) => {
                        timings.lock().unwrap().errors.push(format!("batch {}: {e}", anchor.batch_seq));
                        continue;
                    }
                };
                let proved = started.elapsed();
                let started = Instant::now();
                let report = verifier.verify_claim(&claim, &spec);
                let verified = started.elapsed();
                let mut t = timings.lock().unwrap();
                if !report.accepted() {
                    t.errors.push(format!("batch {} {strategy} claim rejected: {:?}", anchor.batch_seq, report.verdict));
                }
                match strategy {
                    Strategy::BatchPrivacy => t.proving.push(proved),
                    Strategy::ViolationPrivacy => t.violation_verify.push(verified),
                    Strategy::FullDisclosure => t.full_verify.push(verified),
                }
            }
            timings.lock().unwrap().processed += 1;
        }
        next = trail.len();
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

fn median_ms(v: &[Duration]) -> Option<f64> {
    (!v.is_empty()).then(|| ms(median(v.to_vec())))
}

/// Worst latency among requests in flight while a batch was being sealed.
pub fn worst_during_seals(report: &LoadReport, seals: &[SealEvent]) -> Option<Duration> {
    report
        .samples
        .iter()
        .filter(|s| {
            let end = s.scheduled + s.latency;
            seals.iter().any(|e| s.scheduled <= e.finished && end >= e.started)
        })
        .map(|s| s.latency)
        .max()
}

/// Latency percentiles (ms) of a load report: p50, p90, p95, p99.
pub fn latency_percentiles(report: &LoadReport) -> Result<[f64; 4], NetError> {
    let us = report.latencies_us();
    let mut out = [0.0; 4];
    for (slot, p) in out.iter_mut().zip([0.50, 0.90, 0.95, 0.99]) {
        *slot = percentile(&us, p).map_err(|e| NetError::Bench(e.to_string()))? as f64 / 1000.0;
    }
    Ok(out)
}

/// Output of one live cell, with the raw material behind the summary.
pub struct CellRun {
    pub result: CellResult,
    pub load: LoadReport,
    pub seals: Vec<SealEvent>,
    pub engine_errors: Vec<String>,
}

pub fn run_cell(plan: &ExperimentPlan, batch_size: u64, rps: u64, seed: u64) -> Result<CellRun, NetError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let rt = runtime.handle();
    let loopback: SocketAddr = ([127, 0, 0, 1], 0).into();

    let provider = seeded_key("provider", seed);
    let consumer = seeded_key("consumer", seed);
    let manufacturer = Arc::new(Manufacturer::fixture());
    let parties = SlaParties {
        provider: provider.public_key(),
        consumer: consumer.public_key(),
    };
    let clock = Arc::new(SystemClock);
    let store_dir = tempfile::tempdir()?;
    let (cas, registry): (Arc<dyn ContentStore>, Registry) = if plan.durable_store {
        let cas: Arc<dyn ContentStore> = Arc::new(DirCas::open(store_dir.path().join("cas"))?);
        let log = store_dir.path().join("registry.jsonl");
        let registry = Registry::open(log, parties, manufacturer.root_public_key(), cas.clone(), clock.clone())?;
        (cas, registry)
    } else {
        let cas: Arc<dyn ContentStore> = Arc::new(MemoryCas::new());
        let registry = Registry::new(parties, manufacturer.root_public_key(), cas.clone(), clock.clone());
        (cas, registry)
    };
    let registry = Arc::new(registry);
    let mut store = spawn_store(
        rt,
        loopback,
        Arc::new(StoreState {
            registry,
            cas,
            operator: None,
        }),
    )?;
    let mut target = run_target(
        rt,
        TargetConfig {
            delay_ms: plan.target_delay_ms,
            fail_rate: plan.target_fail_rate,
            seed,
        },
        loopback,
    )?;

    let mut config = MonitorConfig {
        target_endpoints: vec![target.url()],
        interval_ms: 1000,
        batch_size,
        schema_version: SCHEMA_VERSION.into(),
        monitor_kind: ProbeKind::Passive,
        timeout_ms: DEFAULT_TIMEOUT_MS,
        max_window_ms: None,
        provider_pubkey: provider.public_key(),
        consumer_pubkey: consumer.public_key(),
        provider_sig: None,
        consumer_sig: None,
    };
    config.sign_as(Party::Provider, &provider);
    config.sign_as(Party::Consumer, &consumer);
    let (monitor, _) = Monitor::boot(config, monitor_program_id(), manufacturer, &mut StdRng::seed_from_u64(seed))?;
    let monitor_id = monitor.id();

    let client = Arc::new(StoreClient::new(&store.url())?);
    let record = monitor.registration_record();
    let payload = record.registration_payload();
    client.register_monitor(record, Some(provider.sign(&payload)), Some(consumer.sign(&payload)))?;

    let service = MonitorService::new(monitor, client.clone(), client.clone(), Arc::new(SystemClock));
    let mut proxy = run_passive(rt, service.clone(), target.url(), None, loopback)?;

    let spec = cell_spec(plan.threshold_ms);
    let load_done = Arc::new(AtomicBool::new(false));
    let timings = Arc::new(Mutex::new(EngineTimings::default()));
    let worker = {
        let (url, spec, strategies) = (store.url(), spec.clone(), plan.strategies.clone());
        let (done, timings) = (load_done.clone(), timings.clone());
        let key = seeded_key("engine", seed);
        thread::spawn(move || engine_worker(url, monitor_id, key, spec, strategies, done, timings))
    };

    let load_plan = LoadPlan {
        url: format!("{}/health", proxy.url()),
        rps,
        duration: Duration::from_secs_f64(plan.duration_s),
        max_in_flight: MAX_IN_FLIGHT,
        timeout: Duration::from_secs(30),
    };
    let load = thread::spawn(move || {
        tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .map(|rt| rt.block_on(run_open_loop(&load_plan)))
    })
    .join()
    .map_err(|_| NetError::Bench("load generator panicked".into()))??;

    proxy.shutdown(rt);
    load_done.store(true, Ordering::SeqCst);
    let drain_started = Instant::now();
    while !worker.is_finished() && drain_started.elapsed() < ENGINE_DRAIN_LIMIT {
        thread::sleep(Duration::from_millis(50));
    }
    let engine_finished = worker.is_finished();
    if engine_finished {
        let _ = worker.join();
    }

    let anchors = client.audit_trail(&monitor_id)?;
    let seals = service.seal_events();
    store.stop();
    target.stop();
    drop(client);
    runtime.shutdown_timeout(Duration::from_secs(1));

    let [p50, p90, p95, p99] = latency_percentiles(&load)?;
    let spike = worst_during_seals(&load, &seals).map_or(0.0, |w| (ms(w) - p50).max(0.0));
    let mut t = std::mem::take(&mut *timings.lock().unwrap());
    if !engine_finished {
        t.errors.push("engine did not finish within the drain limit".into());
    }
    let result = CellResult {
        batch_size,
        rps,
        seed,
        requests: load.samples.len() as u64,
        failures: load.failures(),
        p50_ms: p50,
        p90_ms: p90,
        p95_ms: p95,
        p99_ms: p99,
        seal_spike_ms: spike,
        batches_anchored: anchors.len() as u64,
        proving_time_ms: median_ms(&t.proving),
        verify_time_ms: median_ms(&t.violation_verify),
        full_verify_time_ms: median_ms(&t.full_verify),
        anchor_payload_bytes: anchors
            .first()
            .map_or(vsla_core::store::ANCHOR_PAYLOAD_LEN, |a| a.encode_payload().len()) as u64,
        error: (!t.errors.is_empty()).then(|| t.errors.join("; ")),
    };
    Ok(CellRun {
        result,
        load,
        seals,
        engine_errors: t.errors,
    })
}

/// Runs every cell in order. A failing cell is recorded and the matrix
/// continues.
pub fn run_matrix(plan: &ExperimentPlan, mut on_cell: impl FnMut(&CellResult)) -> Vec<CellResult> {
    plan.cells()
        .into_iter()
        .map(|(b, r, seed)| {
            let result = match run_cell(plan, b, r, seed) {
                Ok(run) => run.result,
                Err(e) => CellResult::failed(b, r, seed, e.to_string()),
            };
            on_cell(&result);
            result
        })
        .collect()
}
