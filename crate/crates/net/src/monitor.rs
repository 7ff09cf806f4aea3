//! Monitor processes: the active prober, the passive reverse proxy, and the
//! `/attestation` endpoint both expose.
//!
//! All measurements of one monitor go through a single lock, which is the
//! sequence-number assignment point. A batch is sealed and anchored while
//! that lock is held, so a passive proxy releases no response until its
//! measurement is ingested. Sealing blocks the calling worker thread; run
//! these services on a multi-threaded Tokio runtime.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::{Body, Bytes};
use axum::extract::{Query, Request, State};
use axum::http::{HeaderMap, HeaderName, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use tokio::sync::watch;
use vsla_core::clock::Clock;
use vsla_core::evidence::KeyId;
use vsla_core::monitor::{AttestationQuote, Monitor, MonitorError, ProbeOutcome};
use vsla_core::store::{AnchorRecord, ContentStore, EvidenceRegistry, StoreError};

use crate::server::{spawn_server, ServerHandle};

#[derive(Debug, Clone)]
pub struct SealEvent {
    pub started: Instant,
    pub finished: Instant,
    pub batch_seq: u64,
    pub count: u64,
    /// Every queued anchor, this one included, was accepted.
    pub anchored: bool,
    pub error: Option<String>,
}

/// One monitor instance with its evidence sinks.
pub struct MonitorService {
    monitor: tokio::sync::Mutex<Monitor>,
    id: KeyId,
    quote: AttestationQuote,
    cas: Arc<dyn ContentStore>,
    registry: Arc<dyn EvidenceRegistry>,
    clock: Arc<dyn Clock>,
    /// Sealed batches not yet accepted by the registry, oldest first.
    unanchored: Mutex<VecDeque<AnchorRecord>>,
    seals: Mutex<Vec<SealEvent>>,
    window_opened: Mutex<Option<Instant>>,
}

impl MonitorService {
    pub fn new(
        monitor: Monitor,
        cas: Arc<dyn ContentStore>,
        registry: Arc<dyn EvidenceRegistry>,
        clock: Arc<dyn Clock>,
    ) -> Arc<Self> {
        Arc::new(Self {
            id: monitor.id(),
            quote: monitor.boot_quote().clone(),
            monitor: tokio::sync::Mutex::new(monitor),
            cas,
            registry,
            clock,
            unanchored: Mutex::new(VecDeque::new()),
            seals: Mutex::new(Vec::new()),
            window_opened: Mutex::new(None),
        })
    }

    pub fn id(&self) -> KeyId {
        self.id
    }

    pub fn boot_quote(&self) -> &AttestationQuote {
        &self.quote
    }

    pub async fn attest(&self, nonce: [u8; 32]) -> AttestationQuote {
        self.monitor.lock().await.attest(nonce)
    }

    pub fn seal_events(&self) -> Vec<SealEvent> {
        self.seals.lock().unwrap().clone()
    }

    pub fn unanchored(&self) -> usize {
        self.unanchored.lock().unwrap().len()
    }

    pub async fn pending(&self) -> usize {
        self.monitor.lock().await.pending()
    }

    async fn ingest(&self, record: impl FnOnce(&mut Monitor, u64) -> Result<(), MonitorError>) -> Result<(), MonitorError> {
        let mut m = self.monitor.lock().await;
        record(&mut m, self.clock.now_ms())?;
        self.window_opened.lock().unwrap().get_or_insert_with(Instant::now);
        if m.batch_ready() {
            self.seal_locked(&mut m);
        }
        Ok(())
    }

    /// Seals whatever is buffered, e.g. on shutdown or at a window deadline.
    pub async fn flush(&self) {
        let mut m = self.monitor.lock().await;
        if m.pending() > 0 {
            self.seal_locked(&mut m);
        } else {
            let _ = self.retry_anchors();
        }
    }

    async fn flush_if_window_elapsed(&self, max_window: Duration) {
        let opened = *self.window_opened.lock().unwrap();
        if opened.is_some_and(|t| t.elapsed() >= max_window) {
            self.flush().await;
        }
    }

    fn seal_locked(&self, m: &mut Monitor) {
        let started = Instant::now();
        let batch_seq = m.next_batch_seq();
        let count = m.pending() as u64;
        let result = tokio::task::block_in_place(|| m.seal(self.cas.as_ref()));
        let error = match result {
            Ok(sealed) => {
                *self.window_opened.lock().unwrap() = None;
                self.unanchored.lock().unwrap().push_back(sealed.anchor_record());
                self.retry_anchors().err()
            }
            Err(e) => Some(e.to_string()),
        };
        if let Some(e) = &error {
            tracing::warn!(monitor = %self.id, batch_seq, "seal incomplete: {e}");
        }
        self.seals.lock().unwrap().push(SealEvent {
            started,
            finished: Instant::now(),
            batch_seq,
            count,
            anchored: error.is_none(),
            error,
        });
    }

    /// Submits queued anchors in order, stopping at the first failure.
    fn retry_anchors(&self) -> Result<(), String> {
        let mut queue = self.unanchored.lock().unwrap();
        while let Some(record) = queue.front().cloned() {
            match tokio::task::block_in_place(|| self.registry.anchor_batch(record.clone())) {
                Ok(_) => {}
                // Accepted earlier but the response was lost.
                Err(StoreError::SequenceGap { expected, got, .. }) if got < expected => {}
                Err(e) => return Err(e.to_string()),
            }
            queue.pop_front();
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct NonceQuery {
    nonce: Option<String>,
}

fn parse_nonce(text: &str) -> Option<[u8; 32]> {
    hex::decode(text.strip_prefix("0x").unwrap_or(text)).ok()?.try_into().ok()
}

/// `GET /attestation[?nonce=<64 hex>]`: a fresh quote over the nonce, or
/// the boot quote when none is given.
async fn attestation(State(svc): State<Arc<MonitorService>>, Query(q): Query<NonceQuery>) -> Response {
    match q.nonce {
        None => Json(svc.boot_quote().clone()).into_response(),
        Some(n) => match parse_nonce(&n) {
            Some(nonce) => Json(svc.attest(nonce).await).into_response(),
            None => (StatusCode::BAD_REQUEST, "nonce must be 32 bytes of hex\n").into_response(),
        },
    }
}

pub fn attestation_router(service: Arc<MonitorService>) -> Router {
    Router::new().route("/attestation", get(attestation)).with_state(service)
}

/// Handle to a running monitor task and its HTTP listener.
pub struct MonitorHandle {
    pub service: Arc<MonitorService>,
    pub server: ServerHandle,
    stop: watch::Sender<bool>,
    task: Option<tokio::task::JoinHandle<()>>,
}

impl MonitorHandle {
    pub fn url(&self) -> String {
        self.server.url()
    }

    /// Stops probing or proxying and seals the partial batch.
    pub fn shutdown(&mut self, runtime: &tokio::runtime::Handle) {
        let _ = self.stop.send(true);
        if let Some(task) = self.task.take() {
            let _ = runtime.block_on(task);
        }
        self.server.stop();
        let service = self.service.clone();
        runtime.block_on(async move { service.flush().await });
    }
}

async fn probe_once(http: &reqwest::Client, url: &str) -> ProbeOutcome {
    let started = Instant::now();
    match http.get(url).send().await {
        Ok(resp) => {
            let status = resp.status().as_u16();
            let _ = resp.bytes().await;
            ProbeOutcome::Response {
                status,
                latency_ms: u32::try_from(started.elapsed().as_millis()).unwrap_or(u32::MAX),
            }
        }
        Err(_) => ProbeOutcome::TransportFailure,
    }
}

/// Active monitor: probes `target_url` every `interval`, and serves
/// `/attestation` on `addr`.
pub fn run_active(
    runtime: &tokio::runtime::Handle,
    service: Arc<MonitorService>,
    target_url: String,
    interval: Duration,
    timeout: Duration,
    addr: SocketAddr,
) -> std::io::Result<MonitorHandle> {
    let server = spawn_server(runtime, addr, attestation_router(service.clone()))?;
    let (stop, mut stopped) = watch::channel(false);
    let svc = service.clone();
    let task = runtime.spawn(async move {
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client");
        let mut ticker = tokio::time::interval(interval);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                _ = ticker.tick() => {}
                _ = stopped.changed() => break,
            }
            let outcome = probe_once(&http, &target_url).await;
            if let Err(e) = svc.ingest(|m, now| m.record_probe(now, outcome).map(drop)).await {
                tracing::error!("probe not recorded: {e}");
            }
        }
    });
    Ok(MonitorHandle {
        service,
        server,
        stop,
        task: Some(task),
    })
}

struct ProxyState {
    service: Arc<MonitorService>,
    upstream: String,
    http: reqwest::Client,
}

const HOP_HEADERS: [&str; 7] = [
    "connection",
    "keep-alive",
    "proxy-connection",
    "transfer-encoding",
    "te",
    "upgrade",
    "host",
];

fn forwardable(headers: &HeaderMap) -> impl Iterator<Item = (&HeaderName, &axum::http::HeaderValue)> {
    headers
        .iter()
        .filter(|(name, _)| !HOP_HEADERS.contains(&name.as_str()))
}

async fn proxy(State(p): State<Arc<ProxyState>>, req: Request) -> Response {
    let (parts, body) = req.into_parts();
    let path = parts.uri.path_and_query().map_or("/", |pq| pq.as_str());
    let body = match axum::body::to_bytes(body, usize::MAX).await {
        Ok(b) => b,
        Err(_) => return StatusCode::BAD_REQUEST.into_response(),
    };
    let mut upstream = p.http.request(parts.method.clone(), format!("{}{path}", p.upstream));
    for (name, value) in forwardable(&parts.headers) {
        upstream = upstream.header(name, value);
    }

    let started = Instant::now();
    let result = match upstream.body(body).send().await {
        Ok(resp) => {
            let status = resp.status();
            let headers = resp.headers().clone();
            resp.bytes().await.map(|b| (status, headers, b))
        }
        Err(e) => Err(e),
    };
    let elapsed = u32::try_from(started.elapsed().as_millis()).unwrap_or(u32::MAX);

    let (observed_status, response) = match result {
        Ok((status, headers, bytes)) => {
            let mut out = Response::builder().status(status);
            for (name, value) in forwardable(&headers) {
                out = out.header(name, value);
            }
            (status.as_u16(), out.body(Body::from(bytes)).unwrap_or_else(|_| StatusCode::BAD_GATEWAY.into_response()))
        }
        Err(_) => (0, (StatusCode::BAD_GATEWAY, Bytes::from_static(b"upstream unreachable\n")).into_response()),
    };
    if let Err(e) = p
        .service
        .ingest(|m, now| m.observe(now, elapsed, observed_status).map(drop))
        .await
    {
        tracing::error!("request not recorded: {e}");
    }
    response
}

/// Passive monitor: reverse proxy on `addr` forwarding everything except
/// `/attestation` to `upstream`. With `max_window`, a partial batch is
/// sealed once it has been open that long.
pub fn run_passive(
    runtime: &tokio::runtime::Handle,
    service: Arc<MonitorService>,
    upstream: String,
    max_window: Option<Duration>,
    addr: SocketAddr,
) -> std::io::Result<MonitorHandle> {
    let http = reqwest::Client::builder()
        .pool_max_idle_per_host(256)
        .build()
        .map_err(std::io::Error::other)?;
    let state = Arc::new(ProxyState {
        service: service.clone(),
        upstream: upstream.trim_end_matches('/').to_string(),
        http,
    });
    let app = Router::new()
        .route("/attestation", get(attestation).with_state(service.clone()))
        .fallback(proxy)
        .with_state(state);
    let server = spawn_server(runtime, addr, app)?;
    let (stop, mut stopped) = watch::channel(false);
    let svc = service.clone();
    let task = runtime.spawn(async move {
        let Some(window) = max_window else {
            let _ = stopped.changed().await;
            return;
        };
        let mut ticker = tokio::time::interval((window / 10).max(Duration::from_millis(10)));
        loop {
            tokio::select! {
                _ = ticker.tick() => svc.flush_if_window_elapsed(window).await,
                _ = stopped.changed() => break,
            }
        }
    });
    Ok(MonitorHandle {
        service,
        server,
        stop,
        task: Some(task),
    })
}
