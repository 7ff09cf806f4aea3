//! Evidence store HTTP server: content store plus registry.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use vsla_core::evidence::{KeyId, SigningKey};
use vsla_core::store::{AnchorRecord, ContentId, ContentStore, EvidenceRegistry, Registry, RegistryView, StoreError};

use crate::wire::{ClaimRequest, ErrorBody, PutResponse, RegisterRequest};

pub struct StoreState {
    pub registry: Arc<Registry>,
    pub cas: Arc<dyn ContentStore>,
    /// Signs `/snapshot` responses when set.
    pub operator: Option<SigningKey>,
}

struct ApiError(ErrorBody);

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError(ErrorBody::from(&e))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0)).into_response()
    }
}

fn bad_request(reason: impl ToString) -> ApiError {
    ApiError(ErrorBody::BadRequest {
        reason: reason.to_string(),
    })
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: Arc<StoreState>) -> Router {
    Router::new()
        .route("/monitors", post(register).get(list_monitors))
        .route("/monitors/{id}", get(monitor))
        .route("/monitors/{id}/batches", get(batches))
        .route("/batches", post(anchor_batch))
        .route("/claims", post(anchor_claim).get(claims))
        .route("/cas", put(cas_put))
        .route("/cas/{cid}", get(cas_get))
        .route("/snapshot", get(snapshot))
        .with_state(state)
}

fn parse_id(id: &str) -> Result<KeyId, ApiError> {
    id.parse().map_err(bad_request)
}

async fn register(State(s): State<Arc<StoreState>>, Json(req): Json<RegisterRequest>) -> ApiResult<vsla_core::store::MonitorRecord> {
    Ok(Json(s.registry.register_monitor(req.record, req.provider_sig, req.consumer_sig)?))
}

async fn list_monitors(State(s): State<Arc<StoreState>>) -> Json<Vec<vsla_core::store::MonitorRecord>> {
    Json(s.registry.monitors())
}

async fn monitor(State(s): State<Arc<StoreState>>, Path(id): Path<String>) -> ApiResult<vsla_core::store::MonitorRecord> {
    Ok(Json(s.registry.monitor(&parse_id(&id)?)?))
}

async fn batches(State(s): State<Arc<StoreState>>, Path(id): Path<String>) -> ApiResult<Vec<AnchorRecord>> {
    Ok(Json(s.registry.audit_trail(&parse_id(&id)?)?))
}

async fn anchor_batch(State(s): State<Arc<StoreState>>, Json(record): Json<AnchorRecord>) -> ApiResult<AnchorRecord> {
    Ok(Json(s.registry.anchor_batch(record)?))
}

async fn anchor_claim(
    State(s): State<Arc<StoreState>>,
    Json(req): Json<ClaimRequest>,
) -> ApiResult<vsla_core::store::ClaimAnchor> {
    Ok(Json(s.registry.anchor_claim(req.claim_cid, req.claim_root, &req.submitter)?))
}

async fn claims(State(s): State<Arc<StoreState>>) -> ApiResult<Vec<vsla_core::store::ClaimAnchor>> {
    Ok(Json(s.registry.claim_anchors()?))
}

async fn cas_put(State(s): State<Arc<StoreState>>, body: Bytes) -> ApiResult<PutResponse> {
    Ok(Json(PutResponse { cid: s.cas.put(&body)? }))
}

async fn cas_get(State(s): State<Arc<StoreState>>, Path(cid): Path<String>) -> Result<Response, ApiError> {
    let cid: ContentId = cid.parse().map_err(bad_request)?;
    let bytes = s.cas.get(&cid)?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

async fn snapshot(State(s): State<Arc<StoreState>>) -> Json<vsla_core::store::RegistrySnapshot> {
    Json(s.registry.snapshot(s.operator.as_ref()))
}

/// A server running on a background task until stopped or dropped.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting connections; in-flight requests are dropped.
    pub fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            task.abort();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `addr` and serves `app` on `runtime`. Fails if the port is taken.
pub fn spawn_server(runtime: &tokio::runtime::Handle, addr: SocketAddr, app: Router) -> std::io::Result<ServerHandle> {
    let listener = runtime.block_on(TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let task = runtime.spawn(async move {
        let serve = axum::serve(listener, app).with_graceful_shutdown(async {
            let _ = rx.await;
        });
        if let Err(e) = serve.await {
            tracing::warn!("server on {addr} stopped: {e}");
        }
    });
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        task: Some(task),
    })
}

pub fn spawn_store(
    runtime: &tokio::runtime::Handle,
    addr: SocketAddr,
    state: Arc<StoreState>,
) -> std::io::Result<ServerHandle> {
    spawn_server(runtime, addr, router(state))
}
