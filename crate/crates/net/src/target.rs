//! Dummy monitored service with injectable delay and seeded failures.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::Router;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::server::{spawn_server, ServerHandle};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetConfig {
    pub delay_ms: u64,
    /// Probability of answering 503, drawn from a seeded RNG in request
    /// arrival order.
    pub fail_rate: f64,
    pub seed: u64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            delay_ms: 5,
            fail_rate: 0.0,
            seed: 0,
        }
    }
}

struct TargetState {
    delay: Duration,
    fail_rate: f64,
    rng: Mutex<StdRng>,
    served: AtomicU64,
    failed: AtomicU64,
}

pub struct TargetHandle {
    pub server: ServerHandle,
    state: Arc<TargetState>,
}

impl TargetHandle {
    pub fn url(&self) -> String {
        self.server.url()
    }

    pub fn served(&self) -> u64 {
        self.state.served.load(Ordering::Relaxed)
    }

    pub fn failed(&self) -> u64 {
        self.state.failed.load(Ordering::Relaxed)
    }

    pub fn stop(&mut self) {
        self.server.stop();
    }
}

async fn respond(State(s): State<Arc<TargetState>>) -> (StatusCode, &'static str) {
    let fail = s.fail_rate > 0.0 && s.rng.lock().unwrap().gen_bool(s.fail_rate);
    if !s.delay.is_zero() {
        tokio::time::sleep(s.delay).await;
    }
    s.served.fetch_add(1, Ordering::Relaxed);
    if fail {
        s.failed.fetch_add(1, Ordering::Relaxed);
        (StatusCode::SERVICE_UNAVAILABLE, "injected failure\n")
    } else {
        (StatusCode::OK, "ok\n")
    }
}

/// Answers `/health` and every other path after `delay_ms`.
pub fn run_target(runtime: &tokio::runtime::Handle, config: TargetConfig, addr: SocketAddr) -> std::io::Result<TargetHandle> {
    let state = Arc::new(TargetState {
        delay: Duration::from_millis(config.delay_ms),
        fail_rate: config.fail_rate.clamp(0.0, 1.0),
        rng: Mutex::new(StdRng::seed_from_u64(config.seed)),
        served: AtomicU64::new(0),
        failed: AtomicU64::new(0),
    });
    let app = Router::new().fallback(respond).with_state(state.clone());
    let server = spawn_server(runtime, addr, app)?;
    Ok(TargetHandle { server, state })
}
