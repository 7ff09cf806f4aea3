//! Open-loop load generator. Requests are scheduled at fixed offsets
//! `i / rps` from the start and latency is measured from the scheduled time,
//! so a stalled server is charged for the queueing it causes.

use std::sync::Arc;
use std::time::{Duration, Instant};

use tokio::sync::Semaphore;
use tokio::task::JoinSet;

#[derive(Debug, Clone, Copy)]
pub struct RequestSample {
    pub scheduled: Instant,
    pub latency: Duration,
    /// 2xx answer received.
    pub ok: bool,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub samples: Vec<RequestSample>,
    pub elapsed: Duration,
}

impl LoadReport {
    pub fn failures(&self) -> u64 {
        self.samples.iter().filter(|s| !s.ok).count() as u64
    }

    /// Latencies in microseconds, in schedule order.
    pub fn latencies_us(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.latency.as_micros() as u64).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LoadPlan {
    pub url: String,
    pub rps: u64,
    pub duration: Duration,
    /// Upper bound on requests in flight.
    pub max_in_flight: usize,
    pub timeout: Duration,
}

pub async fn run_open_loop(plan: &LoadPlan) -> LoadReport {
    let http = reqwest::Client::builder()
        .timeout(plan.timeout)
        .pool_max_idle_per_host(plan.max_in_flight)
        .build()
        .expect("http client");
    let total = (plan.rps as f64 * plan.duration.as_secs_f64()).round() as u64;
    let gap = Duration::from_secs_f64(1.0 / plan.rps.max(1) as f64);
    let permits = Arc::new(Semaphore::new(plan.max_in_flight.max(1)));
    let mut tasks = JoinSet::new();
    let start = Instant::now();
    for i in 0..total {
        let scheduled = start + gap.mul_f64(i as f64);
        tokio::time::sleep_until(scheduled.into()).await;
        let permit = permits.clone().acquire_owned().await.expect("semaphore open");
        let http = http.clone();
        let url = plan.url.clone();
        tasks.spawn(async move {
            let ok = match http.get(&url).send().await {
                Ok(resp) => {
                    let ok = resp.status().is_success();
                    resp.bytes().await.is_ok() && ok
                }
                Err(_) => false,
            };
            drop(permit);
            RequestSample {
                scheduled,
                latency: scheduled.elapsed(),
                ok,
            }
        });
    }
    let mut samples = Vec::with_capacity(total as usize);
    while let Some(done) = tasks.join_next().await {
        if let Ok(sample) = done {
            samples.push(sample);
        }
    }
    samples.sort_by_key(|s| s.scheduled);
    LoadReport {
        samples,
        elapsed: start.elapsed(),
    }
}
