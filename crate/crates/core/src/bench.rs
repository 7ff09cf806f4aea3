//! Benchmark support: nearest-rank percentiles, the experiment plan, the
//! per-cell result schema and its CSV form, text/SVG summaries, and
//! in-process fixtures for measuring evaluation and verification cost as a
//! function of batch size.
//!
//! CSV columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `batch_size` | measurements per sealed batch |
//! | `rps` | offered load, requests per second |
//! | `seed` | RNG seed of the cell |
//! | `requests` | requests issued |
//! | `failures` | requests answered with a non-2xx status or not at all |
//! | `p50_ms`, `p90_ms`, `p95_ms`, `p99_ms` | client-observed latency, nearest rank |
//! | `seal_spike_ms` | worst latency of a request in flight during a seal, minus `p50_ms` |
//! | `batches_anchored` | batches accepted by the registry during the cell |
//! | `proving_time_ms` | reference-backend proof time for one batch |
//! | `verify_time_ms` | verification time of a violation-privacy claim |
//! | `full_verify_time_ms` | verification time of a full-disclosure claim |
//! | `anchor_payload_bytes` | registry submission size of one batch |
//! | `error` | empty, or why the cell failed |

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Strategy, ViolationClaim};
use crate::sim::{spec_for, ClauseDoc, Deployment, Sample};
use crate::store::{AnchorRecord, ANCHOR_PAYLOAD_LEN};
use crate::vslas::VslaSpec;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("percentile of an empty sample")]
    Empty,
    #[error("percentile {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("results CSV is missing column {column:?}")]
    Schema { column: String },
    #[error("results CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("plan: {0}")]
    Plan(String),
}

/// Nearest-rank percentile: the value at 1-based rank ceil(p·n) of the
/// ascending sort.
pub fn percentile<T: Copy + Ord>(values: &[T], p: f64) -> Result<T, BenchError> {
    if values.is_empty() {
        return Err(BenchError::Empty);
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(BenchError::BadFraction(p));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    Ok(sorted[nearest_rank(p, sorted.len()) - 1])
}

/// ceil(p·n), tolerant of binary rounding in `p` (0.95·100 is 95).
pub fn nearest_rank(p: f64, n: usize) -> usize {
    let exact = p * n as f64;
    let rank = (exact - exact.abs() * 1e-12).ceil() as usize;
    rank.clamp(1, n)
}

/// Median of durations; used to damp scheduler noise in timing checks.
pub fn median(mut samples: Vec<Duration>) -> Duration {
    assert!(!samples.is_empty(), "median of nothing");
    samples.sort_unstable();
    samples[(samples.len() - 1) / 2]
}

/// Least-squares slope of ln(y) against ln(x).
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = logs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    cov / var
}

fn default_batch_sizes() -> Vec<u64> {
    vec![512, 1024, 2048, 4096, 8192]
}

fn default_rps_levels() -> Vec<u64> {
    vec![32, 64, 128, 256, 512]
}

fn default_durable_store() -> bool {
    true
}

fn default_duration_s() -> f64 {
    30.0
}

fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

fn default_seed() -> u64 {
    7
}

fn default_delay_ms() -> u64 {
    5
}

fn default_threshold_ms() -> u64 {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default = "default_batch_sizes")]
    pub batch_sizes: Vec<u64>,
    #[serde(default = "default_rps_levels")]
    pub rps_levels: Vec<u64>,
    #[serde(default = "default_duration_s")]
    pub duration_s: f64,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Response delay of the dummy target service.
    #[serde(default = "default_delay_ms")]
    pub target_delay_ms: u64,
    #[serde(default)]
    pub target_fail_rate: f64,
    /// Latency threshold of the evaluated clause.
    #[serde(default = "default_threshold_ms")]
    pub threshold_ms: u64,
    /// Back the evidence store with fsynced files and a registry log rather
    /// than memory.
    #[serde(default = "default_durable_store")]
    pub durable_store: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            batch_sizes: default_batch_sizes(),
            rps_levels: default_rps_levels(),
            duration_s: default_duration_s(),
            strategies: default_strategies(),
            seed: default_seed(),
            target_delay_ms: default_delay_ms(),
            target_fail_rate: 0.0,
            threshold_ms: default_threshold_ms(),
            durable_store: default_durable_store(),
        }
    }
}

impl ExperimentPlan {
    /// `defaults` or a YAML/JSON plan file; omitted fields take defaults.
    pub fn load(source: &str) -> Result<Self, BenchError> {
        if source == "defaults" {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(source)?;
        let plan: Self = serde_yaml::from_str(&text).map_err(|e| BenchError::Plan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.batch_sizes.is_empty() || self.rps_levels.is_empty() {
            return Err(BenchError::Plan("empty batch size or rps list".into()));
        }
        if self.batch_sizes.contains(&0) || self.rps_levels.contains(&0) {
            return Err(BenchError::Plan("batch sizes and rps levels must be positive".into()));
        }
        if self.duration_s.is_nan() || self.duration_s <= 0.0 {
            return Err(BenchError::Plan("duration_s must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.target_fail_rate) {
            return Err(BenchError::Plan("target_fail_rate must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Cells in run order with a per-cell seed derived from the plan seed.
    pub fn cells(&self) -> Vec<(u64, u64, u64)> {
        let mut cells = Vec::new();
        for &b in &self.batch_sizes {
            for &r in &self.rps_levels {
                let seed = self.seed ^ (b << 20) ^ r;
                cells.push((b, r, seed));
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CellResult {
    pub batch_size: u64,
    pub rps: u64,
    pub seed: u64,
    pub requests: u64,
    pub failures: u64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub seal_spike_ms: f64,
    pub batches_anchored: u64,
    pub proving_time_ms: Option<f64>,
    pub verify_time_ms: Option<f64>,
    pub full_verify_time_ms: Option<f64>,
    pub anchor_payload_bytes: u64,
    pub error: Option<String>,
}

pub const CSV_COLUMNS: [&str; 16] = [
    "batch_size",
    "rps",
    "seed",
    "requests",
    "failures",
    "p50_ms",
    "p90_ms",
    "p95_ms",
    "p99_ms",
    "seal_spike_ms",
    "batches_anchored",
    "proving_time_ms",
    "verify_time_ms",
    "full_verify_time_ms",
    "anchor_payload_bytes",
    "error",
];

/// Columns `emit_plots` cannot do without.
const REQUIRED_COLUMNS: [&str; 6] = ["batch_size", "rps", "p50_ms", "p90_ms", "p95_ms", "verify_time_ms"];

impl CellResult {
    /// A failed cell: its coordinates and the error, nothing measured.
    pub fn failed(batch_size: u64, rps: u64, seed: u64, error: String) -> Self {
        Self {
            batch_size,
            rps,
            seed,
            anchor_payload_bytes: ANCHOR_PAYLOAD_LEN as u64,
            error: Some(error),
            ..Self::default()
        }
    }
}

pub fn write_csv(results: &[CellResult], out: impl std::io::Write) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        w.serialize(r)?;
    }
    if results.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(input: impl Read) -> Result<Vec<CellResult>, BenchError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if let Some(missing) = REQUIRED_COLUMNS.iter().find(|c| !headers.iter().any(|h| h == **c)) {
        return Err(BenchError::Schema {
            column: (*missing).to_string(),
        });
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let get = |name: &str| headers.iter().position(|h| h == name).and_then(|i| record.get(i));
        let num = |name: &str| -> Result<f64, BenchError> {
            match get(name) {
                Some(v) if !v.trim().is_empty() => v.trim().parse().map_err(|_| BenchError::Schema {
                    column: format!("{name} (value {v:?} is not a number)"),
                }),
                _ => Ok(0.0),
            }
        };
        let opt = |name: &str| -> Result<Option<f64>, BenchError> {
            match get(name) {
                Some(v) if !v.trim().is_empty() => num(name).map(Some),
                _ => Ok(None),
            }
        };
        rows.push(CellResult {
            batch_size: num("batch_size")? as u64,
            rps: num("rps")? as u64,
            seed: num("seed")? as u64,
            requests: num("requests")? as u64,
            failures: num("failures")? as u64,
            p50_ms: num("p50_ms")?,
            p90_ms: num("p90_ms")?,
            p95_ms: num("p95_ms")?,
            p99_ms: num("p99_ms")?,
            seal_spike_ms: num("seal_spike_ms")?,
            batches_anchored: num("batches_anchored")? as u64,
            proving_time_ms: opt("proving_time_ms")?,
            verify_time_ms: opt("verify_time_ms")?,
            full_verify_time_ms: opt("full_verify_time_ms")?,
            anchor_payload_bytes: num("anchor_payload_bytes")? as u64,
            error: get("error").filter(|e| !e.is_empty()).map(str::to_string),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSummary {
    /// Cells in the heatmap table.
    pub cells: usize,
    /// (batch size, median violation-claim verify time in ms).
    pub verify_series: Vec<(u64, f64)>,
    pub heatmap_text: String,
}

/// Writes `heatmap.txt`, `verify_time.csv` and `verify_time.svg` into
/// `out_dir`.
pub fn emit_plots(csv_path: &Path, out_dir: &Path) -> Result<PlotSummary, BenchError> {
    let rows = read_csv(fs::File::open(csv_path)?)?;
    let summary = summarize(&rows);
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("heatmap.txt"), &summary.heatmap_text)?;
    let mut series = String::from("batch_size,verify_time_ms\n");
    for (n, t) in &summary.verify_series {
        writeln!(series, "{n},{t:.4}").unwrap();
    }
    fs::write(out_dir.join("verify_time.csv"), series)?;
    fs::write(out_dir.join("verify_time.svg"), svg_series(&summary.verify_series))?;
    Ok(summary)
}

pub fn summarize(rows: &[CellResult]) -> PlotSummary {
    let mut batches: Vec<u64> = rows.iter().map(|r| r.batch_size).collect();
    batches.sort_unstable();
    batches.dedup();
    let mut rps: Vec<u64> = rows.iter().map(|r| r.rps).collect();
    rps.sort_unstable();
    rps.dedup();

    let mut text = String::from("P50/P90/P95 latency (ms) by batch size (rows) and rps (columns)\n\n");
    write!(text, "{:>8}", "batch").unwrap();
    for r in &rps {
        write!(text, " | {:>20}", format!("{r} rps")).unwrap();
    }
    text.push('\n');
    let mut cells = 0;
    for b in &batches {
        write!(text, "{b:>8}").unwrap();
        for r in &rps {
            let cell = match rows.iter().find(|row| row.batch_size == *b && row.rps == *r) {
                Some(row) if row.error.is_none() => {
                    cells += 1;
                    format!("{:.1}/{:.1}/{:.1}", row.p50_ms, row.p90_ms, row.p95_ms)
                }
                Some(_) => {
                    cells += 1;
                    "failed".to_string()
                }
                None => "-".to_string(),
            };
            write!(text, " | {cell:>20}").unwrap();
        }
        text.push('\n');
    }

    let verify_series = batches
        .iter()
        .filter_map(|b| {
            let mut times: Vec<f64> = rows
                .iter()
                .filter(|r| r.batch_size == *b)
                .filter_map(|r| r.verify_time_ms)
                .collect();
            if times.is_empty() {
                return None;
            }
            times.sort_by(f64::total_cmp);
            Some((*b, times[(times.len() - 1) / 2]))
        })
        .collect();
    PlotSummary {
        cells,
        verify_series,
        heatmap_text: text,
    }
}

fn svg_series(points: &[(u64, f64)]) -> String {
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let xmax = points.iter().map(|p| p.0 as f64).fold(1.0, f64::max);
    let ymax = points.iter().map(|p| p.1).fold(f64::MIN_POSITIVE, f64::max) * 1.1;
    let sx = |x: f64| pad + (x / xmax) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y / ymax) * (h - 2.0 * pad);
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    write!(
        svg,
        r#"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{b}" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    )
    .unwrap();
    write!(svg, r#"<text x="{}" y="{}">evidences per batch</text>"#, w / 2.0 - 50.0, h - 12.0).unwrap();
    write!(svg, r#"<text x="8" y="{}">verify ms (max {ymax:.3})</text>"#, pad - 16.0).unwrap();
    let path: Vec<String> = points.iter().map(|(x, y)| format!("{:.1},{:.1}", sx(*x as f64), sy(*y))).collect();
    if points.len() > 1 {
        write!(svg, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, path.join(" ")).unwrap();
    }
    for (x, y) in points {
        write!(
            svg,
            r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/><text x="{:.1}" y="{:.1}">{x}</text>"#,
            sx(*x as f64),
            sy(*y),
            sx(*x as f64) - 10.0,
            h - pad + 14.0
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

/// One anchored batch of `n` fast samples with a single slow one, and the
/// claims built over it. Used to time evaluation and verification against
/// batch size without any network in the loop.
pub struct ScalingFixture {
    pub deployment: Deployment,
    pub anchor: AnchorRecord,
    pub spec: VslaSpec,
    pub violation_claim: ViolationClaim,
    pub full_claim: ViolationClaim,
}

pub const SCALING_CLAUSE: &str = "all-under-300";

impl ScalingFixture {
    pub fn new(n: usize, seed: u64) -> Self {
        let deployment = Deployment::new(seed);
        let mut monitor = deployment.active_monitor(n as u64, 10).expect("monitor boots");
        let mut samples = vec![Sample::ok(20); n];
        samples[n / 3] = Sample::ok(450);
        let anchor = deployment.anchor_samples(&mut monitor, &samples).expect("batch anchors");
        let spec = spec_for(&[ClauseDoc::latency_below(SCALING_CLAUSE, 300, 1, 1)]);
        let engine = deployment.engine();
        let violation_claim = engine
            .run_pipeline(&anchor, &spec, SCALING_CLAUSE, Strategy::ViolationPrivacy)
            .expect("violation claim");
        let full_claim = engine
            .run_pipeline(&anchor, &spec, SCALING_CLAUSE, Strategy::FullDisclosure)
            .expect("full claim");
        drop(engine);
        Self {
            deployment,
            anchor,
            spec,
            violation_claim,
            full_claim,
        }
    }

    /// Preflight plus reference-backend proof over the whole batch.
    pub fn time_full_batch_evaluation(&self) -> Duration {
        let start = Instant::now();
        let claim = self
            .deployment
            .engine()
            .build_claim(&self.anchor, &self.spec, SCALING_CLAUSE, Strategy::BatchPrivacy)
            .expect("evaluation succeeds");
        let elapsed = start.elapsed();
        assert!(!claim.ok);
        elapsed
    }

    pub fn time_violation_verification(&self) -> Duration {
        let verifier = self.deployment.verifier();
        let start = Instant::now();
        let report = verifier.verify_claim(&self.violation_claim, &self.spec);
        let elapsed = start.elapsed();
        assert!(report.accepted(), "{:?}", report.verdict);
        elapsed
    }

    pub fn time_full_verification(&self) -> Duration {
        let verifier = self.deployment.verifier();
        let start = Instant::now();
        let report = verifier.verify_claim(&self.full_claim, &self.spec);
        let elapsed = start.elapsed();
        assert!(report.accepted(), "{:?}", report.verdict);
        elapsed
    }
}
