//! Verifiable SLA specifications: an OpenSLO-style document carrying a
//! `verification:` section, and the compilation of each SLO clause into a
//! deterministic compliance predicate identified by a program id.
//!
//! Accepted document shape (YAML or JSON):
//!
//! ```yaml
//! apiVersion: openslo/v1
//! kind: SLO
//! metadata:
//!   name: checkout-latency
//! spec:
//!   objectives:
//!     - id: p95-under-300
//!       sli: latency_ms        # or success_status
//!       op: lt                 # lt | le | gt | ge (lte/gte accepted)
//!       value: 300ms
//!       target: 0.95           # or "95%"
//!       window: per_batch      # or {time_window: 60s}
//!   verification:              # also accepted at the top level
//!     monitors:
//!       - type: tee-passive
//!         location: us-east-1
//!         tee-provider: intel-tdx
//!     evidence:
//!       storage-type: ipfs-private
//!       blockchain:
//!         network: base
//!         contract: "0x..."
//!     aggregation-engine: risc0
//! ```
//!
//! Unknown fields are carried along untouched and are covered by the document
//! digest.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::evidence::{keccak256, keccak256_parts, verify_sig, Digest, FieldWriter, MetricVector, Signature};
use crate::store::SlaParties;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpecError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("missing required field at {path}")]
    Missing { path: String },
    #[error("invalid value at {path}: {reason}")]
    Invalid { path: String, reason: String },
    #[error("unknown comparator {value:?} at {path}")]
    UnknownComparator { path: String, value: String },
    #[error("quantile target {value} out of range (0, 1] at {path}")]
    QuantileRange { path: String, value: String },
    #[error("unsupported metric {value:?} at {path}")]
    UnsupportedMetric { path: String, value: String },
}

impl SpecError {
    pub fn path(&self) -> Option<&str> {
        match self {
            SpecError::Syntax(_) => None,
            SpecError::Missing { path }
            | SpecError::Invalid { path, .. }
            | SpecError::UnknownComparator { path, .. }
            | SpecError::QuantileRange { path, .. }
            | SpecError::UnsupportedMetric { path, .. } => Some(path),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PredicateError {
    #[error("cannot evaluate a predicate over zero samples")]
    NoData,
    #[error("invalid clause: {0}")]
    InvalidClause(String),
    #[error("predicate program id does not match its clause")]
    ProgramIdMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliMetric {
    LatencyMs,
    /// 1 for a 2xx/3xx response, 0 otherwise (including transport failures).
    SuccessStatus,
}

impl SliMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            SliMetric::LatencyMs => "latency_ms",
            SliMetric::SuccessStatus => "success_status",
        }
    }

    pub fn sample(self, latency_ms: u32, status: u16) -> u64 {
        match self {
            SliMetric::LatencyMs => u64::from(latency_ms),
            SliMetric::SuccessStatus => u64::from((200..400).contains(&status)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparator {
    pub fn as_str(self) -> &'static str {
        match self {
            Comparator::Lt => "lt",
            Comparator::Le => "le",
            Comparator::Gt => "gt",
            Comparator::Ge => "ge",
        }
    }

    pub fn holds(self, value: u64, threshold: u64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "lt" | "<" => Comparator::Lt,
            "le" | "lte" | "<=" => Comparator::Le,
            "gt" | ">" => Comparator::Gt,
            "ge" | "gte" | ">=" => Comparator::Ge,
            _ => return None,
        })
    }
}

/// Required fraction of satisfying samples, kept as a reduced rational so
/// evaluation is exact integer arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quantile {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Quantile {
    pub fn new(num: u64, den: u64) -> Option<Self> {
        if num == 0 || den == 0 || num > den {
            return None;
        }
        let g = gcd(num, den);
        Some(Self {
            num: num / g,
            den: den / g,
        })
    }

    /// Parses `0.95`, `1`, `95%` or `99.9%`.
    pub fn parse_decimal(s: &str) -> Option<Self> {
        let s = s.trim();
        let (digits, percent) = match s.strip_suffix('%') {
            Some(d) => (d.trim(), true),
            None => (s, false),
        };
        let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let scale_digits = frac_part.len() + if percent { 2 } else { 0 };
        if scale_digits > 18 || int_part.len() > 3 {
            return None;
        }
        let int: u64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
        let frac: u64 = if frac_part.is_empty() { 0 } else { frac_part.parse().ok()? };
        let num = int.checked_mul(10u64.pow(frac_part.len() as u32))?.checked_add(frac)?;
        Self::new(num, 10u64.pow(scale_digits as u32))
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    /// True iff `satisfied / total >= self`.
    pub fn met_by(&self, satisfied: u64, total: u64) -> bool {
        u128::from(satisfied) * u128::from(self.den) >= u128::from(self.num) * u128::from(total)
    }

    /// Smallest satisfying count that meets the target: ceil(q·n).
    pub fn min_satisfying(&self, total: u64) -> u64 {
        let prod = u128::from(self.num) * u128::from(total);
        prod.div_ceil(u128::from(self.den)) as u64
    }
}

impl fmt::Display for Quantile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowPolicy {
    PerBatch,
    TimeWindow { duration_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SloClause {
    pub id: String,
    pub sli: SliMetric,
    pub comparator: Comparator,
    pub threshold: u64,
    pub target: Quantile,
    pub window: WindowPolicy,
}

impl SloClause {
    pub fn satisfied_by(&self, latency_ms: u32, status: u16) -> bool {
        self.comparator.holds(self.sli.sample(latency_ms, status), self.threshold)
    }

    pub fn validate(&self) -> Result<(), PredicateError> {
        if self.sli == SliMetric::LatencyMs && self.threshold == 0 {
            return Err(PredicateError::InvalidClause("latency threshold must be positive".into()));
        }
        if Quantile::new(self.target.num, self.target.den) != Some(self.target) {
            return Err(PredicateError::InvalidClause("target must be a reduced fraction in (0, 1]".into()));
        }
        Ok(())
    }

    /// Encoding hashed into the program id. The clause id is a label and is
    /// not part of it.
    pub fn canonical_encoding(&self) -> Vec<u8> {
        let (window_kind, window_ms) = match self.window {
            WindowPolicy::PerBatch => ("per_batch", 0),
            WindowPolicy::TimeWindow { duration_ms } => ("time_window", duration_ms),
        };
        FieldWriter::new()
            .str("vsla.predicate.v1")
            .str(self.sli.as_str())
            .str(self.comparator.as_str())
            .u64(self.threshold)
            .u64(self.target.num)
            .u64(self.target.den)
            .str(window_kind)
            .u64(window_ms)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorSpec {
    #[serde(rename = "type")]
    pub kind: String,
    pub location: Option<String>,
    pub tee_provider: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSpec {
    pub storage_type: String,
    pub network: Option<String>,
    pub registry_address: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    pub monitors: Vec<MonitorSpec>,
    pub evidence: EvidenceSpec,
    pub aggregation_engine: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartySignatures {
    pub provider: Signature,
    pub consumer: Signature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VslaSpec {
    pub name: Option<String>,
    pub clauses: Vec<SloClause>,
    pub verification: Verification,
    /// keccak256 of the canonical JSON form of the document without its
    /// `signatures` field.
    pub spec_digest: Digest,
    pub signatures: Option<PartySignatures>,
    pub document: Value,
}

impl VslaSpec {
    pub fn clause(&self, id: &str) -> Option<&SloClause> {
        self.clauses.iter().find(|c| c.id == id)
    }

    pub fn verify_signatures(&self, parties: &SlaParties) -> bool {
        self.signatures.is_some_and(|s| {
            verify_sig(self.spec_digest.as_bytes(), &s.provider, &parties.provider)
                && verify_sig(self.spec_digest.as_bytes(), &s.consumer, &parties.consumer)
        })
    }

    /// Whether the document declares a monitor of the given probe kind.
    pub fn declares_monitor_kind(&self, kind: crate::evidence::ProbeKind) -> bool {
        let want = kind.to_string();
        self.verification
            .monitors
            .iter()
            .any(|m| m.kind.rsplit('-').next() == Some(want.as_str()))
    }
}

/// Sorted-key, whitespace-free JSON.
pub fn canonical_json(value: &Value) -> String {
    fn write(value: &Value, out: &mut String) {
        match value {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&Value::String(k.clone()).to_string());
                    out.push(':');
                    write(&map[k], out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(item, out);
                }
                out.push(']');
            }
            scalar => out.push_str(&scalar.to_string()),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

pub fn spec_digest(document: &Value) -> Digest {
    let mut unsigned = document.clone();
    if let Value::Object(map) = &mut unsigned {
        map.remove("signatures");
    }
    keccak256(canonical_json(&unsigned).as_bytes())
}

struct Cursor<'a> {
    value: &'a Value,
    path: String,
}

impl<'a> Cursor<'a> {
    fn root(value: &'a Value) -> Self {
        Self {
            value,
            path: String::new(),
        }
    }

    fn get(&self, key: &str) -> Option<Cursor<'a>> {
        self.value.get(key).filter(|v| !v.is_null()).map(|value| Cursor {
            value,
            path: format!("{}/{}", self.path, key),
        })
    }

    fn require(&self, key: &str) -> Result<Cursor<'a>, SpecError> {
        self.get(key).ok_or_else(|| SpecError::Missing {
            path: format!("{}/{}", self.path, key),
        })
    }

    fn invalid(&self, reason: impl Into<String>) -> SpecError {
        SpecError::Invalid {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    fn string(&self) -> Result<String, SpecError> {
        self.value
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| self.invalid("expected a string"))
    }

    fn scalar_text(&self) -> Result<String, SpecError> {
        match self.value {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err(self.invalid("expected a number or string")),
        }
    }

    fn items(&self) -> Result<Vec<Cursor<'a>>, SpecError> {
        let items = self.value.as_array().ok_or_else(|| self.invalid("expected a list"))?;
        Ok(items
            .iter()
            .enumerate()
            .map(|(i, value)| Cursor {
                value,
                path: format!("{}/{}", self.path, i),
            })
            .collect())
    }

    fn opt_string(&self, key: &str) -> Result<Option<String>, SpecError> {
        self.get(key).map(|c| c.string()).transpose()
    }
}

/// Parses `300`, `300ms`, `2s`.
fn parse_duration_ms(text: &str) -> Option<u64> {
    let text = text.trim();
    if let Some(ms) = text.strip_suffix("ms") {
        return ms.trim().parse().ok();
    }
    if let Some(s) = text.strip_suffix('s') {
        return s.trim().parse::<u64>().ok()?.checked_mul(1000);
    }
    if let Some(m) = text.strip_suffix('m') {
        return m.trim().parse::<u64>().ok()?.checked_mul(60_000);
    }
    if let Some(h) = text.strip_suffix('h') {
        return h.trim().parse::<u64>().ok()?.checked_mul(3_600_000);
    }
    text.parse().ok()
}

fn parse_clause(c: &Cursor<'_>, index: usize) -> Result<SloClause, SpecError> {
    let id = match c.get("id").or_else(|| c.get("name")).or_else(|| c.get("displayName")) {
        Some(id) => id.string()?,
        None => format!("objective-{index}"),
    };

    let sli_cursor = c.require("sli")?;
    let sli_text = sli_cursor.string()?;
    let sli = match sli_text.as_str() {
        "latency_ms" | "latency" => SliMetric::LatencyMs,
        "success_status" | "status" => SliMetric::SuccessStatus,
        other => {
            return Err(SpecError::UnsupportedMetric {
                path: sli_cursor.path,
                value: other.to_string(),
            })
        }
    };

    let op_cursor = c.require("op")?;
    let op_text = op_cursor.string()?;
    let comparator = Comparator::parse(&op_text).ok_or(SpecError::UnknownComparator {
        path: op_cursor.path.clone(),
        value: op_text,
    })?;

    let value_cursor = c.get("value").map_or_else(|| c.require("threshold"), Ok)?;
    let threshold = parse_duration_ms(&value_cursor.scalar_text()?)
        .ok_or_else(|| value_cursor.invalid("expected an integer threshold, optionally with ms/s/m units"))?;
    if sli == SliMetric::LatencyMs && threshold == 0 {
        return Err(value_cursor.invalid("latency threshold must be positive"));
    }

    let target_cursor = c.require("target")?;
    let target_text = target_cursor.scalar_text()?;
    let target = Quantile::parse_decimal(&target_text).ok_or(SpecError::QuantileRange {
        path: target_cursor.path.clone(),
        value: target_text,
    })?;

    let window = match c.get("window") {
        None => WindowPolicy::PerBatch,
        Some(w) => match w.value {
            Value::String(s) if s == "per_batch" || s == "per-batch" => WindowPolicy::PerBatch,
            Value::Object(_) => {
                let d = w.require("time_window")?;
                let duration_ms = parse_duration_ms(&d.scalar_text()?)
                    .filter(|ms| *ms > 0)
                    .ok_or_else(|| d.invalid("expected a positive duration"))?;
                WindowPolicy::TimeWindow { duration_ms }
            }
            _ => return Err(w.invalid("expected per_batch or {time_window: <duration>}")),
        },
    };

    Ok(SloClause {
        id,
        sli,
        comparator,
        threshold,
        target,
        window,
    })
}

fn parse_verification(v: &Cursor<'_>) -> Result<Verification, SpecError> {
    let monitors_cursor = v.require("monitors")?;
    let monitors = monitors_cursor
        .items()?
        .iter()
        .map(|m| {
            Ok(MonitorSpec {
                kind: m.require("type")?.string()?,
                location: m.opt_string("location")?,
                tee_provider: m.opt_string("tee-provider")?.or(m.opt_string("tee_provider")?),
            })
        })
        .collect::<Result<Vec<_>, SpecError>>()?;
    if monitors.is_empty() {
        return Err(monitors_cursor.invalid("at least one monitor is required"));
    }

    let e = v.require("evidence")?;
    let storage_type = match e.get("storage-type").or_else(|| e.get("storage_type")) {
        Some(s) => s.string()?,
        None => return Err(SpecError::Missing { path: format!("{}/storage-type", e.path) }),
    };
    let (network, registry_address) = match e.get("blockchain") {
        Some(b) => (b.opt_string("network")?, b.opt_string("contract")?),
        None => (None, None),
    };

    let engine = match v.get("aggregation-engine").or_else(|| v.get("aggregation_engine")) {
        Some(a) => a.string()?,
        None => return Err(SpecError::Missing { path: format!("{}/aggregation-engine", v.path) }),
    };
    if engine.is_empty() {
        return Err(SpecError::Invalid {
            path: format!("{}/aggregation-engine", v.path),
            reason: "empty engine tag".into(),
        });
    }

    Ok(Verification {
        monitors,
        evidence: EvidenceSpec {
            storage_type,
            network,
            registry_address,
        },
        aggregation_engine: engine,
    })
}

pub fn parse_spec(document: &[u8]) -> Result<VslaSpec, SpecError> {
    let value: Value = serde_yaml::from_slice(document).map_err(|e| SpecError::Syntax(e.to_string()))?;
    if !value.is_object() {
        return Err(SpecError::Invalid {
            path: "/".into(),
            reason: "document must be a mapping".into(),
        });
    }
    let root = Cursor::root(&value);
    let spec_section = root.get("spec");

    let verification_cursor = root
        .get("verification")
        .or_else(|| spec_section.as_ref().and_then(|s| s.get("verification")))
        .ok_or_else(|| SpecError::Missing {
            path: "/verification".into(),
        })?;
    let verification = parse_verification(&verification_cursor)?;

    let objectives = root
        .get("objectives")
        .or_else(|| spec_section.as_ref().and_then(|s| s.get("objectives")))
        .ok_or_else(|| SpecError::Missing {
            path: "/spec/objectives".into(),
        })?;
    let items = objectives.items()?;
    if items.is_empty() {
        return Err(objectives.invalid("at least one objective is required"));
    }
    let clauses = items
        .iter()
        .enumerate()
        .map(|(i, c)| parse_clause(c, i))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, c) in clauses.iter().enumerate() {
        if clauses[..i].iter().any(|prev| prev.id == c.id) {
            return Err(SpecError::Invalid {
                path: format!("{}/{}", objectives.path, i),
                reason: format!("duplicate objective id {:?}", c.id),
            });
        }
    }

    let signatures = match root.get("signatures") {
        None => None,
        Some(s) => {
            let sig = |key: &str| -> Result<Signature, SpecError> {
                let c = s.require(key)?;
                c.string()?.parse().map_err(|_| c.invalid("expected a hex signature"))
            };
            Some(PartySignatures {
                provider: sig("provider")?,
                consumer: sig("consumer")?,
            })
        }
    };

    let name = root
        .get("metadata")
        .and_then(|m| m.get("name"))
        .and_then(|n| n.value.as_str().map(str::to_string));

    Ok(VslaSpec {
        name,
        clauses,
        verification,
        spec_digest: spec_digest(&value),
        signatures,
        document: value,
    })
}

/// Compiled form of one SLO clause. Its JSON serialization is the reviewable
/// predicate artifact; `program_id` binds it to the engine tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledPredicate {
    pub program_id: Digest,
    pub engine_tag: String,
    pub clause: SloClause,
}

pub fn program_id(clause: &SloClause, engine_tag: &str) -> Digest {
    keccak256_parts(&[&clause.canonical_encoding(), engine_tag.as_bytes()])
}

pub fn compile_predicate(clause: &SloClause, engine_tag: &str) -> Result<CompiledPredicate, PredicateError> {
    clause.validate()?;
    Ok(CompiledPredicate {
        program_id: program_id(clause, engine_tag),
        engine_tag: engine_tag.to_string(),
        clause: clause.clone(),
    })
}

impl CompiledPredicate {
    /// Checks that a deserialized predicate's program id matches its clause.
    pub fn check(&self) -> Result<(), PredicateError> {
        self.clause.validate()?;
        if program_id(&self.clause, &self.engine_tag) != self.program_id {
            return Err(PredicateError::ProgramIdMismatch);
        }
        Ok(())
    }

    pub fn satisfied_count(&self, v: &MetricVector) -> u64 {
        v.latencies_ms()
            .iter()
            .zip(v.statuses())
            .filter(|(l, s)| self.clause.satisfied_by(**l, **s))
            .count() as u64
    }

    /// Positions of samples that fail the clause comparator.
    pub fn violating_indices(&self, v: &MetricVector) -> Vec<usize> {
        v.latencies_ms()
            .iter()
            .zip(v.statuses())
            .enumerate()
            .filter(|(_, (l, s))| !self.clause.satisfied_by(**l, **s))
            .map(|(i, _)| i)
            .collect()
    }
}

/// `ok` iff the satisfying fraction reaches the clause target.
pub fn evaluate_predicate(pred: &CompiledPredicate, v: &MetricVector) -> Result<bool, PredicateError> {
    if v.is_empty() {
        return Err(PredicateError::NoData);
    }
    Ok(pred.clause.target.met_by(pred.satisfied_count(v), v.len() as u64))
}
