//! Run summaries and baseline-vs-treatment comparison.
//!
//! Latency means cover completed LLM responses only (arrival to last byte at
//! the UE). Stability counts every started response stream, aborted or not.
//! Utilization is payload-carrying PRBs over all PRBs in the horizon and
//! includes background traffic.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::engine::SimTime;
use crate::mac::{ModeKind, TtiAllocation};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no LLM request started; the summary is undefined")]
    EmptyRun,
    #[error("baseline {0} is not positive; improvement undefined")]
    DivisionByZeroMetric(&'static str),
    #[error("cannot average an empty set of summaries")]
    NoSummaries,
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub request_id: u64,
    pub slice_id: String,
    pub t_arrival: SimTime,
    pub t_first_byte: Option<SimTime>,
    pub t_complete: Option<SimTime>,
    pub total_bytes: u64,
    pub aborted: bool,
}

impl DeliveryRecord {
    pub fn completion_latency_ms(&self) -> Option<f64> {
        self.t_complete.map(|t| t.since(self.t_arrival) as f64 / 1_000.0)
    }

    pub fn first_byte_latency_ms(&self) -> Option<f64> {
        self.t_first_byte.map(|t| t.since(self.t_arrival) as f64 / 1_000.0)
    }
}

/// PRB usage accumulated over a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationLog {
    pub n_prb: u32,
    pub tti_us: u64,
    pub ttis: u64,
    pub granted_prbs: u64,
    pub used_prbs: u64,
    pub used_by_slice: BTreeMap<String, u64>,
}

impl AllocationLog {
    pub fn new(n_prb: u32, tti_us: u64) -> Self {
        Self {
            n_prb,
            tti_us,
            ..Default::default()
        }
    }

    pub fn record(&mut self, alloc: &TtiAllocation) {
        self.ttis += 1;
        self.granted_prbs += alloc.total_granted() as u64;
        for (slice, used) in &alloc.per_slice_used {
            self.used_prbs += *used as u64;
            *self.used_by_slice.entry(slice.clone()).or_insert(0) += *used as u64;
        }
    }

    /// Total PRBs offered by the grid over `[0, horizon)`.
    pub fn capacity_prbs(&self, horizon: SimTime) -> u64 {
        horizon.as_us().div_ceil(self.tti_us.max(1)) * self.n_prb as u64
    }
}

/// Request counts that are not visible in delivery records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfferedLoad {
    /// Requests issued by UEs before the horizon.
    pub requests: u64,
    /// Requests refused because the UE was not authorized for the service.
    pub rejected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSummary {
    pub mean_completion_latency_ms: Option<f64>,
    pub mean_first_byte_latency_ms: Option<f64>,
    pub utilization: f64,
    pub stability: f64,
    pub started: u64,
    pub completed: u64,
    pub aborted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: ModeKind,
    /// Number of runs merged into this summary.
    pub runs: u64,
    pub mean_completion_latency_ms: Option<f64>,
    pub mean_first_byte_latency_ms: Option<f64>,
    pub utilization: f64,
    pub stability: f64,
    pub requests: u64,
    pub started: u64,
    pub completed: u64,
    pub aborted: u64,
    pub rejected: u64,
    pub in_flight: u64,
    pub per_slice: BTreeMap<String, SliceSummary>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0u64), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn stability(started: u64, aborted: u64) -> f64 {
    if started == 0 {
        1.0
    } else {
        1.0 - aborted as f64 / started as f64
    }
}

/// Reduces one run to its headline metrics. With `allow_empty`, a run in which
/// no stream started yields a summary with undefined latencies instead of
/// [`MetricsError::EmptyRun`].
pub fn summarize(
    records: &[DeliveryRecord],
    log: &AllocationLog,
    horizon: SimTime,
    mode: ModeKind,
    offered: OfferedLoad,
    allow_empty: bool,
) -> Result<RunSummary, MetricsError> {
    if records.is_empty() && !allow_empty {
        return Err(MetricsError::EmptyRun);
    }
    let capacity = log.capacity_prbs(horizon);
    let utilization = if capacity == 0 {
        0.0
    } else {
        log.used_prbs as f64 / capacity as f64
    };

    let mut by_slice: BTreeMap<&str, Vec<&DeliveryRecord>> = BTreeMap::new();
    for r in records {
        by_slice.entry(r.slice_id.as_str()).or_default().push(r);
    }
    let mut per_slice: BTreeMap<String, SliceSummary> = BTreeMap::new();
    for (slice, used) in &log.used_by_slice {
        per_slice.insert(
            slice.clone(),
            SliceSummary {
                mean_completion_latency_ms: None,
                mean_first_byte_latency_ms: None,
                utilization: if capacity == 0 { 0.0 } else { *used as f64 / capacity as f64 },
                stability: 1.0,
                started: 0,
                completed: 0,
                aborted: 0,
            },
        );
    }
    for (slice, recs) in by_slice {
        let started = recs.len() as u64;
        let completed = recs.iter().filter(|r| r.t_complete.is_some()).count() as u64;
        let aborted = recs.iter().filter(|r| r.aborted).count() as u64;
        let entry = per_slice.entry(slice.to_string()).or_insert(SliceSummary {
            mean_completion_latency_ms: None,
            mean_first_byte_latency_ms: None,
            utilization: 0.0,
            stability: 1.0,
            started: 0,
            completed: 0,
            aborted: 0,
        });
        entry.mean_completion_latency_ms = mean(recs.iter().filter_map(|r| r.completion_latency_ms()));
        entry.mean_first_byte_latency_ms = mean(recs.iter().filter_map(|r| r.first_byte_latency_ms()));
        entry.stability = stability(started, aborted);
        entry.started = started;
        entry.completed = completed;
        entry.aborted = aborted;
    }

    let started = records.len() as u64;
    let completed = records.iter().filter(|r| r.t_complete.is_some()).count() as u64;
    let aborted = records.iter().filter(|r| r.aborted).count() as u64;
    Ok(RunSummary {
        mode,
        runs: 1,
        mean_completion_latency_ms: mean(records.iter().filter_map(|r| r.completion_latency_ms())),
        mean_first_byte_latency_ms: mean(records.iter().filter_map(|r| r.first_byte_latency_ms())),
        utilization,
        stability: stability(started, aborted),
        requests: offered.requests,
        started,
        completed,
        aborted,
        rejected: offered.rejected,
        in_flight: started - completed - aborted,
        per_slice,
    })
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    mean(values.flatten())
}

impl RunSummary {
    /// Arithmetic mean of per-run metrics (each run weighs the same); counts
    /// are summed.
    pub fn mean_of(summaries: &[RunSummary]) -> Result<RunSummary, MetricsError> {
        let first = summaries.first().ok_or(MetricsError::NoSummaries)?;
        if summaries.len() == 1 {
            return Ok(first.clone());
        }
        let n = summaries.len() as f64;
        let sum = |f: fn(&RunSummary) -> u64| summaries.iter().map(f).sum::<u64>();
        let mut slices: Vec<&String> = summaries.iter().flat_map(|s| s.per_slice.keys()).collect();
        slices.sort();
        slices.dedup();
        let per_slice = slices
            .into_iter()
            .map(|id| {
                let parts: Vec<&SliceSummary> =
                    summaries.iter().filter_map(|s| s.per_slice.get(id)).collect();
                let k = parts.len() as f64;
                let merged = SliceSummary {
                    mean_completion_latency_ms: mean_opt(parts.iter().map(|p| p.mean_completion_latency_ms)),
                    mean_first_byte_latency_ms: mean_opt(parts.iter().map(|p| p.mean_first_byte_latency_ms)),
                    utilization: parts.iter().map(|p| p.utilization).sum::<f64>() / k,
                    stability: parts.iter().map(|p| p.stability).sum::<f64>() / k,
                    started: parts.iter().map(|p| p.started).sum(),
                    completed: parts.iter().map(|p| p.completed).sum(),
                    aborted: parts.iter().map(|p| p.aborted).sum(),
                };
                (id.clone(), merged)
            })
            .collect();
        Ok(RunSummary {
            mode: first.mode,
            runs: sum(|s| s.runs),
            mean_completion_latency_ms: mean_opt(summaries.iter().map(|s| s.mean_completion_latency_ms)),
            mean_first_byte_latency_ms: mean_opt(summaries.iter().map(|s| s.mean_first_byte_latency_ms)),
            utilization: summaries.iter().map(|s| s.utilization).sum::<f64>() / n,
            stability: summaries.iter().map(|s| s.stability).sum::<f64>() / n,
            requests: sum(|s| s.requests),
            started: sum(|s| s.started),
            completed: sum(|s| s.completed),
            aborted: sum(|s| s.aborted),
            rejected: sum(|s| s.rejected),
            in_flight: sum(|s| s.in_flight),
            per_slice,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline: RunSummary,
    pub treatment: RunSummary,
    /// `(base - treat) / base`
    pub latency_improvement: f64,
    /// `(treat - base) / base`
    pub utilization_improvement: f64,
    /// `(treat - base) / base`
    pub stability_improvement: f64,
}

/// Rounds a fraction to a percentage with one decimal.
pub fn percent_1dp(fraction: f64) -> f64 {
    (fraction * 1_000.0).round() / 10.0
}

impl ComparisonReport {
    pub fn latency_improvement_pct(&self) -> f64 {
        percent_1dp(self.latency_improvement)
    }

    pub fn utilization_improvement_pct(&self) -> f64 {
        percent_1dp(self.utilization_improvement)
    }

    pub fn stability_improvement_pct(&self) -> f64 {
        percent_1dp(self.stability_improvement)
    }
}

pub fn compare(baseline: &RunSummary, treatment: &RunSummary) -> Result<ComparisonReport, MetricsError> {
    let base_latency = baseline
        .mean_completion_latency_ms
        .filter(|v| *v > 0.0)
        .ok_or(MetricsError::DivisionByZeroMetric("latency"))?;
    let treat_latency = treatment
        .mean_completion_latency_ms
        .ok_or(MetricsError::DivisionByZeroMetric("latency"))?;
    if baseline.utilization <= 0.0 {
        return Err(MetricsError::DivisionByZeroMetric("utilization"));
    }
    if baseline.stability <= 0.0 {
        return Err(MetricsError::DivisionByZeroMetric("stability"));
    }
    Ok(ComparisonReport {
        baseline: baseline.clone(),
        treatment: treatment.clone(),
        latency_improvement: (base_latency - treat_latency) / base_latency,
        utilization_improvement: (treatment.utilization - baseline.utilization) / baseline.utilization,
        stability_improvement: (treatment.stability - baseline.stability) / baseline.stability,
    })
}

/// Fixed-width rendering with the three metric rows.
pub fn render_table(report: &ComparisonReport) -> String {
    let latency = |s: &RunSummary| match s.mean_completion_latency_ms {
        Some(v) => format!("{v:.1} ms"),
        None => "n/a".to_string(),
    };
    let pct = |v: f64| format!("{:.1}%", v * 100.0);
    let rows = [
        (
            "Avg. Latency",
            latency(&report.baseline),
            latency(&report.treatment),
            report.latency_improvement_pct(),
        ),
        (
            "Resource Utilization",
            pct(report.baseline.utilization),
            pct(report.treatment.utilization),
            report.utilization_improvement_pct(),
        ),
        (
            "Downlink Stability",
            pct(report.baseline.stability),
            pct(report.treatment.stability),
            report.stability_improvement_pct(),
        ),
    ];
    let mut out = String::new();
    let _ = writeln!(out, "{:<22}{:>12}{:>12}{:>10}", "Metric", "Baseline", "LLM-Slice", "Improv.");
    for (name, base, treat, imp) in rows {
        let _ = writeln!(out, "{name:<22}{base:>12}{treat:>12}{:>10}", format!("{imp:.1}%"));
    }
    out
}

fn flatten_into(prefix: &str, value: Value, out: &mut Map<String, Value>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                flatten_into(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other);
        }
    }
}

/// Flattens nested objects into dotted keys (`per_slice.llama.stability`).
pub fn flat_json<T: Serialize>(value: &T) -> Value {
    let mut out = Map::new();
    flatten_into("", serde_json::to_value(value).expect("serializable"), &mut out);
    Value::Object(out)
}

pub fn summary_json(summary: &RunSummary) -> String {
    let mut s = serde_json::to_string_pretty(&flat_json(summary)).expect("serializable");
    s.push('\n');
    s
}

pub fn comparison_json(report: &ComparisonReport) -> String {
    let mut doc = match flat_json(report) {
        Value::Object(m) => m,
        _ => unreachable!(),
    };
    doc.insert("latency_improvement_pct".into(), report.latency_improvement_pct().into());
    doc.insert("utilization_improvement_pct".into(), report.utilization_improvement_pct().into());
    doc.insert("stability_improvement_pct".into(), report.stability_improvement_pct().into());
    let mut s = serde_json::to_string_pretty(&Value::Object(doc)).expect("serializable");
    s.push('\n');
    s
}

pub const DELIVERIES_HEADER: &str =
    "request_id,slice_id,t_arrival_us,t_first_byte_us,t_complete_us,total_bytes,aborted";

pub fn deliveries_csv(records: &[DeliveryRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(DELIVERIES_HEADER);
    out.push('\n');
    let opt = |t: Option<SimTime>| t.map(|t| t.as_us().to_string()).unwrap_or_default();
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.request_id,
            r.slice_id,
            r.t_arrival.as_us(),
            opt(r.t_first_byte),
            opt(r.t_complete),
            r.total_bytes,
            r.aborted
        );
    }
    out
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, MetricsError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| MetricsError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<(), MetricsError> {
    fs::create_dir_all(dir).map_err(|source| MetricsError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Writes `summary.json` and `deliveries.csv`.
pub fn write_run_outputs(
    summary: &RunSummary,
    records: &[DeliveryRecord],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, MetricsError> {
    ensure_dir(out_dir)?;
    Ok(vec![
        write_file(out_dir, "summary.json", &summary_json(summary))?,
        write_file(out_dir, "deliveries.csv", &deliveries_csv(records))?,
    ])
}

/// Writes `comparison.json` and the rendered `table.txt`.
pub fn write_comparison_outputs(report: &ComparisonReport, out_dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
    ensure_dir(out_dir)?;
    Ok(vec![
        write_file(out_dir, "comparison.json", &comparison_json(report))?,
        write_file(out_dir, "table.txt", &render_table(report))?,
    ])
}
