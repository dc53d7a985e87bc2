//! Latency decomposition, aggregate statistics and report emitters.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::sim::{RequestTrace, TraceSet};
use crate::transport::{ResourceKind, Stage};
use crate::units::Nanos;
use crate::workload::Priority;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("request {client}/{request} has no recorded response")]
    Incomplete { client: u32, request: u32 },
    #[error("empty sample")]
    EmptySample,
    #[error("degenerate scenario: mean total time is zero")]
    Degenerate,
}

/// Waiting time per resource class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QueueWaits {
    pub link: Nanos,
    pub gateway: Nanos,
    pub stream: Nanos,
    pub copy: Nanos,
    pub exec: Nanos,
}

impl QueueWaits {
    pub fn total(&self) -> Nanos {
        self.link + self.gateway + self.stream + self.copy + self.exec
    }
}

/// Per-request decomposition. Stage times exclude waiting; waits are kept
/// per resource so that the identity below holds exactly:
/// `total = request + copy + preprocess + inference + response + waits`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LatencyBreakdown {
    pub client: u32,
    pub request: u32,
    pub priority: Priority,
    pub total_time: Nanos,
    pub request_time: Nanos,
    pub response_time: Nanos,
    pub copy_time: Nanos,
    pub preprocessing_time: Nanos,
    pub inference_time: Nanos,
    pub queue_wait: QueueWaits,
    pub cpu_usage: Nanos,
    /// Waits folded into the stage that follows them.
    pub folded: FoldedTimes,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FoldedTimes {
    pub request_time: Nanos,
    pub copy_time: Nanos,
    pub preprocessing_time: Nanos,
    pub inference_time: Nanos,
    pub response_time: Nanos,
}

impl LatencyBreakdown {
    pub fn processing_time(&self) -> Nanos {
        self.preprocessing_time + self.inference_time
    }

    /// Sum of the parts; equals `total_time` for every trace.
    pub fn parts_sum(&self) -> Nanos {
        self.request_time
            + self.copy_time
            + self.preprocessing_time
            + self.inference_time
            + self.response_time
            + self.queue_wait.total()
    }
}

pub fn breakdown(trace: &RequestTrace) -> Result<LatencyBreakdown, MetricsError> {
    let total = trace.total().ok_or(MetricsError::Incomplete {
        client: trace.client,
        request: trace.request,
    })?;
    let mut b = LatencyBreakdown {
        client: trace.client,
        request: trace.request,
        priority: trace.priority,
        total_time: total,
        cpu_usage: trace.cpu_ns,
        ..LatencyBreakdown::default()
    };
    for s in &trace.stages {
        let d = s.duration();
        let w = s.wait();
        let (slot, fslot) = match s.stage {
            Stage::RequestXfer | Stage::GatewayRequest => {
                (&mut b.request_time, &mut b.folded.request_time)
            }
            Stage::H2d | Stage::D2h => (&mut b.copy_time, &mut b.folded.copy_time),
            Stage::Preprocess => (&mut b.preprocessing_time, &mut b.folded.preprocessing_time),
            Stage::Inference => (&mut b.inference_time, &mut b.folded.inference_time),
            Stage::GatewayResponse | Stage::ResponseXfer => {
                (&mut b.response_time, &mut b.folded.response_time)
            }
        };
        *slot += d;
        *fslot += d + w;
        b.queue_wait.stream += s.stream_wait;
        let q = match s.resource {
            ResourceKind::Link { .. } => &mut b.queue_wait.link,
            ResourceKind::Gateway => &mut b.queue_wait.gateway,
            ResourceKind::CopyEngines => &mut b.queue_wait.copy,
            ResourceKind::ExecEngines => &mut b.queue_wait.exec,
        };
        *q += s.resource_wait;
    }
    debug_assert_eq!(b.parts_sum(), total);
    Ok(b)
}

/// Breakdowns of the requests that count towards aggregates.
pub fn breakdowns(traces: &TraceSet) -> Result<Vec<LatencyBreakdown>, MetricsError> {
    traces.measured().map(breakdown).collect()
}

/// Nearest-rank percentile, `p` in (0, 100].
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub cov: f64,
    pub min: f64,
    pub max: f64,
}

pub fn aggregate(values: &[f64]) -> Result<Summary, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let stddev = var.sqrt();
    let cov = if mean == 0.0 { 0.0 } else { stddev / mean };
    Ok(Summary {
        count: sorted.len(),
        mean,
        p50: nearest_rank(&sorted, 50.0),
        p95: nearest_rank(&sorted, 95.0),
        p99: nearest_rank(&sorted, 99.0),
        stddev,
        cov,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    })
}

pub const METRICS: [&str; 14] = [
    "total",
    "request",
    "copy",
    "preprocess",
    "inference",
    "response",
    "wait_link",
    "wait_gateway",
    "wait_stream",
    "wait_copy",
    "wait_exec",
    "processing",
    "cpu",
    "folded_copy",
];

fn metric(b: &LatencyBreakdown, name: &str) -> Nanos {
    match name {
        "total" => b.total_time,
        "request" => b.request_time,
        "copy" => b.copy_time,
        "preprocess" => b.preprocessing_time,
        "inference" => b.inference_time,
        "response" => b.response_time,
        "wait_link" => b.queue_wait.link,
        "wait_gateway" => b.queue_wait.gateway,
        "wait_stream" => b.queue_wait.stream,
        "wait_copy" => b.queue_wait.copy,
        "wait_exec" => b.queue_wait.exec,
        "processing" => b.processing_time(),
        "cpu" => b.cpu_usage,
        "folded_copy" => b.folded.copy_time,
        _ => unreachable!("unknown metric {name}"),
    }
}

/// Statistics of every metric, in nanoseconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub metrics: BTreeMap<String, Summary>,
    /// Mean of each stage under the separate, folded and residual views.
    pub means: StageMeans,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageMeans {
    pub total: f64,
    pub request: f64,
    pub copy: f64,
    pub preprocess: f64,
    pub inference: f64,
    pub response: f64,
    pub wait: f64,
    pub folded_request: f64,
    pub folded_copy: f64,
    pub folded_preprocess: f64,
    pub folded_inference: f64,
    pub folded_response: f64,
    /// Request time measured as total minus server span minus response.
    pub residual_request: f64,
}

impl ClassStats {
    pub fn mean(&self, metric: &str) -> f64 {
        self.metrics[metric].mean
    }

    pub fn get(&self, metric: &str) -> &Summary {
        &self.metrics[metric]
    }
}

fn class_stats(bs: &[&LatencyBreakdown]) -> Result<ClassStats, MetricsError> {
    if bs.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    let mut metrics = BTreeMap::new();
    for name in METRICS {
        let xs: Vec<f64> = bs.iter().map(|b| metric(b, name) as f64).collect();
        metrics.insert(name.to_string(), aggregate(&xs)?);
    }
    let n = bs.len() as f64;
    let mean = |f: &dyn Fn(&LatencyBreakdown) -> Nanos| -> f64 {
        bs.iter().map(|b| f(b) as f64).sum::<f64>() / n
    };
    let server_span = |b: &LatencyBreakdown| {
        b.folded.copy_time + b.folded.preprocessing_time + b.folded.inference_time
    };
    let means = StageMeans {
        total: mean(&|b| b.total_time),
        request: mean(&|b| b.request_time),
        copy: mean(&|b| b.copy_time),
        preprocess: mean(&|b| b.preprocessing_time),
        inference: mean(&|b| b.inference_time),
        response: mean(&|b| b.response_time),
        wait: mean(&|b| b.queue_wait.total()),
        folded_request: mean(&|b| b.folded.request_time),
        folded_copy: mean(&|b| b.folded.copy_time),
        folded_preprocess: mean(&|b| b.folded.preprocessing_time),
        folded_inference: mean(&|b| b.folded.inference_time),
        folded_response: mean(&|b| b.folded.response_time),
        residual_request: mean(&|b| b.total_time - server_span(b) - b.response_time),
    };
    Ok(ClassStats { metrics, means })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateStats {
    pub overall: ClassStats,
    pub high: Option<ClassStats>,
    pub normal: Option<ClassStats>,
    /// Per client id.
    pub per_client: BTreeMap<u32, ClassStats>,
}

pub fn aggregate_breakdowns(bs: &[LatencyBreakdown]) -> Result<AggregateStats, MetricsError> {
    let all: Vec<&LatencyBreakdown> = bs.iter().collect();
    let class = |p: Priority| -> Option<ClassStats> {
        let sel: Vec<&LatencyBreakdown> = bs.iter().filter(|b| b.priority == p).collect();
        class_stats(&sel).ok()
    };
    let mut per_client = BTreeMap::new();
    let mut ids: Vec<u32> = bs.iter().map(|b| b.client).collect();
    ids.sort_unstable();
    ids.dedup();
    for id in ids {
        let sel: Vec<&LatencyBreakdown> = bs.iter().filter(|b| b.client == id).collect();
        per_client.insert(id, class_stats(&sel)?);
    }
    Ok(AggregateStats {
        overall: class_stats(&all)?,
        high: class(Priority::High),
        normal: class(Priority::Normal),
        per_client,
    })
}

pub fn analyse(traces: &TraceSet) -> Result<AggregateStats, MetricsError> {
    aggregate_breakdowns(&breakdowns(traces)?)
}

/// How waits are attributed when reporting stage fractions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    /// Waits reported as their own row.
    #[default]
    Separate,
    /// Each wait added to the stage that follows it.
    Folded,
    /// Request time is whatever the server span and response do not cover.
    Residual,
}

impl std::str::FromStr for View {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "separate" => Ok(View::Separate),
            "folded" => Ok(View::Folded),
            "residual" => Ok(View::Residual),
            _ => Err(format!("unknown view `{s}` (separate|folded|residual)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionRow {
    pub stage: &'static str,
    pub mean_ns: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionReport {
    pub view: View,
    pub mean_total_ns: f64,
    pub rows: Vec<FractionRow>,
}

impl FractionReport {
    pub fn fraction(&self, stage: &str) -> f64 {
        self.rows
            .iter()
            .find(|r| r.stage == stage)
            .map_or(0.0, |r| r.fraction)
    }

    /// Request, copy and response together.
    pub fn data_movement(&self) -> f64 {
        self.fraction("request") + self.fraction("copy") + self.fraction("response")
    }
}

pub fn fraction_report(stats: &ClassStats, view: View) -> Result<FractionReport, MetricsError> {
    let m = &stats.means;
    if m.total <= 0.0 {
        return Err(MetricsError::Degenerate);
    }
    let rows: Vec<(&'static str, f64)> = match view {
        View::Separate => vec![
            ("request", m.request),
            ("copy", m.copy),
            ("preprocess", m.preprocess),
            ("inference", m.inference),
            ("response", m.response),
            ("queue_wait", m.wait),
        ],
        View::Folded => vec![
            ("request", m.folded_request),
            ("copy", m.folded_copy),
            ("preprocess", m.folded_preprocess),
            ("inference", m.folded_inference),
            ("response", m.folded_response),
        ],
        View::Residual => vec![
            ("request", m.residual_request),
            ("copy", m.folded_copy),
            ("preprocess", m.folded_preprocess),
            ("inference", m.folded_inference),
            ("response", m.response),
        ],
    };
    Ok(FractionReport {
        view,
        mean_total_ns: m.total,
        rows: rows
            .into_iter()
            .map(|(stage, mean_ns)| FractionRow {
                stage,
                mean_ns,
                fraction: mean_ns / m.total,
            })
            .collect(),
    })
}

fn ms(ns: f64) -> f64 {
    ns / 1e6
}

/// Human-readable summary written as `report.txt`.
pub fn text_report(traces: &TraceSet, stats: &AggregateStats, view: View) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario: {}", traces.scenario);
    let _ = writeln!(
        out,
        "measured requests: {} (warmup {} per client), events {}, makespan {:.3} ms",
        stats.overall.get("total").count,
        traces.warmup_requests,
        traces.stats.events,
        ms(traces.stats.makespan_ns as f64)
    );
    let mut class = |name: &str, c: &ClassStats| {
        let t = c.get("total");
        let _ = writeln!(out, "\n[{name}]");
        let _ = writeln!(
            out,
            "total ms: mean {:.4} p50 {:.4} p95 {:.4} p99 {:.4} cov {:.4}",
            ms(t.mean),
            ms(t.p50),
            ms(t.p95),
            ms(t.p99),
            t.cov
        );
        let p = c.get("processing");
        let _ = writeln!(
            out,
            "processing ms: mean {:.4} cov {:.4}; cpu per request {:.1} us",
            ms(p.mean),
            p.cov,
            c.mean("cpu") / 1e3
        );
        if let Ok(fr) = fraction_report(c, view) {
            let _ = writeln!(out, "{:<12} {:>10} {:>8}", "stage", "mean_ms", "share");
            for r in &fr.rows {
                let _ = writeln!(
                    out,
                    "{:<12} {:>10.4} {:>7.2}%",
                    r.stage,
                    ms(r.mean_ns),
                    r.fraction * 100.0
                );
            }
        }
    };
    class("all", &stats.overall);
    if let (Some(h), Some(_)) = (&stats.high, &stats.normal) {
        class("high priority", h);
    }
    out
}

pub fn breakdown_json(traces: &TraceSet, stats: &AggregateStats, view: View) -> String {
    let fractions = fraction_report(&stats.overall, view).ok();
    let doc = serde_json::json!({
        "schema_version": crate::sim::TRACE_SCHEMA_VERSION,
        "scenario": traces.scenario,
        "seed": traces.seed,
        "view": view,
        "stats": stats,
        "fractions": fractions,
        "run": traces.stats,
    });
    serde_json::to_string_pretty(&doc).expect("json")
}

pub const PLOT_CSV_HEADER: &str = "series,clients,total_mean_ms,total_p50_ms,total_p99_ms,total_cov,processing_cov,request_frac,copy_frac,preprocess_frac,inference_frac,response_frac,cpu_us,high_total_mean_ms";

/// One row of per-figure plot data: fractions use the folded view.
pub fn plot_row(series: &str, clients: usize, stats: &AggregateStats) -> String {
    let o = &stats.overall;
    let t = o.get("total");
    let fr = fraction_report(o, View::Folded).ok();
    let f = |s: &str| fr.as_ref().map_or(0.0, |r| r.fraction(s));
    let high = stats
        .high
        .as_ref()
        .map_or(String::new(), |h| format!("{:.6}", ms(h.mean("total"))));
    format!(
        "{series},{clients},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3},{high}",
        ms(t.mean),
        ms(t.p50),
        ms(t.p99),
        t.cov,
        o.get("processing").cov,
        f("request"),
        f("copy"),
        f("preprocess"),
        f("inference"),
        f("response"),
        o.mean("cpu") / 1e3,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run, Connection, Scenario, StageRecord};
    use crate::transport::Mechanism;
    use crate::workload::DataMode;

    #[test]
    fn aggregate_basics() {
        let s = aggregate(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.cov), (2.0, 0.0));
        let s = aggregate(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.stddev, s.cov), (2.0, 1.0, 0.5));
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = aggregate(&xs).unwrap();
        assert_eq!(s.p50, 50.0);
        assert_eq!(s.p99, 99.0);
        assert_eq!(aggregate(&[]), Err(MetricsError::EmptySample));
        assert_eq!(aggregate(&[0.0, 0.0]).unwrap().cov, 0.0);
    }

    #[test]
    fn local_breakdown_is_inference_only() {
        let trace = RequestTrace {
            client: 0,
            request: 0,
            priority: Priority::Normal,
            issue: 0,
            complete: Some(10_000_000),
            stages: vec![StageRecord {
                stage: Stage::Inference,
                resource: ResourceKind::ExecEngines,
                ready: 0,
                start: 0,
                end: 10_000_000,
                stream_wait: 0,
                resource_wait: 0,
            }],
            cpu_ns: 0,
            gateway_cpu_ns: 0,
        };
        let b = breakdown(&trace).unwrap();
        assert_eq!(b.total_time, 10_000_000);
        assert_eq!(b.inference_time, 10_000_000);
        assert_eq!(b.request_time + b.response_time + b.copy_time, 0);
        let stats = aggregate_breakdowns(&[b]).unwrap();
        let fr = fraction_report(&stats.overall, View::Separate).unwrap();
        assert_eq!(fr.fraction("inference"), 1.0);
    }

    #[test]
    fn incomplete_trace_errors() {
        let trace = RequestTrace {
            client: 1,
            request: 2,
            priority: Priority::Normal,
            issue: 0,
            complete: None,
            stages: vec![],
            cpu_ns: 0,
            gateway_cpu_ns: 0,
        };
        assert_eq!(
            breakdown(&trace),
            Err(MetricsError::Incomplete {
                client: 1,
                request: 2
            })
        );
    }

    #[test]
    fn fractions_sum_to_one_in_every_view() {
        let s = Scenario::new("ResNet50", DataMode::Raw, Connection::Direct(Mechanism::Tcp), 4)
            .with_requests(30);
        let t = run(&s).unwrap();
        let stats = analyse(&t).unwrap();
        for view in [View::Separate, View::Folded, View::Residual] {
            let fr = fraction_report(&stats.overall, view).unwrap();
            let sum: f64 = fr.rows.iter().map(|r| r.fraction).sum();
            assert!((sum - 1.0).abs() < 1e-9, "{view:?} sums to {sum}");
        }
        assert!(text_report(&t, &stats, View::Folded).contains("total ms"));
        let v: serde_json::Value =
            serde_json::from_str(&breakdown_json(&t, &stats, View::Separate)).unwrap();
        assert!(v["stats"]["overall"]["metrics"]["total"]["p99"].is_number());
        assert_eq!(
            plot_row("tcp", 4, &stats).split(',').count(),
            PLOT_CSV_HEADER.split(',').count()
        );
    }
}
