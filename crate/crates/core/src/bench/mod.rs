//! Closed-loop load generation and report building.
//!
//! The drivers here are system-agnostic: anything implementing
//! [`RequestSystem`] (the deterministic simulator or the live loopback
//! stack) can be driven by the same fixed-request-count and fixed-duration
//! workloads. Agents are closed-loop — each issues its next request only
//! after its previous one finished.

pub mod report;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::balancer::{ForwardMode, TrafficCounters};
use crate::model::BackendId;

/// How one request ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Completed,
    ResolveFailed,
    NoHealthyBackend,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        self == Outcome::Completed
    }
}

/// One finished (or failed) request as observed by the load generator.
/// Times are seconds from the start of the run (virtual or wall).
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRecord {
    pub agent: usize,
    pub request: u64,
    pub issue_time: f64,
    pub finish_time: f64,
    pub outcome: Outcome,
    pub backend: Option<BackendId>,
    pub via_vip: Option<String>,
    pub bytes: u64,
}

/// Counter snapshot of one balancer at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancerSnapshot {
    pub vip: String,
    pub algorithm: String,
    pub mode: ForwardMode,
    pub counters: TrafficCounters,
}

/// End-of-run accounting used by the invariant self-checks and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemStats {
    /// Bytes delivered to clients, accumulated on the transfer path.
    pub client_received_bytes: u64,
    /// Sum of page sizes reported by the balancers' completion accounting.
    pub completed_page_bytes: u64,
    pub balancers: Vec<BalancerSnapshot>,
}

/// A system under test. `issue` asks for one request on behalf of `agent`,
/// starting no earlier than `not_before`; every issued request eventually
/// yields exactly one record from `next_completion`. `finish` stops the
/// system, runs its invariant self-checks, and reports final counters.
pub trait RequestSystem {
    fn issue(&mut self, agent: usize, not_before: f64) -> Result<(), BenchError>;
    fn next_completion(&mut self) -> Option<CompletionRecord>;
    fn finish(&mut self) -> Result<SystemStats, BenchError>;
}

/// Fixed-request-count workload: `concurrency` agents start together and
/// every completion immediately issues the next request until `n_requests`
/// have been issued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbSpec {
    pub app_id: String,
    pub n_requests: u64,
    pub concurrency: u64,
    pub repeats: u32,
}

impl AbSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.concurrency < 1 || self.n_requests < self.concurrency || self.repeats < 1 {
            return Err(BenchError::InvalidSpec(
                "need n_requests >= concurrency >= 1 and repeats >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Fixed-duration workload: `agents` loop request -> completion ->
/// think_time -> next; requests still in flight at the cutoff are discarded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationSpec {
    pub app_id: String,
    pub agents: u64,
    pub duration_s: f64,
    pub ramp_up_s: f64,
    pub think_time_s: f64,
}

impl DurationSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.agents < 1 {
            return Err(BenchError::InvalidSpec("agents must be >= 1".to_string()));
        }
        if !self.duration_s.is_finite() || self.duration_s <= 0.0 {
            return Err(BenchError::InvalidSpec("duration must be > 0".to_string()));
        }
        if self.ramp_up_s < 0.0 || self.think_time_s < 0.0 {
            return Err(BenchError::InvalidSpec(
                "ramp_up and think_time must be >= 0".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    Ab,
    Duration,
}

/// Result of one run (or the mean over repeats). Fields that belong to the
/// other workload kind are zero: `resp_time_s` is meaningful for `ab` runs,
/// `total_requests`/`throughput_pages_per_min` for `duration` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub workload: WorkloadKind,
    /// Runs aggregated into this report (1 for a single run).
    pub repeats: u32,
    pub n_requests: u64,
    pub concurrency: u64,
    pub duration_s: f64,
    /// Last completion minus first issue (mean over repeats).
    pub total_time_s: f64,
    /// total_time_s / n_requests, the across-all-agents seconds per request.
    pub resp_time_s: f64,
    /// Mean of resp_time_s over repeats.
    pub avg_resp_time_s: f64,
    /// Completions inside the duration window (mean over repeats).
    pub total_requests: f64,
    /// floor(total_requests * 60 / duration_s).
    pub throughput_pages_per_min: u64,
    /// Issued / failed / cut-off request totals across all repeats.
    pub issued: u64,
    pub failures: u64,
    pub discarded_in_flight: u64,
    pub mean_latency_s: f64,
    pub p50_latency_s: f64,
    pub p95_latency_s: f64,
    pub p99_latency_s: f64,
    /// Successful completions per backend, summed across repeats.
    pub backend_hits: BTreeMap<BackendId, u64>,
}

/// A run's report together with the system's final counters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: RunReport,
    pub stats: SystemStats,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

struct Tally {
    last_finish: f64,
    completed: u64,
    failures: u64,
    latencies: Vec<f64>,
    hits: BTreeMap<BackendId, u64>,
}

impl Tally {
    fn new() -> Self {
        Tally {
            last_finish: 0.0,
            completed: 0,
            failures: 0,
            latencies: Vec::new(),
            hits: BTreeMap::new(),
        }
    }

    fn count(&mut self, rec: &CompletionRecord) {
        self.last_finish = self.last_finish.max(rec.finish_time);
        if rec.outcome.is_success() {
            self.completed += 1;
            self.latencies.push(rec.finish_time - rec.issue_time);
            if let Some(b) = rec.backend {
                *self.hits.entry(b).or_insert(0) += 1;
            }
        } else {
            self.failures += 1;
        }
    }

    fn latency_summary(&mut self) -> (f64, f64, f64, f64) {
        if self.latencies.is_empty() {
            return (0.0, 0.0, 0.0, 0.0);
        }
        self.latencies
            .sort_by(|a, b| a.partial_cmp(b).expect("finite latencies"));
        let mean = self.latencies.iter().sum::<f64>() / self.latencies.len() as f64;
        (
            mean,
            percentile(&self.latencies, 0.50),
            percentile(&self.latencies, 0.95),
            percentile(&self.latencies, 0.99),
        )
    }
}

/// Run the fixed-request-count workload against `system`.
pub fn run_ab(spec: &AbSpec, system: &mut dyn RequestSystem) -> Result<RunOutput, BenchError> {
    spec.validate()?;
    let mut tally = Tally::new();
    let mut issued = 0u64;
    for agent in 0..spec.concurrency {
        system.issue(agent as usize, 0.0)?;
        issued += 1;
    }
    let mut received = 0u64;
    while received < spec.n_requests {
        let rec = system.next_completion().ok_or(BenchError::Stalled)?;
        received += 1;
        tally.count(&rec);
        if issued < spec.n_requests {
            system.issue(rec.agent, rec.finish_time)?;
            issued += 1;
        }
        let in_flight = issued - received;
        if in_flight > spec.concurrency {
            return Err(BenchError::SelfCheck(format!(
                "closed-loop bound violated: {in_flight} in flight > concurrency {}",
                spec.concurrency
            )));
        }
    }
    if tally.completed == 0 {
        return Err(BenchError::SystemUnavailable);
    }
    let stats = system.finish()?;

    let total_time = tally.last_finish;
    let (mean, p50, p95, p99) = tally.latency_summary();
    Ok(RunOutput {
        report: RunReport {
            workload: WorkloadKind::Ab,
            repeats: 1,
            n_requests: spec.n_requests,
            concurrency: spec.concurrency,
            duration_s: 0.0,
            total_time_s: total_time,
            resp_time_s: total_time / spec.n_requests as f64,
            avg_resp_time_s: total_time / spec.n_requests as f64,
            total_requests: 0.0,
            throughput_pages_per_min: 0,
            issued,
            failures: tally.failures,
            discarded_in_flight: 0,
            mean_latency_s: mean,
            p50_latency_s: p50,
            p95_latency_s: p95,
            p99_latency_s: p99,
            backend_hits: tally.hits,
        },
        stats,
    })
}

/// Run the fixed-duration workload against `system`. Completions at or
/// before the cutoff count; later ones were in flight at the cutoff and are
/// discarded.
pub fn run_duration(
    spec: &DurationSpec,
    system: &mut dyn RequestSystem,
) -> Result<RunOutput, BenchError> {
    spec.validate()?;
    let mut tally = Tally::new();
    let mut issued = 0u64;
    let mut discarded = 0u64;
    for agent in 0..spec.agents {
        let start = if spec.agents > 1 {
            spec.ramp_up_s * agent as f64 / spec.agents as f64
        } else {
            0.0
        };
        if start < spec.duration_s {
            system.issue(agent as usize, start)?;
            issued += 1;
        }
    }
    let mut received = 0u64;
    while received < issued {
        let rec = system.next_completion().ok_or(BenchError::Stalled)?;
        received += 1;
        if rec.finish_time <= spec.duration_s {
            tally.count(&rec);
            let next_issue = rec.finish_time + spec.think_time_s;
            if next_issue < spec.duration_s {
                system.issue(rec.agent, next_issue)?;
                issued += 1;
            }
        } else {
            discarded += 1;
        }
    }
    if issued != tally.completed + tally.failures + discarded {
        return Err(BenchError::SelfCheck(format!(
            "duration accounting broken: issued {issued} != completed {} + failed {} + discarded {discarded}",
            tally.completed, tally.failures
        )));
    }
    if tally.completed == 0 {
        return Err(BenchError::SystemUnavailable);
    }
    let stats = system.finish()?;

    let (mean, p50, p95, p99) = tally.latency_summary();
    let total_requests = tally.completed as f64;
    Ok(RunOutput {
        report: RunReport {
            workload: WorkloadKind::Duration,
            repeats: 1,
            n_requests: 0,
            concurrency: spec.agents,
            duration_s: spec.duration_s,
            total_time_s: tally.last_finish,
            resp_time_s: 0.0,
            avg_resp_time_s: 0.0,
            total_requests,
            throughput_pages_per_min: pages_per_minute(total_requests, spec.duration_s),
            issued,
            failures: tally.failures,
            discarded_in_flight: discarded,
            mean_latency_s: mean,
            p50_latency_s: p50,
            p95_latency_s: p95,
            p99_latency_s: p99,
            backend_hits: tally.hits,
        },
        stats,
    })
}

/// The throughput formula used everywhere: floor(requests per minute).
pub fn pages_per_minute(total_requests: f64, duration_s: f64) -> u64 {
    (total_requests * 60.0 / duration_s).floor() as u64
}

/// Mean the per-run timings of identically-specced runs; counters and
/// per-backend hits are summed.
pub fn aggregate_repeats(reports: &[RunReport]) -> Result<RunReport, BenchError> {
    let first = reports.first().ok_or(BenchError::MixedSpecs)?;
    if reports.iter().any(|r| {
        r.workload != first.workload
            || r.n_requests != first.n_requests
            || r.concurrency != first.concurrency
            || r.duration_s != first.duration_s
    }) {
        return Err(BenchError::MixedSpecs);
    }
    let n = reports.len() as f64;
    // Identical runs (the deterministic-simulator case) aggregate to
    // themselves exactly, without summation rounding.
    let mean = |f: fn(&RunReport) -> f64| {
        let first_value = f(&reports[0]);
        if reports.iter().all(|r| f(r) == first_value) {
            first_value
        } else {
            reports.iter().map(f).sum::<f64>() / n
        }
    };
    let total_requests = mean(|r| r.total_requests);
    let throughput = if first.workload == WorkloadKind::Duration {
        pages_per_minute(total_requests, first.duration_s)
    } else {
        0
    };
    let mut hits = BTreeMap::new();
    for r in reports {
        for (&b, &c) in &r.backend_hits {
            *hits.entry(b).or_insert(0) += c;
        }
    }
    Ok(RunReport {
        workload: first.workload,
        repeats: reports.iter().map(|r| r.repeats).sum(),
        n_requests: first.n_requests,
        concurrency: first.concurrency,
        duration_s: first.duration_s,
        total_time_s: mean(|r| r.total_time_s),
        resp_time_s: mean(|r| r.resp_time_s),
        avg_resp_time_s: mean(|r| r.resp_time_s),
        total_requests,
        throughput_pages_per_min: throughput,
        issued: reports.iter().map(|r| r.issued).sum(),
        failures: reports.iter().map(|r| r.failures).sum(),
        discarded_in_flight: reports.iter().map(|r| r.discarded_in_flight).sum(),
        mean_latency_s: mean(|r| r.mean_latency_s),
        p50_latency_s: mean(|r| r.p50_latency_s),
        p95_latency_s: mean(|r| r.p95_latency_s),
        p99_latency_s: mean(|r| r.p99_latency_s),
        backend_hits: hits,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum BenchError {
    /// Zero requests completed.
    SystemUnavailable,
    /// aggregate_repeats over reports with different specs.
    MixedSpecs,
    /// The system stopped producing completions with requests outstanding.
    Stalled,
    InvalidSpec(String),
    SelfCheck(String),
    System(String),
}

impl fmt::Display for BenchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchError::SystemUnavailable => write!(f, "no request completed"),
            BenchError::MixedSpecs => write!(f, "cannot aggregate reports with different specs"),
            BenchError::Stalled => write!(f, "system stalled with requests outstanding"),
            BenchError::InvalidSpec(msg) => write!(f, "invalid workload spec: {msg}"),
            BenchError::SelfCheck(msg) => write!(f, "self-check failed: {msg}"),
            BenchError::System(msg) => write!(f, "system error: {msg}"),
        }
    }
}

impl std::error::Error for BenchError {}
