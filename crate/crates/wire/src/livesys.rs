//! The live deployment as a benchable system: real worker threads, one per
//! agent, each running its own resolve -> GET -> read loop over loopback
//! sockets. Implements the same `RequestSystem` contract the simulator does,
//! so the closed-loop drivers are shared.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use gslb_core::bench::{
    BalancerSnapshot, BenchError, CompletionRecord, Outcome, RequestSystem, SystemStats,
};

use crate::client::{backend_token, http_get, live_resolve_with_failover};
use crate::proxy::SharedApp;
use crate::stack::control_command;

/// Where end-of-run counters come from: directly from an in-process stack,
/// or over the control port of a separate `live up` process.
pub enum StatsSource {
    InProcess(Vec<SharedApp>),
    Control(String),
}

pub struct LiveBenchConfig {
    pub master: String,
    pub slave: String,
    pub app_id: String,
    pub agents: usize,
    pub resolve_timeout: Duration,
    pub request_timeout: Duration,
    pub per_agent_cache: bool,
    pub stats: StatsSource,
}

enum Cmd {
    IssueAt(f64),
    Stop,
}

pub struct LiveSystem {
    start: Instant,
    workers: Vec<(Sender<Cmd>, Option<JoinHandle<()>>)>,
    completions: Receiver<CompletionRecord>,
    stall_timeout: Duration,
    client_received_bytes: u64,
    stats: StatsSource,
}

impl LiveSystem {
    pub fn new(config: LiveBenchConfig) -> LiveSystem {
        let start = Instant::now();
        let (done_tx, done_rx) = channel();
        let request_ids = Arc::new(AtomicU64::new(0));
        let shared = Arc::new((
            config.master.clone(),
            config.slave.clone(),
            config.app_id.clone(),
            config.resolve_timeout,
            config.request_timeout,
            config.per_agent_cache,
        ));
        let workers = (0..config.agents)
            .map(|agent| {
                let (tx, rx) = channel::<Cmd>();
                let done = done_tx.clone();
                let ids = Arc::clone(&request_ids);
                let shared = Arc::clone(&shared);
                let handle = thread::Builder::new()
                    .name(format!("agent-{agent}"))
                    .spawn(move || worker_loop(agent, start, rx, done, ids, shared))
                    .expect("spawn agent");
                (tx, Some(handle))
            })
            .collect();
        LiveSystem {
            start,
            workers,
            completions: done_rx,
            stall_timeout: config.request_timeout + Duration::from_secs(20),
            client_received_bytes: 0,
            stats: config.stats,
        }
    }
}

fn worker_loop(
    agent: usize,
    start: Instant,
    rx: Receiver<Cmd>,
    done: Sender<CompletionRecord>,
    ids: Arc<AtomicU64>,
    shared: Arc<(String, String, String, Duration, Duration, bool)>,
) {
    let (master, slave, app_id, resolve_timeout, request_timeout, cache_enabled) = (
        &shared.0, &shared.1, &shared.2, shared.3, shared.4, shared.5,
    );
    let mut cached_vip: Option<String> = None;
    while let Ok(cmd) = rx.recv() {
        let not_before = match cmd {
            Cmd::Stop => break,
            Cmd::IssueAt(t) => t,
        };
        let target = start + Duration::from_secs_f64(not_before.max(0.0));
        let wait = target.saturating_duration_since(Instant::now());
        if !wait.is_zero() {
            thread::sleep(wait);
        }
        let request = ids.fetch_add(1, Ordering::SeqCst);
        let issue_time = start.elapsed().as_secs_f64();

        let vip = match cached_vip.clone() {
            Some(vip) => Ok(vip),
            None => live_resolve_with_failover(master, slave, app_id, resolve_timeout).inspect(|vip| {
                if cache_enabled {
                    cached_vip = Some(vip.clone());
                }
            }),
        };
        let record = match vip {
            Err(_) => CompletionRecord {
                agent,
                request,
                issue_time,
                finish_time: start.elapsed().as_secs_f64(),
                outcome: Outcome::ResolveFailed,
                backend: None,
                via_vip: None,
                bytes: 0,
            },
            Ok(vip) => match http_get(&vip, "/", request_timeout) {
                Ok(resp) if resp.status == 200 => CompletionRecord {
                    agent,
                    request,
                    issue_time,
                    finish_time: start.elapsed().as_secs_f64(),
                    outcome: Outcome::Completed,
                    backend: backend_token(&resp.body),
                    via_vip: Some(vip),
                    bytes: resp.body.len() as u64,
                },
                _ => {
                    // A failed fetch may mean the cached balancer died.
                    cached_vip = None;
                    CompletionRecord {
                        agent,
                        request,
                        issue_time,
                        finish_time: start.elapsed().as_secs_f64(),
                        outcome: Outcome::NoHealthyBackend,
                        backend: None,
                        via_vip: Some(vip),
                        bytes: 0,
                    }
                }
            },
        };
        if done.send(record).is_err() {
            break;
        }
    }
}

impl RequestSystem for LiveSystem {
    fn issue(&mut self, agent: usize, not_before: f64) -> Result<(), BenchError> {
        let worker = self
            .workers
            .get(agent)
            .ok_or_else(|| BenchError::System(format!("agent {agent} does not exist")))?;
        worker
            .0
            .send(Cmd::IssueAt(not_before))
            .map_err(|_| BenchError::System(format!("agent {agent} is gone")))
    }

    fn next_completion(&mut self) -> Option<CompletionRecord> {
        let record = self.completions.recv_timeout(self.stall_timeout).ok()?;
        self.client_received_bytes += record.bytes;
        Some(record)
    }

    fn finish(&mut self) -> Result<SystemStats, BenchError> {
        for (tx, _) in &self.workers {
            let _ = tx.send(Cmd::Stop);
        }
        for (_, handle) in &mut self.workers {
            if let Some(handle) = handle.take() {
                let _ = handle.join();
            }
        }
        let _ = self.start; // run epoch kept for symmetry with the simulator
        let (balancers, exact_bytes) = match &self.stats {
            StatsSource::InProcess(apps) => {
                let mut snapshots = Vec::new();
                for app in apps {
                    let shared = app.lock().expect("app lock");
                    for b in &shared.balancers {
                        if b.outstanding_len() != 0 {
                            return Err(BenchError::SelfCheck(format!(
                                "balancer {}: {} assignments still open after drain",
                                b.vip,
                                b.outstanding_len()
                            )));
                        }
                        snapshots.push(BalancerSnapshot {
                            vip: b.vip.clone(),
                            algorithm: b.kind.label().to_string(),
                            mode: b.mode,
                            counters: b.counters().clone(),
                        });
                    }
                }
                (snapshots, true)
            }
            StatsSource::Control(addr) => {
                let reply = control_command(addr, "STATS", Duration::from_secs(2))
                    .map_err(|e| BenchError::System(format!("control stats: {e}")))?;
                let snapshots: Vec<BalancerSnapshot> = serde_json::from_str(&reply)
                    .map_err(|e| BenchError::System(format!("control stats parse: {e}")))?;
                // Counters over the control port are cumulative across
                // benches, so the per-run byte equality cannot be checked.
                (snapshots, false)
            }
        };
        for b in &balancers {
            if b.counters.requests_in
                != b.counters.requests_dispatched + b.counters.requests_rejected
            {
                return Err(BenchError::SelfCheck(format!(
                    "balancer {}: requests_in != dispatched + rejected after drain ({:?})",
                    b.vip, b.counters
                )));
            }
        }
        let completed_page_bytes: u64 = balancers.iter().map(|b| b.counters.bytes_response_out).sum();
        if exact_bytes && completed_page_bytes != self.client_received_bytes {
            return Err(BenchError::SelfCheck(format!(
                "proxy byte accounting: clients saw {} bytes, proxies relayed {}",
                self.client_received_bytes, completed_page_bytes
            )));
        }
        Ok(SystemStats {
            client_received_bytes: self.client_received_bytes,
            completed_page_bytes,
            balancers,
        })
    }
}

impl Drop for LiveSystem {
    fn drop(&mut self) {
        for (tx, _) in &self.workers {
            let _ = tx.send(Cmd::Stop);
        }
        for (_, handle) in &mut self.workers {
            if let Some(handle) = handle.take() {
                let _ = handle.join();
            }
        }
    }
}
