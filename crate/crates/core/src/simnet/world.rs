//! The simulated two-level deployment: selector pair, balancers with an
//! admission queue each, backend links under processor sharing, and the
//! full request path from client resolution to direct-routed response.
//!
//! One `SimWorld` is one experiment run. It implements
//! [`RequestSystem`](crate::bench::RequestSystem), so the same closed-loop
//! drivers that run the live stack drive it. Everything is single-threaded
//! and deterministic: identical config and seed replay identically.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::balancer::{BalancerNode, DispatchError, ForwardMode, HealthProbeConfig};
use crate::bench::{
    BalancerSnapshot, BenchError, CompletionRecord, Outcome, RequestSystem, SystemStats,
};
use crate::model::{Backend, BackendId, ClusterSpec, Health, SchedulerKind};
use crate::selector::{SelectorDeployment, SelectorError};
use crate::simnet::link::{ServerLink, TransferEvent};
use crate::simnet::queue::{EventKind, EventQueue, SimError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latencies {
    pub client_selector_s: f64,
    pub client_balancer_s: f64,
    pub balancer_backend_s: f64,
}

impl Default for Latencies {
    fn default() -> Self {
        Latencies {
            client_selector_s: 0.0,
            client_balancer_s: 0.0,
            balancer_backend_s: 0.0,
        }
    }
}

/// Whether an agent re-resolves on every request (the default, so
/// consecutive requests can land on different balancers) or keeps its
/// first answer for the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolveCache {
    PerRequest,
    PerAgent,
}

#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub id: BackendId,
    pub weight: u32,
    pub capacity_bytes_per_s: u64,
    pub page_size_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct BalancerConfig {
    pub vip: String,
    pub algorithm: SchedulerKind,
    pub forward_capacity_rps: f64,
}

#[derive(Debug, Clone)]
pub struct AppConfig {
    pub app_id: String,
    pub backends: Vec<BackendConfig>,
    pub balancers: Vec<BalancerConfig>,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub apps: Vec<AppConfig>,
    pub master_id: String,
    pub slave_id: String,
    pub latencies: Latencies,
    pub resolve_cache: ResolveCache,
    pub seed: u64,
    /// Optional relative page-size jitter (robustness testing only). With
    /// jitter on, the exact byte-conservation self-check is skipped.
    pub page_jitter: Option<f64>,
    pub probe: HealthProbeConfig,
}

impl SimConfig {
    pub fn new(apps: Vec<AppConfig>, seed: u64) -> Self {
        SimConfig {
            apps,
            master_id: "selector-master".to_string(),
            slave_id: "selector-slave".to_string(),
            latencies: Latencies::default(),
            resolve_cache: ResolveCache::PerRequest,
            seed,
            page_jitter: None,
            probe: HealthProbeConfig::default(),
        }
    }
}

struct BalancerSim {
    node: BalancerNode,
    /// Admission queue: the instant the balancer is free to admit the next
    /// request. A request arriving at `t` is dispatched at
    /// max(t, next_free) and occupies the balancer for 1/forward_capacity.
    next_free: f64,
    pending_admission: u64,
}

struct AppRuntime {
    cluster: ClusterSpec,
    balancers: Vec<BalancerSim>,
    links: BTreeMap<BackendId, ServerLink>,
    /// Scripted health flips (time, backend, up) observed by the probes.
    health_script: Vec<(f64, BackendId, bool)>,
    probe_active: bool,
}

impl AppRuntime {
    fn scripted_up(&self, backend: BackendId, now: f64) -> bool {
        let mut up = true;
        for &(at, id, scripted) in &self.health_script {
            if id == backend && at <= now {
                up = scripted;
            }
        }
        up
    }

    fn probe_horizon(&self, probe: &HealthProbeConfig) -> f64 {
        let last = self
            .health_script
            .iter()
            .map(|&(at, _, _)| at)
            .fold(0.0, f64::max);
        last + probe.interval_s * f64::from(probe.fail_threshold + probe.rise_threshold + 2)
    }
}

struct RequestState {
    agent: usize,
    app: usize,
    issue_time: f64,
    source: String,
    vip: Option<String>,
    balancer: Option<usize>,
    bytes: Option<u64>,
}

pub struct SimWorld {
    queue: EventQueue,
    selectors: SelectorDeployment,
    master_id: String,
    apps: Vec<AppRuntime>,
    target_app: usize,
    latencies: Latencies,
    resolve_cache: ResolveCache,
    probe_cfg: HealthProbeConfig,
    requests: HashMap<u64, RequestState>,
    next_request_id: u64,
    output: VecDeque<CompletionRecord>,
    agent_vip_cache: HashMap<usize, String>,
    kill_master_at: Option<f64>,
    master_down_applied: bool,
    client_received_bytes: u64,
    completed_page_bytes: u64,
    jitter: Option<(f64, ChaCha8Rng)>,
}

impl SimWorld {
    /// Build a world from `config`, pointing the workload at `target_app`.
    /// Every app's balancer addresses are registered on the selector pair
    /// in config order.
    pub fn new(config: &SimConfig, target_app: &str) -> Result<SimWorld, SimError> {
        let mut selectors =
            SelectorDeployment::new_pair(config.master_id.clone(), config.slave_id.clone());
        let mut apps = Vec::new();
        for app_cfg in &config.apps {
            if app_cfg.balancers.is_empty() {
                return Err(SimError::Config(format!(
                    "app {}: needs at least one balancer",
                    app_cfg.app_id
                )));
            }
            let backends: Result<Vec<Backend>, _> = app_cfg
                .backends
                .iter()
                .map(|b| {
                    Backend::new(
                        b.id,
                        format!("{}-web-{}", app_cfg.app_id, b.id),
                        b.weight,
                        b.capacity_bytes_per_s,
                        b.page_size_bytes,
                    )
                })
                .collect();
            let backends = backends.map_err(|e| SimError::Config(e.to_string()))?;
            let cluster = ClusterSpec::new(app_cfg.app_id.clone(), backends)
                .map_err(|e| SimError::Config(e.to_string()))?;
            let links = cluster
                .backends()
                .iter()
                .map(|b| (b.id, ServerLink::new(b.capacity as f64)))
                .collect();
            let mut balancers = Vec::new();
            for bal_cfg in &app_cfg.balancers {
                let mut node = BalancerNode::new(
                    bal_cfg.vip.clone(),
                    bal_cfg.algorithm,
                    bal_cfg.forward_capacity_rps,
                    ForwardMode::DirectRouting,
                    &cluster,
                )
                .map_err(|e| SimError::Config(e.to_string()))?;
                node.probe_cfg = config.probe;
                selectors
                    .register_balancer(&app_cfg.app_id, &bal_cfg.vip)
                    .map_err(|e| SimError::Config(e.to_string()))?;
                balancers.push(BalancerSim {
                    node,
                    next_free: 0.0,
                    pending_admission: 0,
                });
            }
            apps.push(AppRuntime {
                cluster,
                balancers,
                links,
                health_script: Vec::new(),
                probe_active: false,
            });
        }
        let target_app = apps
            .iter()
            .position(|a| a.cluster.app_id == target_app)
            .ok_or_else(|| SimError::Config(format!("unknown target app {target_app}")))?;
        Ok(SimWorld {
            queue: EventQueue::new(),
            selectors,
            master_id: config.master_id.clone(),
            apps,
            target_app,
            latencies: config.latencies,
            resolve_cache: config.resolve_cache,
            probe_cfg: config.probe,
            requests: HashMap::new(),
            next_request_id: 0,
            output: VecDeque::new(),
            agent_vip_cache: HashMap::new(),
            kill_master_at: None,
            master_down_applied: false,
            client_received_bytes: 0,
            completed_page_bytes: 0,
            jitter: config
                .page_jitter
                .map(|j| (j, ChaCha8Rng::seed_from_u64(config.seed))),
        })
    }

    pub fn selectors(&self) -> &SelectorDeployment {
        &self.selectors
    }

    pub fn selectors_mut(&mut self) -> &mut SelectorDeployment {
        &mut self.selectors
    }

    pub fn now(&self) -> f64 {
        self.queue.now()
    }

    pub fn event_log(&self) -> &[crate::simnet::queue::LogRecord] {
        self.queue.log()
    }

    /// Mark the master selector Down just before the first event at or
    /// after `at` is processed.
    pub fn kill_master_at(&mut self, at: f64) {
        self.kill_master_at = Some(at);
    }

    /// Script a backend health flip, observed through periodic probes (the
    /// flip takes fail_threshold/rise_threshold probe rounds to act).
    pub fn script_backend_health(
        &mut self,
        app_id: &str,
        backend: BackendId,
        at: f64,
        up: bool,
    ) -> Result<(), SimError> {
        let idx = self
            .apps
            .iter()
            .position(|a| a.cluster.app_id == app_id)
            .ok_or_else(|| SimError::Config(format!("unknown app {app_id}")))?;
        self.apps[idx].health_script.push((at, backend, up));
        if !self.apps[idx].probe_active {
            self.apps[idx].probe_active = true;
            self.queue
                .schedule(self.queue.now() + self.probe_cfg.interval_s, EventKind::ProbeTick {
                    app: idx,
                })?;
        }
        Ok(())
    }

    fn jittered_page(&mut self, page: u64) -> u64 {
        match &mut self.jitter {
            None => page,
            Some((j, rng)) => {
                let factor = 1.0 + rng.gen_range(-*j..=*j);
                ((page as f64 * factor).round() as u64).max(1)
            }
        }
    }

    fn push_failure(&mut self, request: u64, outcome: Outcome, now: f64) {
        let state = self.requests.remove(&request).expect("request tracked");
        self.output.push_back(CompletionRecord {
            agent: state.agent,
            request,
            issue_time: state.issue_time,
            finish_time: now,
            outcome,
            backend: None,
            via_vip: state.vip,
            bytes: 0,
        });
    }

    fn handle_arrival(&mut self, request: u64) -> Result<(), SimError> {
        let now = self.queue.now();
        let (agent, app_idx) = {
            let state = self.requests.get(&request).expect("request tracked");
            (state.agent, state.app)
        };
        let cached = match self.resolve_cache {
            ResolveCache::PerAgent => self.agent_vip_cache.get(&agent).cloned(),
            ResolveCache::PerRequest => None,
        };
        let (vip, resolved_remotely) = match cached {
            Some(vip) => (vip, false),
            None => {
                let app_id = self.apps[app_idx].cluster.app_id.clone();
                match self.selectors.ha_resolve(&app_id) {
                    Ok(vip) => {
                        if self.resolve_cache == ResolveCache::PerAgent {
                            self.agent_vip_cache.insert(agent, vip.clone());
                        }
                        (vip, true)
                    }
                    Err(SelectorError::AllSelectorsDown) => {
                        self.push_failure(request, Outcome::ResolveFailed, now);
                        return Ok(());
                    }
                    Err(_) => {
                        self.push_failure(request, Outcome::ResolveFailed, now);
                        return Ok(());
                    }
                }
            }
        };
        self.requests.get_mut(&request).expect("request tracked").vip = Some(vip);
        // A cached answer costs no selector round trip.
        let at = if resolved_remotely {
            now + self.latencies.client_selector_s
        } else {
            now
        };
        self.queue.schedule(at, EventKind::ResolutionDone { request })
    }

    fn handle_resolution_done(&mut self, request: u64) -> Result<(), SimError> {
        let now = self.queue.now();
        let (app_idx, vip) = {
            let state = self.requests.get(&request).expect("request tracked");
            (state.app, state.vip.clone().expect("resolved"))
        };
        let app = &mut self.apps[app_idx];
        let b_idx = app
            .balancers
            .iter()
            .position(|b| b.node.vip == vip)
            .expect("resolved vip is registered");
        self.requests.get_mut(&request).expect("request tracked").balancer = Some(b_idx);
        let bal = &mut app.balancers[b_idx];
        bal.node.note_arrival(0);
        bal.pending_admission += 1;
        let arrival = now + self.latencies.client_balancer_s;
        let admit = arrival.max(bal.next_free);
        bal.next_free = admit + 1.0 / bal.node.forward_capacity;
        let dispatch_at = admit + self.latencies.balancer_backend_s;
        self.queue.schedule(dispatch_at, EventKind::DispatchDone { request })
    }

    fn handle_dispatch_done(&mut self, request: u64) -> Result<(), SimError> {
        let now = self.queue.now();
        let (app_idx, b_idx, source) = {
            let state = self.requests.get(&request).expect("request tracked");
            (state.app, state.balancer.expect("admitted"), state.source.clone())
        };
        let page = {
            let app = &mut self.apps[app_idx];
            let bal = &mut app.balancers[b_idx];
            bal.pending_admission -= 1;
            match bal.node.dispatch(&mut app.cluster, request, &source, 0, now) {
                Err(DispatchError::NoHealthyBackend) => None,
                Err(other) => {
                    return Err(SimError::SelfCheck(format!(
                        "unexpected dispatch error: {other}"
                    )))
                }
                Ok(assignment) => {
                    let static_page = app
                        .cluster
                        .backend(assignment.backend_id)
                        .expect("assigned backend exists")
                        .page_size;
                    Some((assignment.backend_id, static_page))
                }
            }
        };
        match page {
            None => {
                self.push_failure(request, Outcome::NoHealthyBackend, now);
                Ok(())
            }
            Some((backend_id, static_page)) => {
                let bytes = self.jittered_page(static_page);
                self.requests.get_mut(&request).expect("request tracked").bytes = Some(bytes);
                let app = &mut self.apps[app_idx];
                let link = app.links.get_mut(&backend_id).expect("link per backend");
                let version = link.join(now, request, bytes as f64);
                let at = link.next_completion(now).expect("flow just joined");
                self.queue.schedule(
                    at,
                    EventKind::TransferDone {
                        app: app_idx,
                        backend: backend_id,
                        version,
                    },
                )
            }
        }
    }

    fn handle_transfer_done(
        &mut self,
        app_idx: usize,
        backend: BackendId,
        version: u64,
    ) -> Result<(), SimError> {
        let now = self.queue.now();
        let app = &mut self.apps[app_idx];
        let link = app.links.get_mut(&backend).expect("link per backend");
        let (request, bytes) = match link.on_transfer_done(now, version) {
            TransferEvent::Stale => return Ok(()),
            TransferEvent::Completed { request, bytes } => (request, bytes),
        };
        // Reschedule the link's next completion under its new version.
        if let Some(at) = link.next_completion(now) {
            let v = link.version();
            self.queue.schedule(
                at,
                EventKind::TransferDone {
                    app: app_idx,
                    backend,
                    version: v,
                },
            )?;
        }
        let state = self.requests.remove(&request).expect("request tracked");
        let b_idx = state.balancer.expect("dispatched");
        let app = &mut self.apps[app_idx];
        let info = app.balancers[b_idx]
            .node
            .complete(&mut app.cluster, request)
            .map_err(|e| SimError::SelfCheck(format!("completion accounting: {e}")))?;
        // Direct routing: the response reaches the client straight from the
        // backend; these two totals are compared by the self-checks.
        self.client_received_bytes += bytes.round() as u64;
        self.completed_page_bytes += info.page_size;
        self.output.push_back(CompletionRecord {
            agent: state.agent,
            request,
            issue_time: state.issue_time,
            finish_time: now,
            outcome: Outcome::Completed,
            backend: Some(info.backend_id),
            via_vip: state.vip,
            bytes: state.bytes.unwrap_or(info.page_size),
        });
        Ok(())
    }

    fn handle_probe_tick(&mut self, app_idx: usize) -> Result<(), SimError> {
        let now = self.queue.now();
        let results: Vec<(BackendId, bool)> = {
            let app = &self.apps[app_idx];
            app.cluster
                .backends()
                .iter()
                .map(|b| (b.id, app.scripted_up(b.id, now)))
                .collect()
        };
        let app = &mut self.apps[app_idx];
        // The first balancer's probe run applies the health flips; siblings
        // sharing the cluster resync their scheduler state from the result.
        let mut balancers = app.balancers.iter_mut();
        if let Some(first) = balancers.next() {
            let transitions = first.node.probe_tick(&mut app.cluster, &results);
            for sibling in balancers {
                sibling.node.apply_pool_change(&app.cluster, &transitions);
            }
        }
        if now + self.probe_cfg.interval_s <= app.probe_horizon(&self.probe_cfg) {
            self.queue.schedule(
                now + self.probe_cfg.interval_s,
                EventKind::ProbeTick { app: app_idx },
            )?;
        }
        Ok(())
    }

    fn handle_event(&mut self, kind: EventKind) -> Result<(), SimError> {
        match kind {
            EventKind::Arrival { request } => self.handle_arrival(request),
            EventKind::ResolutionDone { request } => self.handle_resolution_done(request),
            EventKind::DispatchDone { request } => self.handle_dispatch_done(request),
            EventKind::TransferDone { app, backend, version } => {
                self.handle_transfer_done(app, backend, version)
            }
            EventKind::ProbeTick { app } => self.handle_probe_tick(app),
        }
    }

    fn step(&mut self) -> Result<bool, SimError> {
        let Some(t) = self.queue.peek_time() else {
            return Ok(false);
        };
        if let Some(kill_at) = self.kill_master_at {
            if !self.master_down_applied && t >= kill_at {
                let master = self.master_id.clone();
                self.selectors.set_health(&master, Health::Down);
                self.master_down_applied = true;
            }
        }
        let event = self.queue.pop().expect("peeked");
        self.handle_event(event.kind)?;
        Ok(true)
    }

    fn self_check(&self) -> Result<(), BenchError> {
        for app in &self.apps {
            for bal in &app.balancers {
                if bal.pending_admission != 0 {
                    return Err(BenchError::SelfCheck(format!(
                        "balancer {}: {} requests stuck in admission",
                        bal.node.vip, bal.pending_admission
                    )));
                }
                if bal.node.outstanding_len() != 0 {
                    return Err(BenchError::SelfCheck(format!(
                        "balancer {}: {} assignments never completed",
                        bal.node.vip,
                        bal.node.outstanding_len()
                    )));
                }
                if !bal.node.conservation_holds(bal.pending_admission) {
                    return Err(BenchError::SelfCheck(format!(
                        "balancer {}: requests_in != dispatched + rejected + in-flight ({:?})",
                        bal.node.vip,
                        bal.node.counters()
                    )));
                }
                if bal.node.mode == ForwardMode::DirectRouting
                    && bal.node.counters().bytes_response_out != 0
                {
                    return Err(BenchError::SelfCheck(format!(
                        "balancer {}: direct routing must not carry response bytes",
                        bal.node.vip
                    )));
                }
            }
            for (id, link) in &app.links {
                if link.active_flows() != 0 {
                    return Err(BenchError::SelfCheck(format!(
                        "backend {id}: {} transfers still active at finish",
                        link.active_flows()
                    )));
                }
            }
        }
        if self.jitter.is_none() && self.client_received_bytes != self.completed_page_bytes {
            return Err(BenchError::SelfCheck(format!(
                "byte conservation broken: clients received {} bytes, completions account {}",
                self.client_received_bytes, self.completed_page_bytes
            )));
        }
        Ok(())
    }

    fn snapshot(&self) -> SystemStats {
        SystemStats {
            client_received_bytes: self.client_received_bytes,
            completed_page_bytes: self.completed_page_bytes,
            balancers: self
                .apps
                .iter()
                .flat_map(|a| a.balancers.iter())
                .map(|b| BalancerSnapshot {
                    vip: b.node.vip.clone(),
                    algorithm: b.node.kind.label().to_string(),
                    mode: b.node.mode,
                    counters: b.node.counters().clone(),
                })
                .collect(),
        }
    }
}

impl RequestSystem for SimWorld {
    fn issue(&mut self, agent: usize, not_before: f64) -> Result<(), BenchError> {
        let at = not_before.max(self.queue.now());
        let request = self.next_request_id;
        self.next_request_id += 1;
        self.requests.insert(
            request,
            RequestState {
                agent,
                app: self.target_app,
                issue_time: at,
                source: format!("agent-{agent}"),
                vip: None,
                balancer: None,
                bytes: None,
            },
        );
        self.queue
            .schedule(at, EventKind::Arrival { request })
            .map_err(|e| BenchError::System(e.to_string()))
    }

    fn next_completion(&mut self) -> Option<CompletionRecord> {
        loop {
            if let Some(record) = self.output.pop_front() {
                return Some(record);
            }
            match self.step() {
                Ok(true) => continue,
                Ok(false) => return None,
                Err(e) => panic!("simulation invariant broken: {e}"),
            }
        }
    }

    fn finish(&mut self) -> Result<SystemStats, BenchError> {
        // Drain leftover events (stale completions, probe ticks).
        loop {
            match self.step() {
                Ok(true) => continue,
                Ok(false) => break,
                Err(e) => return Err(BenchError::System(e.to_string())),
            }
        }
        self.self_check()?;
        Ok(self.snapshot())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{run_ab, AbSpec};

    fn one_backend_config() -> SimConfig {
        SimConfig::new(
            vec![AppConfig {
                app_id: "AP1".to_string(),
                backends: vec![BackendConfig {
                    id: 1,
                    weight: 1,
                    capacity_bytes_per_s: 1000,
                    page_size_bytes: 1000,
                }],
                balancers: vec![BalancerConfig {
                    vip: "127.0.0.1:9001".to_string(),
                    algorithm: SchedulerKind::RoundRobin,
                    forward_capacity_rps: 1_000_000.0,
                }],
            }],
            7,
        )
    }

    fn two_balancer_config() -> SimConfig {
        SimConfig::new(
            vec![AppConfig {
                app_id: "AP2".to_string(),
                backends: (1..=4)
                    .map(|id| BackendConfig {
                        id,
                        weight: 1,
                        capacity_bytes_per_s: 10_000,
                        page_size_bytes: 1000,
                    })
                    .collect(),
                balancers: vec![
                    BalancerConfig {
                        vip: "127.0.0.1:9002".to_string(),
                        algorithm: SchedulerKind::RoundRobin,
                        forward_capacity_rps: 1000.0,
                    },
                    BalancerConfig {
                        vip: "127.0.0.1:9003".to_string(),
                        algorithm: SchedulerKind::RoundRobin,
                        forward_capacity_rps: 1000.0,
                    },
                ],
            }],
            7,
        )
    }

    #[test]
    fn single_request_takes_one_transfer_time() {
        // 1000 B page over a 1000 B/s link, no latency, ample admission:
        // the response lands exactly one second after the request.
        let mut world = SimWorld::new(&one_backend_config(), "AP1").unwrap();
        world.issue(0, 0.0).unwrap();
        let rec = world.next_completion().unwrap();
        assert!(rec.outcome.is_success());
        assert!((rec.finish_time - 1.0).abs() < 1e-9, "got {}", rec.finish_time);
        world.finish().unwrap();
    }

    #[test]
    fn sequential_requests_alternate_balancers() {
        let mut world = SimWorld::new(&two_balancer_config(), "AP2").unwrap();
        let mut vips = Vec::new();
        for _ in 0..4 {
            world.issue(0, world.now()).unwrap();
            let rec = world.next_completion().unwrap();
            vips.push(rec.via_vip.unwrap());
        }
        assert_eq!(
            vips,
            vec![
                "127.0.0.1:9002",
                "127.0.0.1:9003",
                "127.0.0.1:9002",
                "127.0.0.1:9003"
            ]
        );
        world.finish().unwrap();
    }

    #[test]
    fn master_kill_mid_run_loses_nothing_and_timing_matches() {
        let spec = AbSpec {
            app_id: "AP2".to_string(),
            n_requests: 40,
            concurrency: 4,
            repeats: 1,
        };
        let mut plain = SimWorld::new(&two_balancer_config(), "AP2").unwrap();
        let baseline = run_ab(&spec, &mut plain).unwrap();

        let mut killed = SimWorld::new(&two_balancer_config(), "AP2").unwrap();
        killed.kill_master_at(0.004);
        let failover = run_ab(&spec, &mut killed).unwrap();

        assert_eq!(failover.report.failures, 0);
        // Zero selector latency: only the answering node changes, not the
        // timing.
        assert!(
            (failover.report.total_time_s - baseline.report.total_time_s).abs() < 1e-9,
            "{} vs {}",
            failover.report.total_time_s,
            baseline.report.total_time_s
        );
    }

    #[test]
    fn both_selectors_down_fail_requests() {
        let mut world = SimWorld::new(&one_backend_config(), "AP1").unwrap();
        world.selectors_mut().set_health("selector-master", Health::Down);
        world.selectors_mut().set_health("selector-slave", Health::Down);
        world.issue(0, 0.0).unwrap();
        let rec = world.next_completion().unwrap();
        assert_eq!(rec.outcome, Outcome::ResolveFailed);
        world.finish().unwrap();
    }

    #[test]
    fn per_agent_cache_pins_the_balancer() {
        let mut cfg = two_balancer_config();
        cfg.resolve_cache = ResolveCache::PerAgent;
        let mut world = SimWorld::new(&cfg, "AP2").unwrap();
        let mut vips = Vec::new();
        for _ in 0..3 {
            world.issue(0, world.now()).unwrap();
            vips.push(world.next_completion().unwrap().via_vip.unwrap());
        }
        assert!(vips.iter().all(|v| v == &vips[0]));
        world.finish().unwrap();
    }

    #[test]
    fn scripted_backend_failure_is_probed_out_and_back() {
        let mut cfg = two_balancer_config();
        cfg.probe = HealthProbeConfig {
            interval_s: 0.05,
            fail_threshold: 3,
            rise_threshold: 2,
        };
        let mut world = SimWorld::new(&cfg, "AP2").unwrap();
        world.script_backend_health("AP2", 2, 0.0, false).unwrap();
        world.script_backend_health("AP2", 2, 1.0, true).unwrap();
        // Sequential requests across the outage window.
        let mut hit_down_backend_mid_window = false;
        for i in 0..200 {
            let at = 0.01 * f64::from(i);
            world.issue(0, at).unwrap();
            let rec = world.next_completion().unwrap();
            assert!(rec.outcome.is_success());
            // Once the probes flipped it Down (3 intervals), backend 2 must
            // not appear until rise probes bring it back.
            if rec.issue_time > 0.2 && rec.issue_time < 1.0 && rec.backend == Some(2) {
                hit_down_backend_mid_window = true;
            }
        }
        assert!(!hit_down_backend_mid_window);
        world.finish().unwrap();
    }

    #[test]
    fn replay_is_byte_identical() {
        let run = || {
            let spec = AbSpec {
                app_id: "AP2".to_string(),
                n_requests: 60,
                concurrency: 10,
                repeats: 1,
            };
            let mut world = SimWorld::new(&two_balancer_config(), "AP2").unwrap();
            let out = run_ab(&spec, &mut world).unwrap();
            (format!("{:?}", world.event_log()), format!("{:?}", out.report))
        };
        assert_eq!(run(), run());
    }
}
