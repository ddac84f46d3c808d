//! Level-2 balancer: picks a backend for each arriving request, keeps the
//! connection and byte counters, and applies probe-driven health transitions.
//!
//! The balancer does not own the cluster — two balancers fronting the same
//! application share its backends (and their connection counts) while each
//! keeps private scheduler state. All operations that touch scheduler state
//! and counters take `&mut self`, so a pick and its connection increment are
//! a single step.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{
    healthy_pool, note_close, note_connect, pick_backend, BackendId, ClusterSpec, Health,
    ModelError, SchedulerKind, SchedulerState,
};

/// How responses travel back to the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForwardMode {
    /// Requests are forwarded, responses go backend -> client directly and
    /// never cross the balancer.
    DirectRouting,
    /// Full relay: responses stream back through the balancer.
    Proxy,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficCounters {
    pub requests_in: u64,
    pub requests_dispatched: u64,
    pub requests_rejected: u64,
    pub bytes_request_in: u64,
    pub bytes_request_out: u64,
    pub bytes_response_out: u64,
}

/// A dispatched request: which backend got it and when.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub request_id: u64,
    pub backend_id: BackendId,
    pub dispatch_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HealthProbeConfig {
    pub interval_s: f64,
    pub fail_threshold: u32,
    pub rise_threshold: u32,
}

impl Default for HealthProbeConfig {
    fn default() -> Self {
        HealthProbeConfig {
            interval_s: 1.0,
            fail_threshold: 3,
            rise_threshold: 2,
        }
    }
}

/// Consecutive probe outcomes for one backend. The enum keeps the invariant
/// that at most one direction has a nonzero streak.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Streak {
    Succeeding(u32),
    Failing(u32),
}

/// Per-backend probe streaks, shared between the probe loop and the
/// fast-fail path of the live proxy.
pub type ProbeState = BTreeMap<BackendId, Streak>;

/// What `complete` reports back to the caller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionInfo {
    pub backend_id: BackendId,
    pub page_size: u64,
}

#[derive(Debug)]
pub struct BalancerNode {
    pub vip: String,
    pub kind: SchedulerKind,
    pub state: SchedulerState,
    /// Requests per second the balancer itself can admit.
    pub forward_capacity: f64,
    pub mode: ForwardMode,
    pub probe_cfg: HealthProbeConfig,
    counters: TrafficCounters,
    outstanding: BTreeMap<u64, Assignment>,
    probe_state: ProbeState,
    // Token bucket for live-mode admission; burst is one second of capacity.
    admit_tokens: f64,
    admit_last: f64,
}

impl BalancerNode {
    pub fn new(
        vip: impl Into<String>,
        kind: SchedulerKind,
        forward_capacity: f64,
        mode: ForwardMode,
        cluster: &ClusterSpec,
    ) -> Result<Self, ModelError> {
        if !forward_capacity.is_finite() || forward_capacity <= 0.0 {
            return Err(ModelError::Invalid("forward_capacity must be > 0".to_string()));
        }
        let mut state = SchedulerState::new();
        state.rebuild_hash_table(&healthy_pool(cluster));
        Ok(BalancerNode {
            vip: vip.into(),
            kind,
            state,
            forward_capacity,
            mode,
            probe_cfg: HealthProbeConfig::default(),
            counters: TrafficCounters::default(),
            outstanding: BTreeMap::new(),
            probe_state: ProbeState::new(),
            admit_tokens: forward_capacity,
            admit_last: 0.0,
        })
    }

    pub fn counters(&self) -> &TrafficCounters {
        &self.counters
    }

    pub fn outstanding_len(&self) -> usize {
        self.outstanding.len()
    }

    pub fn probe_state(&self) -> &ProbeState {
        &self.probe_state
    }

    /// Count a request entering the balancer's domain (before admission).
    pub fn note_arrival(&mut self, request_bytes: u64) {
        self.counters.requests_in += 1;
        self.counters.bytes_request_in += request_bytes;
    }

    /// Live-mode admission gate: allow up to `forward_capacity` requests per
    /// second, with one second of burst. The simulator models admission as a
    /// virtual-time queue instead and never calls this.
    pub fn try_admit(&mut self, now: f64) -> bool {
        let elapsed = (now - self.admit_last).max(0.0);
        self.admit_last = now;
        self.admit_tokens =
            (self.admit_tokens + elapsed * self.forward_capacity).min(self.forward_capacity);
        if self.admit_tokens >= 1.0 {
            self.admit_tokens -= 1.0;
            true
        } else {
            false
        }
    }

    /// Count a rejection that happened outside `dispatch` (overload gate).
    pub fn note_rejected(&mut self) {
        self.counters.requests_rejected += 1;
    }

    /// Pick a backend for the request and open its connection, atomically
    /// with respect to other dispatches on this balancer.
    pub fn dispatch(
        &mut self,
        cluster: &mut ClusterSpec,
        request_id: u64,
        source: &str,
        request_bytes: u64,
        now: f64,
    ) -> Result<Assignment, DispatchError> {
        let backend_id = {
            let pool = healthy_pool(cluster);
            match pick_backend(self.kind, &mut self.state, source, &pool) {
                Ok(id) => id,
                Err(ModelError::EmptyPool) => {
                    self.counters.requests_rejected += 1;
                    return Err(DispatchError::NoHealthyBackend);
                }
                Err(other) => return Err(DispatchError::Model(other)),
            }
        };
        let backend = cluster.backend_mut(backend_id).expect("picked id exists");
        debug_assert!(backend.health.is_up(), "scheduler picked a Down backend");
        note_connect(backend);
        let assignment = Assignment {
            request_id,
            backend_id,
            dispatch_time: now,
        };
        self.outstanding.insert(request_id, assignment.clone());
        self.counters.requests_dispatched += 1;
        self.counters.bytes_request_out += request_bytes;
        Ok(assignment)
    }

    /// Close out a dispatched request. In DirectRouting mode the response
    /// bytes belong to the backend->client path and are left to the caller;
    /// in Proxy mode they are added to the balancer's egress counter.
    pub fn complete(
        &mut self,
        cluster: &mut ClusterSpec,
        request_id: u64,
    ) -> Result<CompletionInfo, DispatchError> {
        let assignment = self
            .outstanding
            .remove(&request_id)
            .ok_or(DispatchError::UnknownAssignment(request_id))?;
        let backend = cluster
            .backend_mut(assignment.backend_id)
            .expect("assigned backend exists");
        note_close(backend).map_err(DispatchError::Model)?;
        let page_size = backend.page_size;
        if self.mode == ForwardMode::Proxy {
            self.counters.bytes_response_out += page_size;
        }
        Ok(CompletionInfo {
            backend_id: assignment.backend_id,
            page_size,
        })
    }

    /// Like `complete` but for a dispatch whose transfer failed: the
    /// connection is released and no response bytes are accounted anywhere.
    pub fn complete_failed(
        &mut self,
        cluster: &mut ClusterSpec,
        request_id: u64,
    ) -> Result<BackendId, DispatchError> {
        let assignment = self
            .outstanding
            .remove(&request_id)
            .ok_or(DispatchError::UnknownAssignment(request_id))?;
        let backend = cluster
            .backend_mut(assignment.backend_id)
            .expect("assigned backend exists");
        note_close(backend).map_err(DispatchError::Model)?;
        Ok(assignment.backend_id)
    }

    /// Apply one round of probe results. Streaks are counted per backend;
    /// crossing fail/rise thresholds flips health. On any flip the hash
    /// table is repaired (Down: only the dead backend's buckets move; Up:
    /// full rebuild) and rotation cursors are clamped to the new pool.
    pub fn probe_tick(
        &mut self,
        cluster: &mut ClusterSpec,
        results: &[(BackendId, bool)],
    ) -> Vec<(BackendId, Health)> {
        let mut transitions = Vec::new();
        for &(id, ok) in results {
            let streak = self.probe_state.entry(id).or_insert(Streak::Succeeding(0));
            *streak = match (ok, *streak) {
                (true, Streak::Succeeding(n)) => Streak::Succeeding(n + 1),
                (true, Streak::Failing(_)) => Streak::Succeeding(1),
                (false, Streak::Failing(n)) => Streak::Failing(n + 1),
                (false, Streak::Succeeding(_)) => Streak::Failing(1),
            };
            let backend = match cluster.backend_mut(id) {
                Some(b) => b,
                None => continue,
            };
            match (backend.health, *streak) {
                (Health::Up, Streak::Failing(n)) if n >= self.probe_cfg.fail_threshold => {
                    backend.health = Health::Down;
                    transitions.push((id, Health::Down));
                }
                (Health::Down, Streak::Succeeding(n)) if n >= self.probe_cfg.rise_threshold => {
                    backend.health = Health::Up;
                    transitions.push((id, Health::Up));
                }
                _ => {}
            }
        }
        self.apply_pool_change(cluster, &transitions);
        transitions
    }

    /// Repair scheduler state after the cluster's healthy set changed. A
    /// balancer that shares its cluster with others must be told about
    /// transitions applied through a sibling's `probe_tick`.
    pub fn apply_pool_change(&mut self, cluster: &ClusterSpec, transitions: &[(BackendId, Health)]) {
        if transitions.is_empty() {
            return;
        }
        let went_up = transitions.iter().any(|&(_, h)| h == Health::Up);
        let downed: Vec<BackendId> = transitions
            .iter()
            .filter(|&&(_, h)| h == Health::Down)
            .map(|&(id, _)| id)
            .collect();
        let pool = healthy_pool(cluster);
        if went_up {
            self.state.rebuild_hash_table(&pool);
        } else {
            self.state.remap_hash_buckets(&downed, &pool);
        }
        self.state.clamp_to_pool(pool.len());
    }

    /// Feed a single observed failure (e.g. a connect error seen by the live
    /// proxy) into the same streak accounting the probe loop uses.
    pub fn note_backend_failure(&mut self, cluster: &mut ClusterSpec, id: BackendId) {
        self.probe_tick(cluster, &[(id, false)]);
    }

    /// requests_in = dispatched + rejected + in-flight, where in-flight is
    /// the caller's count of requests sitting between arrival and dispatch.
    pub fn conservation_holds(&self, pending_admission: u64) -> bool {
        self.counters.requests_in
            == self.counters.requests_dispatched + self.counters.requests_rejected
                + pending_admission
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DispatchError {
    /// The healthy pool is empty; the request is rejected and counted.
    NoHealthyBackend,
    /// Live-mode admission above forward_capacity.
    Overloaded,
    UnknownAssignment(u64),
    Model(ModelError),
}

impl fmt::Display for DispatchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DispatchError::NoHealthyBackend => write!(f, "no healthy backend"),
            DispatchError::Overloaded => write!(f, "balancer admission capacity exceeded"),
            DispatchError::UnknownAssignment(id) => write!(f, "unknown assignment {id}"),
            DispatchError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DispatchError {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Backend;

    fn five_backend_cluster() -> ClusterSpec {
        let backends = (1..=5)
            .map(|id| Backend::new(id, format!("10.0.0.{id}:80"), 1, 1000, 1000).unwrap())
            .collect();
        ClusterSpec::new("AP1", backends).unwrap()
    }

    fn rr_balancer(cluster: &ClusterSpec) -> BalancerNode {
        BalancerNode::new("127.0.0.1:9001", SchedulerKind::RoundRobin, 100.0, ForwardMode::DirectRouting, cluster)
            .unwrap()
    }

    #[test]
    fn round_robin_dispatch_cycles_over_five() {
        let mut cluster = five_backend_cluster();
        let mut bal = rr_balancer(&cluster);
        let picks: Vec<_> = (0..10)
            .map(|i| {
                bal.note_arrival(0);
                bal.dispatch(&mut cluster, i, "c", 0, 0.0).unwrap().backend_id
            })
            .collect();
        assert_eq!(picks, vec![1, 2, 3, 4, 5, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn all_down_rejects_and_counts() {
        let mut cluster = five_backend_cluster();
        for b in 1..=5 {
            cluster.backend_mut(b).unwrap().health = Health::Down;
        }
        let mut bal = rr_balancer(&cluster);
        bal.note_arrival(0);
        assert_eq!(
            bal.dispatch(&mut cluster, 1, "c", 0, 0.0),
            Err(DispatchError::NoHealthyBackend)
        );
        assert_eq!(bal.counters().requests_rejected, 1);
        assert!(bal.conservation_holds(0));
    }

    #[test]
    fn wlc_dispatch_steps_through_tie_break() {
        let backends = vec![
            Backend::new(1, "a:80", 1, 1000, 1000).unwrap(),
            Backend::new(2, "b:80", 1, 1000, 1000).unwrap(),
        ];
        let mut cluster = ClusterSpec::new("AP1", backends).unwrap();
        let mut bal = BalancerNode::new(
            "vip:1",
            SchedulerKind::WeightedLeastConnection,
            100.0,
            ForwardMode::DirectRouting,
            &cluster,
        )
        .unwrap();
        // No completions in between: the first pick raises A's count, so the
        // second must go to B.
        bal.note_arrival(0);
        let first = bal.dispatch(&mut cluster, 1, "c", 0, 0.0).unwrap().backend_id;
        bal.note_arrival(0);
        let second = bal.dispatch(&mut cluster, 2, "c", 0, 0.0).unwrap().backend_id;
        assert_eq!((first, second), (1, 2));
    }

    #[test]
    fn complete_restores_connections_and_dr_keeps_egress_zero() {
        let mut cluster = five_backend_cluster();
        let mut bal = rr_balancer(&cluster);
        bal.note_arrival(0);
        let a = bal.dispatch(&mut cluster, 7, "c", 0, 0.0).unwrap();
        assert_eq!(cluster.backend(a.backend_id).unwrap().active_conns, 1);
        let info = bal.complete(&mut cluster, 7).unwrap();
        assert_eq!(cluster.backend(a.backend_id).unwrap().active_conns, 0);
        assert_eq!(info.page_size, 1000);
        assert_eq!(bal.counters().bytes_response_out, 0);
    }

    #[test]
    fn proxy_mode_counts_response_bytes() {
        let mut cluster = five_backend_cluster();
        let mut bal = BalancerNode::new(
            "vip:1",
            SchedulerKind::RoundRobin,
            100.0,
            ForwardMode::Proxy,
            &cluster,
        )
        .unwrap();
        bal.note_arrival(0);
        bal.dispatch(&mut cluster, 1, "c", 0, 0.0).unwrap();
        bal.complete(&mut cluster, 1).unwrap();
        assert_eq!(bal.counters().bytes_response_out, 1000);
    }

    #[test]
    fn unknown_assignment_rejected() {
        let mut cluster = five_backend_cluster();
        let mut bal = rr_balancer(&cluster);
        assert_eq!(
            bal.complete(&mut cluster, 42),
            Err(DispatchError::UnknownAssignment(42))
        );
    }

    #[test]
    fn probe_thresholds_flip_health() {
        let mut cluster = five_backend_cluster();
        let mut bal = rr_balancer(&cluster);

        // Three consecutive failures with fail_threshold 3 take it Down.
        assert!(bal.probe_tick(&mut cluster, &[(1, false)]).is_empty());
        assert!(bal.probe_tick(&mut cluster, &[(1, false)]).is_empty());
        assert_eq!(bal.probe_tick(&mut cluster, &[(1, false)]), vec![(1, Health::Down)]);
        assert_eq!(cluster.backend(1).unwrap().health, Health::Down);

        // Two successes with rise_threshold 2 bring it back.
        assert!(bal.probe_tick(&mut cluster, &[(1, true)]).is_empty());
        assert_eq!(bal.probe_tick(&mut cluster, &[(1, true)]), vec![(1, Health::Up)]);
        assert_eq!(cluster.backend(1).unwrap().health, Health::Up);
    }

    #[test]
    fn success_resets_failure_streak() {
        let mut cluster = five_backend_cluster();
        let mut bal = rr_balancer(&cluster);
        bal.probe_tick(&mut cluster, &[(2, false)]);
        bal.probe_tick(&mut cluster, &[(2, false)]);
        bal.probe_tick(&mut cluster, &[(2, true)]);
        // The earlier failures no longer count toward the threshold.
        bal.probe_tick(&mut cluster, &[(2, false)]);
        bal.probe_tick(&mut cluster, &[(2, false)]);
        assert_eq!(cluster.backend(2).unwrap().health, Health::Up);
        assert_eq!(bal.probe_tick(&mut cluster, &[(2, false)]), vec![(2, Health::Down)]);
    }

    #[test]
    fn down_transition_remaps_hash_and_clamps_cursor() {
        let mut cluster = five_backend_cluster();
        let mut bal = BalancerNode::new(
            "vip:1",
            SchedulerKind::SourceHash,
            100.0,
            ForwardMode::DirectRouting,
            &cluster,
        )
        .unwrap();
        let before: Vec<_> = (0..crate::model::SH_BUCKETS)
            .map(|i| bal.state.bucket_owner(i))
            .collect();
        let v = bal.state.table_version();
        for _ in 0..3 {
            bal.probe_tick(&mut cluster, &[(3, false)]);
        }
        assert_eq!(bal.state.table_version(), v + 1);
        for (i, &owner) in before.iter().enumerate() {
            if owner != Some(3) {
                assert_eq!(bal.state.bucket_owner(i), owner);
            } else {
                assert_ne!(bal.state.bucket_owner(i), Some(3));
            }
        }
        // Dispatches keep working and never hit the Down backend.
        for req in 0..20 {
            bal.note_arrival(0);
            let a = bal.dispatch(&mut cluster, req, &format!("src-{req}"), 0, 0.0).unwrap();
            assert_ne!(a.backend_id, 3);
            bal.complete(&mut cluster, req).unwrap();
        }
    }

    #[test]
    fn token_bucket_rate_limits() {
        let cluster = five_backend_cluster();
        let mut bal = BalancerNode::new(
            "vip:1",
            SchedulerKind::RoundRobin,
            2.0,
            ForwardMode::Proxy,
            &cluster,
        )
        .unwrap();
        // Burst of 2, then dry until time passes.
        assert!(bal.try_admit(0.0));
        assert!(bal.try_admit(0.0));
        assert!(!bal.try_admit(0.0));
        assert!(bal.try_admit(1.0));
    }

    #[test]
    fn conservation_counts_in_flight() {
        let mut cluster = five_backend_cluster();
        let mut bal = rr_balancer(&cluster);
        bal.note_arrival(10);
        bal.note_arrival(10);
        assert!(bal.conservation_holds(2));
        bal.dispatch(&mut cluster, 1, "c", 10, 0.0).unwrap();
        assert!(bal.conservation_holds(1));
        bal.dispatch(&mut cluster, 2, "c", 10, 0.0).unwrap();
        assert!(bal.conservation_holds(0));
        assert_eq!(bal.counters().bytes_request_in, 20);
        assert_eq!(bal.counters().bytes_request_out, 20);
    }
}
