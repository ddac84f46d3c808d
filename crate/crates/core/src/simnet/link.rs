//! Equal processor sharing on a backend's serving link.
//!
//! With n active transfers on a link of capacity C, each transfer proceeds
//! at C/n. The implementation tracks virtual service v(t) with
//! dv/dt = C/n(t): a transfer of S bytes joining at virtual position v0
//! completes when v reaches v0 + S, so only the minimum finish position has
//! to be watched. Every membership change bumps `version`; completion
//! events scheduled under an older version are stale.

use std::collections::HashMap;

/// Per-flow record. `remaining = finish_virt - v(now)`, clamped to
/// [0, total].
#[derive(Debug, Clone, Copy)]
struct FlowRec {
    total: f64,
    finish_virt: f64,
    seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransferEvent {
    /// The event was computed before a membership change; ignore it.
    Stale,
    /// The named request finished transferring `bytes`.
    Completed { request: u64, bytes: f64 },
}

#[derive(Debug)]
pub struct ServerLink {
    capacity: f64,
    virt: f64,
    last_update: f64,
    version: u64,
    next_join_seq: u64,
    flows: HashMap<u64, FlowRec>,
}

impl ServerLink {
    /// `capacity` in bytes per second; must be positive.
    pub fn new(capacity: f64) -> Self {
        assert!(capacity > 0.0, "link capacity must be positive");
        ServerLink {
            capacity,
            virt: 0.0,
            last_update: 0.0,
            version: 0,
            next_join_seq: 0,
            flows: HashMap::new(),
        }
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn active_flows(&self) -> usize {
        self.flows.len()
    }

    fn virt_at(&self, now: f64) -> f64 {
        if self.flows.is_empty() {
            self.virt
        } else {
            self.virt + (now - self.last_update).max(0.0) * self.capacity / self.flows.len() as f64
        }
    }

    fn advance(&mut self, now: f64) {
        self.virt = self.virt_at(now);
        self.last_update = now;
    }

    /// Start transferring `bytes` for `request`. Returns the new link
    /// version; the caller must reschedule the link's next completion.
    pub fn join(&mut self, now: f64, request: u64, bytes: f64) -> u64 {
        debug_assert!(bytes > 0.0);
        self.advance(now);
        let seq = self.next_join_seq;
        self.next_join_seq += 1;
        self.flows.insert(
            request,
            FlowRec {
                total: bytes,
                finish_virt: self.virt + bytes,
                seq,
            },
        );
        self.version += 1;
        self.version
    }

    /// Remove a transfer without completing it (cancellation). Returns the
    /// bytes it still had to go, or None if the request is not on this link.
    pub fn leave(&mut self, now: f64, request: u64) -> Option<f64> {
        self.advance(now);
        let rec = self.flows.remove(&request)?;
        self.version += 1;
        Some((rec.finish_virt - self.virt).clamp(0.0, rec.total))
    }

    /// Bytes still to transfer for `request` at time `now`.
    pub fn remaining_at(&self, now: f64, request: u64) -> Option<f64> {
        let rec = self.flows.get(&request)?;
        Some((rec.finish_virt - self.virt_at(now)).clamp(0.0, rec.total))
    }

    fn min_flow(&self) -> Option<(u64, FlowRec)> {
        self.flows
            .iter()
            .min_by(|a, b| {
                a.1.finish_virt
                    .partial_cmp(&b.1.finish_virt)
                    .expect("finite virtual positions")
                    .then(a.1.seq.cmp(&b.1.seq))
            })
            .map(|(&id, &rec)| (id, rec))
    }

    /// When the earliest active transfer will finish, given no further
    /// membership changes.
    pub fn next_completion(&self, now: f64) -> Option<f64> {
        let (_, rec) = self.min_flow()?;
        let gap = (rec.finish_virt - self.virt_at(now)).max(0.0);
        Some(now + gap * self.flows.len() as f64 / self.capacity)
    }

    /// Handle a completion event scheduled under `event_version`.
    pub fn on_transfer_done(&mut self, now: f64, event_version: u64) -> TransferEvent {
        if event_version != self.version {
            return TransferEvent::Stale;
        }
        self.advance(now);
        let (request, rec) = self
            .min_flow()
            .expect("a matching completion event implies an active flow");
        // Snap to the exact finish position to keep later flows from
        // inheriting rounding drift.
        self.virt = self.virt.max(rec.finish_virt);
        self.flows.remove(&request);
        self.version += 1;
        TransferEvent::Completed {
            request,
            bytes: rec.total,
        }
    }
}

/// Run one link by itself: transfers join at the given (time, bytes) points
/// and completions fire as they come due. Flow i of `joins` is request id i.
/// Returns (request, completion time) in completion order. This is the
/// event-driven side of the link validation tests.
pub fn drive_standalone(capacity: f64, joins: &[(f64, f64)]) -> Vec<(u64, f64)> {
    let mut order: Vec<usize> = (0..joins.len()).collect();
    order.sort_by(|&a, &b| {
        joins[a]
            .0
            .partial_cmp(&joins[b].0)
            .expect("finite join times")
            .then(a.cmp(&b))
    });

    let mut link = ServerLink::new(capacity);
    let mut done = Vec::new();
    let mut next_join = 0usize;
    let mut scheduled: Option<(f64, u64)> = None;
    loop {
        let join_time = order.get(next_join).map(|&i| joins[i].0);
        let take_completion = match (scheduled, join_time) {
            (Some((tc, _)), Some(tj)) => tc <= tj,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        if take_completion {
            let (now, version) = scheduled.unwrap();
            if let TransferEvent::Completed { request, .. } = link.on_transfer_done(now, version) {
                done.push((request, now));
            }
            scheduled = link.next_completion(now).map(|t| (t, link.version()));
        } else {
            let idx = order[next_join];
            next_join += 1;
            let (now, bytes) = joins[idx];
            link.join(now, idx as u64, bytes);
            scheduled = link.next_completion(now).map(|t| (t, link.version()));
        }
    }
    done
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(actual: f64, expected: f64) {
        assert!(
            (actual - expected).abs() <= 1e-9,
            "expected {expected}, got {actual}"
        );
    }

    #[test]
    fn symmetric_flows_share_equally() {
        // Two 100-byte transfers from t=0 on a 100 B/s link: each runs at
        // 50 B/s and both finish at t=2.
        let done = drive_standalone(100.0, &[(0.0, 100.0), (0.0, 100.0)]);
        assert_eq!(done.len(), 2);
        assert_close(done[0].1, 2.0);
        assert_close(done[1].1, 2.0);
    }

    #[test]
    fn staggered_flows_match_hand_trace() {
        // 150 B at t=0 and t=1 on 100 B/s: flow 0 moves 100 B alone in
        // [0,1), both share 50 B/s in [1,2), flow 1 finishes alone at t=3.
        let done = drive_standalone(100.0, &[(0.0, 150.0), (1.0, 150.0)]);
        assert_eq!(done.len(), 2);
        assert_eq!(done[0].0, 0);
        assert_close(done[0].1, 2.0);
        assert_eq!(done[1].0, 1);
        assert_close(done[1].1, 3.0);
    }

    #[test]
    fn single_flow_runs_at_full_capacity() {
        let done = drive_standalone(100.0, &[(0.0, 1000.0)]);
        assert_eq!(done.len(), 1);
        assert_close(done[0].1, 10.0);
    }

    #[test]
    fn stale_events_are_ignored() {
        let mut link = ServerLink::new(100.0);
        let v1 = link.join(0.0, 1, 100.0);
        let _v2 = link.join(0.5, 2, 100.0);
        assert_eq!(link.on_transfer_done(1.0, v1), TransferEvent::Stale);
        assert_eq!(link.active_flows(), 2);
    }

    #[test]
    fn leave_reports_remaining_bytes() {
        let mut link = ServerLink::new(100.0);
        link.join(0.0, 1, 100.0);
        let remaining = link.leave(0.5, 1).unwrap();
        assert_close(remaining, 50.0);
        assert_eq!(link.active_flows(), 0);
    }

    #[test]
    fn remaining_respects_sharing() {
        let mut link = ServerLink::new(100.0);
        link.join(0.0, 1, 100.0);
        link.join(0.0, 2, 100.0);
        assert_close(link.remaining_at(1.0, 1).unwrap(), 50.0);
    }

    #[test]
    fn busy_link_transfers_exactly_capacity() {
        // Overlapping joins keep the link busy from t=0 until the last
        // completion, so makespan == total bytes / capacity.
        let joins: Vec<(f64, f64)> = (0..6).map(|i| (0.1 * f64::from(i), 120.0)).collect();
        let done = drive_standalone(100.0, &joins);
        let last = done.iter().map(|&(_, t)| t).fold(0.0, f64::max);
        assert_close(last, 6.0 * 120.0 / 100.0);
    }
}
