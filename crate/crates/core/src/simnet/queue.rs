//! Virtual clock and event queue. Events are totally ordered by
//! (time, insertion sequence); identical schedules replay identically.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use crate::model::BackendId;

/// What the simulator reacts to. `TransferDone` events carry the link
/// version they were computed for; events from before a membership change
/// are stale and ignored.
#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Arrival { request: u64 },
    ResolutionDone { request: u64 },
    DispatchDone { request: u64 },
    TransferDone { app: usize, backend: BackendId, version: u64 },
    ProbeTick { app: usize },
}

impl EventKind {
    fn log_tag(&self) -> (&'static str, u64) {
        match self {
            EventKind::Arrival { request } => ("arrival", *request),
            EventKind::ResolutionDone { request } => ("resolution_done", *request),
            EventKind::DispatchDone { request } => ("dispatch_done", *request),
            EventKind::TransferDone { backend, .. } => ("transfer_done", u64::from(*backend)),
            EventKind::ProbeTick { app } => ("probe_tick", *app as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

/// One processed event, kept for replay comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub time: f64,
    pub seq: u64,
    pub tag: &'static str,
    pub payload: u64,
}

struct HeapEntry(SimEvent);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.0.seq == other.0.seq
    }
}
impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want earliest (time, seq).
        other
            .0
            .time
            .partial_cmp(&self.0.time)
            .expect("event times are finite")
            .then(other.0.seq.cmp(&self.0.seq))
    }
}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Discrete-event engine core: time never moves backwards, pops come out in
/// (time, seq) order.
pub struct EventQueue {
    now: f64,
    next_seq: u64,
    heap: BinaryHeap<HeapEntry>,
    log: Vec<LogRecord>,
}

impl EventQueue {
    pub fn new() -> Self {
        EventQueue {
            now: 0.0,
            next_seq: 0,
            heap: BinaryHeap::new(),
            log: Vec::new(),
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.0.time)
    }

    /// Processed-event log, in pop order.
    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn schedule(&mut self, at: f64, kind: EventKind) -> Result<(), SimError> {
        if !at.is_finite() {
            return Err(SimError::TimeReversal { now: self.now, at });
        }
        if at < self.now {
            return Err(SimError::TimeReversal { now: self.now, at });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(HeapEntry(SimEvent { time: at, seq, kind }));
        Ok(())
    }

    /// Pop the next event and advance the clock to it.
    pub fn pop(&mut self) -> Option<SimEvent> {
        let event = self.heap.pop()?.0;
        self.now = event.time;
        let (tag, payload) = event.kind.log_tag();
        self.log.push(LogRecord {
            time: event.time,
            seq: event.seq,
            tag,
            payload,
        });
        Some(event)
    }

    /// Pop the next event only if it is due at or before `t_end`.
    pub fn pop_due(&mut self, t_end: f64) -> Option<SimEvent> {
        if self.peek_time()? <= t_end {
            self.pop()
        } else {
            None
        }
    }

    /// Drain every event due by `t_end` (in order), then advance the clock
    /// to `t_end`. With an empty queue this returns immediately.
    pub fn run_until(&mut self, t_end: f64) -> Vec<SimEvent> {
        let mut drained = Vec::new();
        while let Some(event) = self.pop_due(t_end) {
            drained.push(event);
        }
        if t_end > self.now {
            self.now = t_end;
        }
        drained
    }
}

impl Default for EventQueue {
    fn default() -> Self {
        EventQueue::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    /// Attempt to schedule an event in the past (or at a non-finite time).
    TimeReversal { now: f64, at: f64 },
    Config(String),
    SelfCheck(String),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::TimeReversal { now, at } => {
                write!(f, "cannot schedule at t={at} while the clock is at t={now}")
            }
            SimError::Config(msg) => write!(f, "simulation config: {msg}"),
            SimError::SelfCheck(msg) => write!(f, "self-check failed: {msg}"),
        }
    }
}

impl std::error::Error for SimError {}
