//! Reference fluid integrator for validating the event-driven link model.
//!
//! Advances a single shared link in fixed 1 ms steps, draining every active
//! transfer at capacity/n. Step boundaries are additionally cut at arrival
//! instants, and completions inside a step are resolved exactly (the
//! crossing time at the current rate is computed, all flows are drained to
//! that point, and the rest of the step continues with the smaller flow
//! set). This shares no code or state with [`super::link::ServerLink`].

/// Fixed integration step, one millisecond.
pub const STEP_S: f64 = 1e-3;

/// Bytes below which a transfer counts as finished; covers accumulated
/// float noise without affecting millisecond-scale results.
const DONE_EPS_BYTES: f64 = 1e-6;

/// Completion time of each transfer on one shared link, indexed like
/// `arrivals`. `arrivals[i] = (join time, bytes)`; joins need not be sorted.
pub fn fluid_completion_times(capacity: f64, arrivals: &[(f64, f64)]) -> Vec<f64> {
    assert!(capacity > 0.0);
    let mut completions = vec![f64::NAN; arrivals.len()];
    if arrivals.is_empty() {
        return completions;
    }

    let mut order: Vec<usize> = (0..arrivals.len()).collect();
    order.sort_by(|&a, &b| {
        arrivals[a]
            .0
            .partial_cmp(&arrivals[b].0)
            .expect("finite arrival times")
            .then(a.cmp(&b))
    });

    let mut active: Vec<(usize, f64)> = Vec::new(); // (flow index, remaining bytes)
    let mut next_arrival = 0usize;
    let mut now = arrivals[order[0]].0;

    while next_arrival < order.len() || !active.is_empty() {
        // Admit everything due now.
        while next_arrival < order.len() && arrivals[order[next_arrival]].0 <= now {
            let idx = order[next_arrival];
            active.push((idx, arrivals[idx].1));
            next_arrival += 1;
        }
        if active.is_empty() {
            // Idle gap: jump to the next arrival.
            now = arrivals[order[next_arrival]].0;
            continue;
        }

        // One fixed step, cut short at the next arrival instant.
        let mut step_end = now + STEP_S;
        if next_arrival < order.len() {
            step_end = step_end.min(arrivals[order[next_arrival]].0);
        }

        // Drain within [now, step_end], resolving completions exactly.
        while !active.is_empty() && now < step_end {
            let rate = capacity / active.len() as f64;
            let min_remaining = active
                .iter()
                .map(|&(_, r)| r)
                .fold(f64::INFINITY, f64::min);
            let crossing = now + min_remaining / rate;
            let until = crossing.min(step_end);
            let drained = rate * (until - now);
            for entry in active.iter_mut() {
                entry.1 -= drained;
            }
            now = until;
            active.retain(|&(idx, remaining)| {
                if remaining <= DONE_EPS_BYTES {
                    completions[idx] = now;
                    false
                } else {
                    true
                }
            });
        }
    }
    completions
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(actual: f64, expected: f64) {
        assert!(
            (actual - expected).abs() <= 1e-9 + 1e-9 * expected.abs(),
            "expected {expected}, got {actual}"
        );
    }

    #[test]
    fn single_transfer() {
        let done = fluid_completion_times(100.0, &[(0.0, 1000.0)]);
        assert_close(done[0], 10.0);
    }

    #[test]
    fn symmetric_pair() {
        let done = fluid_completion_times(100.0, &[(0.0, 100.0), (0.0, 100.0)]);
        assert_close(done[0], 2.0);
        assert_close(done[1], 2.0);
    }

    #[test]
    fn staggered_pair() {
        let done = fluid_completion_times(100.0, &[(0.0, 150.0), (1.0, 150.0)]);
        assert_close(done[0], 2.0);
        assert_close(done[1], 3.0);
    }

    #[test]
    fn idle_gap_between_transfers() {
        let done = fluid_completion_times(100.0, &[(0.0, 50.0), (5.0, 50.0)]);
        assert_close(done[0], 0.5);
        assert_close(done[1], 5.5);
    }
}
