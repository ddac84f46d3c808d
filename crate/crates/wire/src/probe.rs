//! Periodic /health probing feeding the balancers' threshold accounting.

use std::time::Duration;

use gslb_core::balancer::HealthProbeConfig;
use gslb_core::model::BackendId;

use crate::client::http_get;
use crate::proxy::SharedApp;
use crate::service::{spawn_periodic, TaskHandle};

/// Probe every backend of `app` each interval and apply the results. One
/// loop per application: the first balancer's probe run flips health, the
/// siblings resync their scheduler state from the same transitions.
pub fn live_probe_loop(app: SharedApp, config: HealthProbeConfig) -> TaskHandle {
    let interval = Duration::from_secs_f64(config.interval_s);
    let probe_timeout = interval.min(Duration::from_millis(300));
    let name = {
        let shared = app.lock().expect("app lock");
        format!("probe-{}", shared.app_id)
    };
    spawn_periodic(&name, interval, move || {
        let targets: Vec<(BackendId, std::net::SocketAddr)> = {
            let shared = app.lock().expect("app lock");
            shared.backend_addrs.iter().map(|(&id, &addr)| (id, addr)).collect()
        };
        // Probe outside the lock; a dead backend costs a connect timeout.
        let results: Vec<(BackendId, bool)> = targets
            .into_iter()
            .map(|(id, addr)| {
                let ok = http_get(&addr.to_string(), "/health", probe_timeout)
                    .map(|resp| resp.status == 200)
                    .unwrap_or(false);
                (id, ok)
            })
            .collect();
        let mut shared = app.lock().expect("app lock");
        let crate::proxy::AppShared { cluster, balancers, .. } = &mut *shared;
        let mut iter = balancers.iter_mut();
        if let Some(first) = iter.next() {
            let transitions = first.probe_tick(cluster, &results);
            for sibling in iter {
                sibling.apply_pool_change(cluster, &transitions);
            }
        }
    })
}
