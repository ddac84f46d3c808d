//! HTTP reverse-proxy balancer. Direct routing is not possible from user
//! space, so live balancers relay responses (Proxy mode) and the counters
//! make the difference visible.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use gslb_core::balancer::{BalancerNode, DispatchError};
use gslb_core::model::{BackendId, ClusterSpec};

use crate::http::{read_request_head, write_response};
use crate::service::ServiceHandle;
use crate::WireError;

/// State shared by every balancer of one application: the cluster (health
/// and connection counts live here) and the balancer nodes themselves.
pub struct AppShared {
    pub app_id: String,
    pub cluster: ClusterSpec,
    pub balancers: Vec<BalancerNode>,
    pub backend_addrs: BTreeMap<BackendId, SocketAddr>,
}

pub type SharedApp = Arc<Mutex<AppShared>>;

const BACKEND_CONNECT_TIMEOUT: Duration = Duration::from_millis(500);

/// Serve balancer `balancer_idx` of `app` on `listen`.
pub fn serve_proxy(
    app: SharedApp,
    balancer_idx: usize,
    listen: &str,
    epoch: Instant,
) -> Result<ServiceHandle, WireError> {
    serve_proxy_on(app, balancer_idx, crate::service::bind(listen)?, epoch)
}

/// Serve a proxy on an already-bound listener (lets the caller learn the
/// actual address before wiring the balancer in).
pub fn serve_proxy_on(
    app: SharedApp,
    balancer_idx: usize,
    listener: std::net::TcpListener,
    epoch: Instant,
) -> Result<ServiceHandle, WireError> {
    let name = {
        let shared = app.lock().expect("app lock");
        format!("balancer-{}-{balancer_idx}", shared.app_id)
    };
    let request_ids = Arc::new(AtomicU64::new(0));
    crate::service::spawn_tcp_service_on(name, listener, move |mut stream: TcpStream| {
        handle_client(&app, balancer_idx, &request_ids, epoch, &mut stream);
    })
}

fn handle_client(
    app: &SharedApp,
    balancer_idx: usize,
    request_ids: &AtomicU64,
    epoch: Instant,
    stream: &mut TcpStream,
) {
    let head = match read_request_head(stream) {
        Ok(head) => head,
        Err(_) => {
            let _ = write_response(stream, 400, "Bad Request", b"bad request\n");
            return;
        }
    };
    if head.method != "GET" {
        let _ = write_response(stream, 405, "Method Not Allowed", b"GET only\n");
        return;
    }
    let source = stream
        .peer_addr()
        .map(|a| a.ip().to_string())
        .unwrap_or_else(|_| "unknown".to_string());
    let request_id = request_ids.fetch_add(1, Ordering::SeqCst);
    let now = epoch.elapsed().as_secs_f64();

    // Admission, pick, and connection increment happen under one lock.
    let dispatched = {
        let mut shared = app.lock().expect("app lock");
        let AppShared {
            cluster,
            balancers,
            backend_addrs,
            ..
        } = &mut *shared;
        let balancer = &mut balancers[balancer_idx];
        balancer.note_arrival(head.wire_bytes);
        if !balancer.try_admit(now) {
            balancer.note_rejected();
            Err(DispatchError::Overloaded)
        } else {
            balancer
                .dispatch(cluster, request_id, &source, head.wire_bytes, now)
                .map(|assignment| {
                    let addr = backend_addrs[&assignment.backend_id];
                    (assignment.backend_id, addr)
                })
        }
    };
    let (backend_id, backend_addr) = match dispatched {
        Ok(target) => target,
        Err(DispatchError::Overloaded) => {
            let _ = write_response(stream, 503, "Service Unavailable", b"overloaded\n");
            return;
        }
        Err(_) => {
            let _ = write_response(stream, 503, "Service Unavailable", b"no healthy backend\n");
            return;
        }
    };

    match fetch_from_backend(backend_addr, &head.path) {
        Ok(raw) => {
            // Relay the backend's bytes verbatim, then account the
            // completion; the client sees EOF only after the counters moved.
            let relayed = stream.write_all(&raw).and_then(|_| stream.flush());
            let mut shared = app.lock().expect("app lock");
            let AppShared { cluster, balancers, .. } = &mut *shared;
            if relayed.is_ok() {
                let _ = balancers[balancer_idx].complete(cluster, request_id);
            } else {
                let _ = balancers[balancer_idx].complete_failed(cluster, request_id);
            }
        }
        Err(_) => {
            {
                let mut shared = app.lock().expect("app lock");
                let AppShared { cluster, balancers, .. } = &mut *shared;
                let _ = balancers[balancer_idx].complete_failed(cluster, request_id);
                // A connect failure is evidence for the health accounting.
                balancers[balancer_idx].note_backend_failure(cluster, backend_id);
            }
            let _ = write_response(stream, 502, "Bad Gateway", b"backend unreachable\n");
        }
    }
}

/// Forward the request and collect the backend's entire response.
fn fetch_from_backend(addr: SocketAddr, path: &str) -> Result<Vec<u8>, WireError> {
    let mut upstream = TcpStream::connect_timeout(&addr, BACKEND_CONNECT_TIMEOUT)
        .map_err(|e| WireError::Io(format!("backend connect {addr}: {e}")))?;
    upstream
        .set_read_timeout(Some(Duration::from_secs(10)))
        .map_err(|e| WireError::Io(e.to_string()))?;
    upstream
        .write_all(format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").as_bytes())
        .and_then(|_| upstream.flush())
        .map_err(|e| WireError::Io(format!("backend send: {e}")))?;
    let mut raw = Vec::new();
    upstream
        .read_to_end(&mut raw)
        .map_err(|e| WireError::Io(format!("backend read: {e}")))?;
    if raw.is_empty() {
        return Err(WireError::Protocol("backend sent nothing".to_string()));
    }
    Ok(raw)
}
