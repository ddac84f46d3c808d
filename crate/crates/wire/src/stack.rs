//! Builds and owns a whole live deployment: resolver pair, one proxy per
//! balancer, static backends, probe loops, plus a line-protocol control
//! port (PING / KILL <component> / STATS / DOWN) so separate processes can
//! drive the availability tests.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use gslb_core::balancer::{BalancerNode, ForwardMode, HealthProbeConfig};
use gslb_core::bench::BalancerSnapshot;
use gslb_core::model::{Backend, BackendId, ClusterSpec, SchedulerKind};
use gslb_core::selector::{Role, SelectorNode};

use crate::backend::{serve_backend, StaticSite};
use crate::probe::live_probe_loop;
use crate::proxy::{serve_proxy_on, AppShared, SharedApp};
use crate::resolver::serve_resolver;
use crate::service::{ServiceHandle, TaskHandle};
use crate::WireError;

#[derive(Debug, Clone)]
pub struct StackBackend {
    pub id: BackendId,
    pub addr: String,
    pub weight: u32,
    pub capacity: u64,
    pub page_size: u64,
}

#[derive(Debug, Clone)]
pub struct StackBalancer {
    pub vip: String,
    pub algorithm: SchedulerKind,
    pub forward_capacity_rps: f64,
}

#[derive(Debug, Clone)]
pub struct StackApp {
    pub app_id: String,
    pub backends: Vec<StackBackend>,
    pub balancers: Vec<StackBalancer>,
}

#[derive(Debug, Clone)]
pub struct StackConfig {
    pub master: String,
    pub slave: String,
    pub apps: Vec<StackApp>,
    pub probe: HealthProbeConfig,
}

/// A running deployment. Killing a component stops its listener; everything
/// else keeps serving.
pub struct LiveStack {
    services: BTreeMap<String, ServiceHandle>,
    tasks: Vec<TaskHandle>,
    apps: Vec<SharedApp>,
    /// (component name, bound address) in print order.
    addresses: Vec<(String, SocketAddr)>,
}

impl LiveStack {
    pub fn launch(config: &StackConfig) -> Result<LiveStack, WireError> {
        let epoch = Instant::now();
        let mut master = SelectorNode::new("selector-master", Role::Master);
        let mut slave = SelectorNode::new("selector-slave", Role::Slave);
        let mut services = BTreeMap::new();
        let mut tasks = Vec::new();
        let mut apps = Vec::new();
        let mut addresses = Vec::new();

        for app_cfg in &config.apps {
            // Backends come up first so their actual addresses (ephemeral
            // ports included) can be wired into the cluster.
            let mut backend_handles = Vec::new();
            let mut backend_addrs = BTreeMap::new();
            let mut backends = Vec::new();
            for b in &app_cfg.backends {
                let site = StaticSite::new(b.id, b.page_size);
                let handle = serve_backend(site, &b.addr)?;
                backend_addrs.insert(b.id, handle.addr);
                backends.push(
                    Backend::new(b.id, handle.addr.to_string(), b.weight, b.capacity, b.page_size)
                        .map_err(|e| WireError::Protocol(e.to_string()))?,
                );
                backend_handles.push((format!("backend-{}-{}", app_cfg.app_id, b.id), handle));
            }
            let cluster = ClusterSpec::new(app_cfg.app_id.clone(), backends)
                .map_err(|e| WireError::Protocol(e.to_string()))?;

            // Pre-bind the proxies to learn their vips, then build the
            // balancer nodes against those addresses.
            let mut proxy_listeners = Vec::new();
            let mut balancers = Vec::new();
            for bal in &app_cfg.balancers {
                let listener = crate::service::bind(&bal.vip)?;
                let vip = listener
                    .local_addr()
                    .map_err(|e| WireError::Io(e.to_string()))?
                    .to_string();
                let mut node = BalancerNode::new(
                    vip.clone(),
                    bal.algorithm,
                    bal.forward_capacity_rps,
                    ForwardMode::Proxy,
                    &cluster,
                )
                .map_err(|e| WireError::Protocol(e.to_string()))?;
                node.probe_cfg = config.probe;
                master
                    .register_balancer(&app_cfg.app_id, &vip)
                    .and_then(|_| slave.register_balancer(&app_cfg.app_id, &vip))
                    .map_err(|e| WireError::Protocol(e.to_string()))?;
                balancers.push(node);
                proxy_listeners.push(listener);
            }

            let shared: SharedApp = Arc::new(Mutex::new(AppShared {
                app_id: app_cfg.app_id.clone(),
                cluster,
                balancers,
                backend_addrs,
            }));

            for (i, listener) in proxy_listeners.into_iter().enumerate() {
                let name = format!("balancer-{}-{i}", app_cfg.app_id);
                let handle = serve_proxy_on(Arc::clone(&shared), i, listener, epoch)?;
                addresses.push((name.clone(), handle.addr));
                services.insert(name, handle);
            }
            for (name, handle) in backend_handles {
                addresses.push((name.clone(), handle.addr));
                services.insert(name, handle);
            }
            tasks.push(live_probe_loop(Arc::clone(&shared), config.probe));
            apps.push(shared);
        }

        let master_handle =
            serve_resolver("selector-master", Arc::new(Mutex::new(master)), &config.master)?;
        let slave_handle =
            serve_resolver("selector-slave", Arc::new(Mutex::new(slave)), &config.slave)?;
        addresses.insert(0, ("selector-master".to_string(), master_handle.addr));
        addresses.insert(1, ("selector-slave".to_string(), slave_handle.addr));
        services.insert("selector-master".to_string(), master_handle);
        services.insert("selector-slave".to_string(), slave_handle);

        Ok(LiveStack {
            services,
            tasks,
            apps,
            addresses,
        })
    }

    pub fn addresses(&self) -> &[(String, SocketAddr)] {
        &self.addresses
    }

    pub fn apps(&self) -> &[SharedApp] {
        &self.apps
    }

    pub fn component_addr(&self, name: &str) -> Option<SocketAddr> {
        self.services.get(name).map(|s| s.addr)
    }

    /// Stop one named component (e.g. "selector-master").
    pub fn kill(&mut self, component: &str) -> Result<(), WireError> {
        match self.services.get_mut(component) {
            Some(service) => {
                service.stop();
                Ok(())
            }
            None => Err(WireError::Protocol(format!("unknown component {component}"))),
        }
    }

    /// Balancer counter snapshots across all apps.
    pub fn snapshots(&self) -> Vec<BalancerSnapshot> {
        self.apps
            .iter()
            .flat_map(|app| {
                let shared = app.lock().expect("app lock");
                shared
                    .balancers
                    .iter()
                    .map(|b| BalancerSnapshot {
                        vip: b.vip.clone(),
                        algorithm: b.kind.label().to_string(),
                        mode: b.mode,
                        counters: b.counters().clone(),
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn shutdown(mut self) {
        for task in &mut self.tasks {
            task.stop();
        }
        for service in self.services.values_mut() {
            service.stop();
        }
    }
}

/// Serve the control protocol on `listen`, blocking until DOWN arrives.
/// One command line per connection.
pub fn serve_control(mut stack: LiveStack, listen: &str) -> Result<(), WireError> {
    let listener = TcpListener::bind(listen)
        .map_err(|e| WireError::BindFailure(listen.to_string(), e.to_string()))?;
    for stream in listener.incoming() {
        let Ok(mut stream) = stream else { continue };
        let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
        let mut line = String::new();
        if BufReader::new(&mut stream).read_line(&mut line).is_err() {
            continue;
        }
        let line = line.trim();
        let (reply, down) = match line {
            "PING" => ("OK\n".to_string(), false),
            "STATS" => {
                let json = serde_json::to_string(&stack.snapshots())
                    .unwrap_or_else(|e| format!("\"stats error: {e}\""));
                (format!("{json}\n"), false)
            }
            "DOWN" => ("OK\n".to_string(), true),
            other => match other.strip_prefix("KILL ") {
                Some(component) => match stack.kill(component.trim()) {
                    Ok(()) => ("OK\n".to_string(), false),
                    Err(e) => (format!("ERR {e}\n"), false),
                },
                None => ("ERR unknown command\n".to_string(), false),
            },
        };
        let _ = stream.write_all(reply.as_bytes());
        let _ = stream.flush();
        if down {
            stack.shutdown();
            return Ok(());
        }
    }
    Ok(())
}

/// Send one control command and return the reply line.
pub fn control_command(addr: &str, command: &str, timeout: Duration) -> Result<String, WireError> {
    let sock: SocketAddr = addr
        .parse()
        .map_err(|_| WireError::Protocol(format!("bad control address {addr}")))?;
    let mut stream = TcpStream::connect_timeout(&sock, timeout)
        .map_err(|e| WireError::Io(format!("control connect {addr}: {e}")))?;
    stream
        .set_read_timeout(Some(timeout.max(Duration::from_secs(1))))
        .map_err(|e| WireError::Io(e.to_string()))?;
    stream
        .write_all(format!("{command}\n").as_bytes())
        .and_then(|_| stream.flush())
        .map_err(|e| WireError::Io(format!("control send: {e}")))?;
    let mut reply = String::new();
    BufReader::new(stream)
        .read_line(&mut reply)
        .map_err(|e| WireError::Io(format!("control read: {e}")))?;
    Ok(reply.trim_end_matches(['\r', '\n']).to_string())
}
