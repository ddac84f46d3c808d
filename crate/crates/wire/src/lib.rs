//! Live loopback realization of the two-level deployment: a line-protocol
//! resolver pair, HTTP reverse-proxy balancers, static-content backends
//! with distinct bodies, health probing, and a worker-thread load generator
//! that plugs into the shared bench drivers.

pub mod backend;
pub mod client;
pub mod http;
pub mod livesys;
pub mod probe;
pub mod proxy;
pub mod resolver;
pub mod service;
pub mod stack;

use std::fmt;

pub use backend::{serve_backend, StaticSite};
pub use client::{backend_token, http_get, live_resolve_with_failover, DEFAULT_RESOLVE_TIMEOUT};
pub use livesys::{LiveBenchConfig, LiveSystem, StatsSource};
pub use probe::live_probe_loop;
pub use proxy::{serve_proxy, AppShared, SharedApp};
pub use resolver::serve_resolver;
pub use service::{ServiceHandle, TaskHandle};
pub use stack::{
    control_command, serve_control, LiveStack, StackApp, StackBackend, StackBalancer, StackConfig,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireError {
    /// A listen address could not be bound; names the address.
    BindFailure(String, String),
    Io(String),
    Protocol(String),
    AllSelectorsDown,
}

impl fmt::Display for WireError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WireError::BindFailure(addr, err) => write!(f, "cannot bind {addr}: {err}"),
            WireError::Io(msg) => write!(f, "io: {msg}"),
            WireError::Protocol(msg) => write!(f, "protocol: {msg}"),
            WireError::AllSelectorsDown => write!(f, "no resolver answered"),
        }
    }
}

impl std::error::Error for WireError {}
