//! Two-level load-balancing laboratory.
//!
//! A level-1 selector rotates each application's requests over its
//! registered balancer addresses (with a master/slave pair for
//! availability); level-2 balancers schedule requests onto web backends
//! with pluggable algorithms. The `simnet` module runs the whole topology
//! under a deterministic discrete-event clock; `bench` drives it (or the
//! live loopback stack from the companion crate) with closed-loop
//! workloads and builds the result tables.

pub mod balancer;
pub mod bench;
pub mod model;
pub mod selector;
pub mod simnet;

pub use balancer::{BalancerNode, DispatchError, ForwardMode, HealthProbeConfig, TrafficCounters};
pub use model::{Backend, BackendId, ClusterSpec, Health, ModelError, SchedulerKind};
pub use selector::{SelectorDeployment, SelectorError, SelectorNode};
pub use simnet::{SimConfig, SimWorld};
