//! Deterministic discrete-event simulator: virtual clock and event queue,
//! processor-sharing backend links, and the simulated two-level deployment.

pub mod link;
pub mod oracle;
pub mod queue;
pub mod world;

pub use link::{drive_standalone, ServerLink, TransferEvent};
pub use oracle::fluid_completion_times;
pub use queue::{EventKind, EventQueue, LogRecord, SimError, SimEvent};
pub use world::{
    AppConfig, BackendConfig, BalancerConfig, Latencies, ResolveCache, SimConfig, SimWorld,
};
