//! Deterministic simulation of lease engines under an adversarial host.
//!
//! A run takes a [`Scenario`] (a TOML file of world, lease, hardware,
//! network, workload and adversary sections) and a seed, and produces a
//! [`Trace`] of everything that happened on one true timeline. The same
//! scenario and seed always produce a byte-identical trace.
//!
//! The adversary owns the machine below the trusted counter: it schedules
//! preemptions, and while a host is preempted — only then — it may retune
//! the counter's rate within its declared budget or overwrite the counter's
//! value. It also owns the network: delaying and dropping messages needs no
//! preemption. What it cannot do is forge protocol messages or reach into
//! engine state.
//!
//! The engines under test are the real ones from `leaseguard-runtime`,
//! compiled unchanged; only the hardware, transport and section primitives
//! they talk to are simulated. [`check_trace`] then judges a finished run
//! against world truth, and [`metrics`] condenses it into rates the
//! experiment drivers consume.

mod check;
pub mod clock;
mod metrics;
mod scenario;
mod trace;
mod world;

pub use check::{check_trace, Verdict};
pub use metrics::{metrics, GranterMetrics, HolderMetrics, MetricsReport};
pub use scenario::{
    AdversarySection, EngineSection, HardwareSection, LeaseSection, MsgRule, MutationSection,
    NetworkSection, Scenario, ScheduledCounter, ScheduledFreq, ScheduledInterrupt,
    WorkloadSection, WorldSection,
};
pub use trace::{Trace, TraceBody, TraceEvent};
pub use world::{
    run, run_until_horizon, HorizonReached, HostCtx, HostScript, SimEndpoint, SimHandle,
    SimHardware, SimSection, SimSink, WorldBuilder,
};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("bad scenario: {0}")]
    BadScenario(String),
    #[error("host script panicked: {0}")]
    HostPanic(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
