//! Finite-state checking of the lease protocol, three ways.
//!
//! [`check_safety`] enumerates every reachable joint state of one granter,
//! a few holders, a message soup, and (optionally) a clock-retuning
//! attacker, within a bounded horizon, and verifies that no holder ever
//! believes in a lease the granter is not covering. [`check_liveness`]
//! analyses the same graph under fair scheduling and verifies the two
//! bounded eventually-properties: requests get granted, and fresh grants
//! take effect at an undisturbed holder. Both produce replayable,
//! renderable counterexamples when they fail.
//!
//! [`replay_trace`] closes the loop with the rest of the workspace: it
//! re-checks traces produced by `leaseguard-sim` — which runs the real
//! engines — against the model's transition guards, so the abstraction and
//! the implementation are held to each other's behavior rather than
//! drifting apart silently.

mod conform;
mod explore;
mod state;

pub use conform::{
    check_conformance, replay_trace, ConformanceReport, Divergence, ReplayStats,
};
pub use explore::{
    check_liveness, check_safety, Counterexample, CounterexampleTail, LivenessVerdict,
    ModelError, SafetyVerdict,
};
pub use state::{
    type_ok, valid_lease, Action, Fairness, GrantRecord, GranterVars, HolderVars, LivenessGoal,
    ModelConfig, ModelState, Msg, INF, SCALE,
};
