//! Engines that run the lease protocol on a live host.
//!
//! The state machines in `leaseguard-core` are pure: they map one state and
//! one input to the next state. This crate adds the loop around them — when
//! to read the trusted counter, when to send a request, how long to wait for
//! a reply, what to do when the timer epoch ends mid-wait — and produces a
//! structured event log of everything it does.
//!
//! Both engines are generic over three capabilities:
//!
//! * [`HostHardware`] — the trusted counter plus the ability to park the
//!   host and to read a cheap local timestamp,
//! * [`leaseguard_wire::Endpoint`] — message transport,
//! * [`leaseguard_core::AtomicSection`] (holder only) — the all-or-nothing
//!   execution region for guarded submissions.
//!
//! The same engine code therefore runs over real UDP with the OS clock and
//! inside the deterministic simulator with a scripted clock; nothing in this
//! crate knows which one it is talking to.

mod events;
mod granter;
mod holder;
mod host;

use leaseguard_core::{HardwareView, HostId, LeaseId, Nanos, TimerFault};
use leaseguard_core::{FreqCheckConfig, ProtocolError};
use thiserror::Error;

pub use events::{EventKind, EventSink, JsonLinesLog, LogEvent, NullSink};
pub use granter::{GranterCounters, GranterEngine};
pub use holder::{HolderCounters, HolderEngine, RenewOutcome};
pub use host::MonotonicHardware;
pub use leaseguard_wire::{Endpoint, WireError};

/// Hardware surface an engine needs beyond the trusted counter itself.
pub trait HostHardware: HardwareView {
    /// Parks the host for roughly `ns`. On a real host this sleeps; in the
    /// simulator it advances virtual time. Engines call this between polls,
    /// so simulated waiting costs no wall-clock time.
    fn idle(&mut self, ns: Nanos);

    /// Local timestamp in nanoseconds from the host's own clock, used to
    /// stamp requests and log entries. Unlike `read_counter` this never
    /// consumes the interruption flag, so it is safe to call anywhere.
    fn now(&mut self) -> Nanos;
}

/// Knobs for the engine loops, as opposed to the lease terms themselves
/// (which live in [`leaseguard_core::LeaseConfig`]).
#[derive(Debug, Clone)]
pub struct EnginePolicy {
    /// Upper bound assumed for one-way message delivery. A request is
    /// abandoned after twice this (request out, reply back).
    pub max_delivery_delay: Nanos,
    /// How long to park between transport polls while waiting for a reply.
    pub poll_interval: Nanos,
    /// Renewal attempts per `update_renew_lease` call before giving up.
    pub max_request_retries: u32,
    /// Renew-and-retry rounds for one guarded submission before giving up.
    pub max_submit_retries: u32,
    /// When false, counter reads trust the raw deltas and interruptions are
    /// never surfaced — the behavior of an ordinary lease client. Safety
    /// then rests entirely on the clock being honest.
    pub interrupt_detection: bool,
    /// Run the counter-rate check whenever an accounting epoch ends.
    pub freq_check_on_epoch: bool,
    /// Parameters for that check.
    pub freq_check: FreqCheckConfig,
}

impl Default for EnginePolicy {
    fn default() -> Self {
        Self {
            max_delivery_delay: 25_000_000,
            poll_interval: 1_000_000,
            max_request_retries: 16,
            max_submit_retries: 16,
            interrupt_detection: true,
            freq_check_on_epoch: true,
            freq_check: FreqCheckConfig::default(),
        }
    }
}

impl EnginePolicy {
    /// How long a holder waits for a reply before abandoning the attempt.
    pub fn response_timeout(&self) -> Nanos {
        2 * self.max_delivery_delay
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if self.max_delivery_delay == 0 {
            return Err("max_delivery_delay must be positive");
        }
        if self.poll_interval == 0 {
            return Err("poll_interval must be positive");
        }
        if self.freq_check.validate().is_err() {
            return Err("frequency check configuration invalid");
        }
        Ok(())
    }
}

/// Terminal or transport-level failures surfaced by the engines.
///
/// A [`EngineError::TimerFailed`] is sticky: once the trusted counter has
/// misbehaved in a way detection cannot explain, every later lease operation
/// on the engine fails with the same fault rather than limping on.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error("trusted timer failed: {0}")]
    TimerFailed(#[from] TimerFault),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("protocol state desynchronized: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("invalid engine policy: {0}")]
    BadPolicy(&'static str),
}

/// Derives a lease identifier unique per (host, sequence) pair, so several
/// holders can mint ids without coordinating.
pub fn lease_id_for(host: HostId, seq: u32) -> LeaseId {
    ((host as u64) << 32) | seq as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_timeout_is_twice_one_way_delay() {
        let policy = EnginePolicy {
            max_delivery_delay: 7,
            ..EnginePolicy::default()
        };
        assert_eq!(policy.response_timeout(), 14);
    }

    #[test]
    fn lease_ids_distinct_across_hosts_and_sequences() {
        let mut seen = std::collections::BTreeSet::new();
        for host in [1u32, 2, 9, u32::MAX] {
            for seq in [0u32, 1, 2, u32::MAX] {
                assert!(seen.insert(lease_id_for(host, seq)));
            }
        }
    }
}
