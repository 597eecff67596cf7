//! Core of a lease primitive that stays safe on machines whose operator
//! controls scheduling and clocks.
//!
//! The crate is pure logic, split along the three trust boundaries:
//!
//! * [`protocol`] — holder and granter state machines: who may use a lease
//!   when, and how grant/extend/reject decisions are made.
//! * [`timer`] — interrupt-aware interval timekeeping and verification that
//!   the cycle counter still runs at an honest rate.
//! * [`txn`] — atomicity glue that makes "check the lease, then act" a
//!   single indivisible step.
//!
//! Transports, engines, simulators, and checkers live in sibling crates and
//! drive these functions; nothing here does I/O or reads a real clock.

pub mod protocol;
pub mod timer;
pub mod txn;

pub use protocol::{
    granter_on_interrupt, granter_on_resume, granter_process, granter_tick, holder_on_interrupt,
    holder_on_resume, holder_receive, holder_request, holder_tick, holder_timeout, EpochNumber,
    GrantDecision, GrantRecord, GranterPhase, GranterState, HolderPhase, HolderState, HostId,
    LeaseConfig, LeaseId, MessageKind, Nanos, ProtocolError, ProtocolMessage, ReceiveOutcome,
    PROTOCOL_VERSION,
};
pub use timer::{
    detection_probability, escape_bounds, probe_frequency, required_multiplier, verify_frequency,
    Advance, CounterRead, EpochAccount, FreqCheck, FreqCheckConfig, HardwareView, LatencyModel,
    RateProbe, TickRatio, TimerFault,
};
pub use txn::{
    protected_submit, AtomicSection, CommitOutcome, EffectBuffer, EffectSink, SectionToken,
    SubmitOutcome, UncontestedSection,
};
