//! Lease request/grant state machines for holders and the granter.
//!
//! A lease binds a resource to a single holder for a bounded time window.
//! Both sides run a countdown over time measured by their own trusted
//! interval timer (see [`crate::timer`]); no wall-clock agreement is
//! assumed. Safety comes from three rules that this module encodes:
//!
//! 1. The holder starts its countdown when it *sends* a request, not when
//!    the reply arrives, so messaging delay can only shorten the window the
//!    holder believes in.
//! 2. The granter holds every grant for `lease_term * granter_multiplier`,
//!    so an in-bounds clock error at the holder cannot stretch the holder's
//!    window past the granter's.
//! 3. Epoch numbers fence off anything that happened before an enclave
//!    interrupt: every interrupt/resume pair increments the holder's epoch,
//!    and replies carrying an older epoch (or an older request timestamp)
//!    are ignored.
//!
//! Everything here is a pure function from `(state, input)` to
//! `(state, output)`; the engines in the runtime crate own I/O, timing, and
//! retry policy.

use serde::{Deserialize, Serialize};

/// Host identifier carried in every message (4 bytes on the wire).
pub type HostId = u32;

/// Lease identifier, unique per granter.
pub type LeaseId = u64;

/// Interrupt-epoch counter. Starts at 1 and never decreases.
pub type EpochNumber = u64;

/// Durations and timestamps are nanoseconds of virtual or enclave time.
pub type Nanos = u64;

/// Wire protocol version; sealed frames bind it as associated data.
pub const PROTOCOL_VERSION: u8 = 0x01;

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

/// The three message kinds exchanged between holder and granter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    /// Holder asks for a fresh lease or an extension of the one it holds.
    ReqLease,
    /// Granter accepted the request; mirrors the request metadata.
    Granted,
    /// Granter refused (lease held by someone else, or stale metadata).
    NotGranted,
}

/// One protocol message. Replies mirror the `epoch_number` and `timestamp`
/// of the request they answer, which is what lets the holder pair them up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProtocolMessage {
    pub kind: MessageKind,
    /// The holder this message is from (requests) or for (replies).
    pub holder: HostId,
    pub lease_id: LeaseId,
    /// Holder's interrupt epoch at the time the request was sent.
    pub epoch_number: EpochNumber,
    /// Holder-local send time of the request this message belongs to.
    pub timestamp: Nanos,
    /// Granter-local send time of the reply; zero on requests.
    pub send_timestamp: Nanos,
}

impl ProtocolMessage {
    /// Builds a lease request. Requests never carry a responder timestamp.
    pub fn req_lease(
        holder: HostId,
        lease_id: LeaseId,
        epoch_number: EpochNumber,
        timestamp: Nanos,
    ) -> Self {
        ProtocolMessage {
            kind: MessageKind::ReqLease,
            holder,
            lease_id,
            epoch_number,
            timestamp,
            send_timestamp: 0,
        }
    }

    pub fn is_request(&self) -> bool {
        self.kind == MessageKind::ReqLease
    }

    pub fn is_reply(&self) -> bool {
        !self.is_request()
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Static parameters shared by a granter and its holders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaseConfig {
    /// Nominal lease term in nanoseconds.
    pub lease_term: Nanos,
    /// How much longer the granter keeps a grant alive than the nominal
    /// term. Must cover the worst tolerated clock-rate error; see
    /// [`crate::timer::required_multiplier`].
    pub granter_multiplier: f64,
    /// Bound on relative drift between honest clocks. The holder shortens
    /// its own countdown by this fraction.
    pub drift: f64,
    /// Fraction of the holder term at which renewal kicks in (e.g. 0.2
    /// renews once less than a fifth of the term remains).
    pub renew_fraction: f64,
}

impl Default for LeaseConfig {
    fn default() -> Self {
        LeaseConfig {
            lease_term: 10_000_000, // 10 ms
            granter_multiplier: 2.0,
            drift: 0.0,
            renew_fraction: 0.2,
        }
    }
}

impl LeaseConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.lease_term == 0 {
            return Err(ProtocolError::BadConfig("lease_term must be positive"));
        }
        if !(self.granter_multiplier >= 1.0) {
            return Err(ProtocolError::BadConfig("granter_multiplier must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.drift) {
            return Err(ProtocolError::BadConfig("drift must lie in [0, 1)"));
        }
        if !(self.renew_fraction > 0.0 && self.renew_fraction <= 1.0) {
            return Err(ProtocolError::BadConfig("renew_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Countdown the holder arms when it sends a request.
    pub fn holder_term(&self) -> Nanos {
        (self.lease_term as f64 * (1.0 - self.drift)).round() as Nanos
    }

    /// Countdown the granter arms when it installs or extends a grant.
    pub fn granter_term(&self) -> Nanos {
        (self.lease_term as f64 * self.granter_multiplier).round() as Nanos
    }

    /// Remaining-time threshold below which the holder renews.
    pub fn renew_threshold(&self) -> Nanos {
        (self.holder_term() as f64 * self.renew_fraction).round() as Nanos
    }
}

// ---------------------------------------------------------------------------
// Holder state machine
// ---------------------------------------------------------------------------

/// Holder lifecycle. Legal moves:
///
/// ```text
/// Created ──request──> Pending ──Granted──> ValidLease ──request──> Pending
///                        │  │                 │    │
///                        │  └─NotGranted/0──> │    └──interrupt──> Interrupted
///                        └──timeout──┐        │                        │
///                                    v        v                        v
///                                  Blocked <─(expiry via receive)   Blocked (resume, epoch+1)
///                                    └────────────request────────────> Pending
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HolderPhase {
    /// Fresh holder that has never asked for the lease.
    Created,
    /// Request sent, reply outstanding.
    Pending,
    /// Lease held; usable while `expire_timer > 0`.
    ValidLease,
    /// An enclave interrupt was detected and not yet resolved.
    Interrupted,
    /// No lease and no outstanding request; free to ask again.
    Blocked,
}

/// Holder-side view of one lease.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HolderState {
    pub host: HostId,
    pub lease_id: LeaseId,
    pub phase: HolderPhase,
    pub epoch_number: EpochNumber,
    /// Remaining holder-measured lease time; counts down from
    /// [`LeaseConfig::holder_term`] starting at request send.
    pub expire_timer: Nanos,
    /// Send timestamp of the most recent request; replies must mirror it.
    pub last_request_ts: Nanos,
}

impl HolderState {
    pub fn new(host: HostId, lease_id: LeaseId) -> Self {
        HolderState {
            host,
            lease_id,
            phase: HolderPhase::Created,
            epoch_number: 1,
            expire_timer: 0,
            last_request_ts: 0,
        }
    }

    /// True exactly when the lease may back an operation right now.
    pub fn lease_usable(&self) -> bool {
        self.phase == HolderPhase::ValidLease && self.expire_timer > 0
    }

    /// True when a usable lease is close enough to expiry to renew.
    pub fn wants_renewal(&self, cfg: &LeaseConfig) -> bool {
        self.phase == HolderPhase::ValidLease && self.expire_timer < cfg.renew_threshold()
    }
}

/// What [`holder_receive`] did with a reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReceiveOutcome {
    /// Reply matched the outstanding request and advanced the state.
    Applied,
    /// Reply was stale (old epoch, old request, or no request outstanding).
    Ignored,
}

/// Sends a lease request: arms the countdown at the send instant and moves
/// to `Pending`. Fresh requests and extensions share one code path; an
/// extension simply starts from `ValidLease` and reuses the current epoch.
pub fn holder_request(
    state: &HolderState,
    cfg: &LeaseConfig,
    now: Nanos,
) -> Result<(HolderState, ProtocolMessage), ProtocolError> {
    match state.phase {
        HolderPhase::Created | HolderPhase::Blocked | HolderPhase::ValidLease => {}
        HolderPhase::Interrupted => return Err(ProtocolError::RequestWhileInterrupted),
        HolderPhase::Pending => return Err(ProtocolError::RequestWhilePending),
    }
    let msg = ProtocolMessage::req_lease(state.host, state.lease_id, state.epoch_number, now);
    let next = HolderState {
        phase: HolderPhase::Pending,
        expire_timer: cfg.holder_term(),
        last_request_ts: now,
        ..*state
    };
    Ok((next, msg))
}

/// Applies a granter reply. Replies are ignored unless they answer the
/// holder's *latest* request: same epoch and same mirrored send timestamp.
/// Anything older belongs to a request whose countdown no longer governs
/// the lease, and acting on it could stretch validity past the granter's
/// window.
pub fn holder_receive(
    state: &HolderState,
    msg: &ProtocolMessage,
) -> Result<(HolderState, ReceiveOutcome), ProtocolError> {
    if !msg.is_reply() {
        return Err(ProtocolError::NotAReply);
    }
    if msg.lease_id != state.lease_id || msg.holder != state.host {
        return Err(ProtocolError::MisroutedReply);
    }
    if msg.epoch_number > state.epoch_number {
        // Replies mirror epochs we sent; a larger one cannot be ours.
        return Err(ProtocolError::ReplyFromFuture);
    }
    let answers_latest = state.phase == HolderPhase::Pending
        && msg.epoch_number == state.epoch_number
        && msg.timestamp == state.last_request_ts;
    if !answers_latest {
        return Ok((*state, ReceiveOutcome::Ignored));
    }
    let phase = match msg.kind {
        MessageKind::Granted if state.expire_timer > 0 => HolderPhase::ValidLease,
        // NotGranted, or a grant that arrived after our own countdown
        // already ran out: either way the lease is not usable.
        _ => HolderPhase::Blocked,
    };
    Ok((HolderState { phase, ..*state }, ReceiveOutcome::Applied))
}

/// Burns holder-measured enclave time off the countdown.
pub fn holder_tick(state: &HolderState, elapsed: Nanos) -> HolderState {
    HolderState {
        expire_timer: state.expire_timer.saturating_sub(elapsed),
        ..*state
    }
}

/// Abandons an outstanding request whose reply never came. The epoch is
/// untouched; a straggler reply is then ignored by the timestamp check in
/// [`holder_receive`] once a new request has gone out.
pub fn holder_timeout(state: &HolderState) -> Result<HolderState, ProtocolError> {
    if state.phase != HolderPhase::Pending {
        return Err(ProtocolError::TimeoutWithoutRequest);
    }
    Ok(HolderState {
        phase: HolderPhase::Blocked,
        ..*state
    })
}

/// Marks the holder interrupted. Idempotent: several interrupts before the
/// matching resume collapse into one epoch boundary.
pub fn holder_on_interrupt(state: &HolderState) -> HolderState {
    HolderState {
        phase: HolderPhase::Interrupted,
        ..*state
    }
}

/// Resolves an interrupt: the epoch ends, any lease is dead, and the holder
/// must re-request from scratch.
pub fn holder_on_resume(state: &HolderState) -> Result<HolderState, ProtocolError> {
    if state.phase != HolderPhase::Interrupted {
        return Err(ProtocolError::ResumeWithoutInterrupt);
    }
    Ok(HolderState {
        phase: HolderPhase::Blocked,
        epoch_number: state.epoch_number + 1,
        expire_timer: 0,
        ..*state
    })
}

// ---------------------------------------------------------------------------
// Granter state machine
// ---------------------------------------------------------------------------

/// Granter execution context. `Interrupted` only matters to the simulator
/// and the model checker, where interrupts have duration; a real granter
/// simply is not running while preempted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GranterPhase {
    InsideEnclave,
    Interrupted,
}

/// The granter's record of an outstanding grant. `(epoch_number,
/// timestamp)` is the metadata fence: extension requests must compare
/// lexicographically greater or equal, which orders requests from one
/// holder across interrupts (epoch) and within an epoch (send time).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GrantRecord {
    pub holder: HostId,
    pub timestamp: Nanos,
    pub epoch_number: EpochNumber,
}

impl GrantRecord {
    /// Ordering key for the stale-request check.
    pub fn metadata(&self) -> (EpochNumber, Nanos) {
        (self.epoch_number, self.timestamp)
    }
}

/// Granter-side view of one lease.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GranterState {
    pub phase: GranterPhase,
    pub grant: Option<GrantRecord>,
    /// Remaining granter-measured hold time for the current grant.
    pub expire_timer: Nanos,
}

impl Default for GranterState {
    fn default() -> Self {
        GranterState::new()
    }
}

impl GranterState {
    pub fn new() -> Self {
        GranterState {
            phase: GranterPhase::InsideEnclave,
            grant: None,
            expire_timer: 0,
        }
    }
}

/// How [`granter_process`] decided a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GrantDecision {
    /// Lease was free; a fresh grant was installed.
    GrantedFresh,
    /// Same holder presented metadata at least as new; grant extended.
    Extended,
    /// Lease held by someone else, or the request metadata was older than
    /// the stored record.
    Rejected,
}

impl GrantDecision {
    pub fn granted(&self) -> bool {
        !matches!(self, GrantDecision::Rejected)
    }
}

/// Decides one lease request and produces the reply. The reply mirrors the
/// request's epoch and timestamp so the holder can pair it with the right
/// countdown, and carries the granter's own send time.
pub fn granter_process(
    state: &GranterState,
    cfg: &LeaseConfig,
    msg: &ProtocolMessage,
    now: Nanos,
) -> Result<(GranterState, ProtocolMessage, GrantDecision), ProtocolError> {
    if !msg.is_request() {
        return Err(ProtocolError::NotARequest);
    }
    if state.phase == GranterPhase::Interrupted {
        return Err(ProtocolError::ProcessWhileInterrupted);
    }
    let requested = GrantRecord {
        holder: msg.holder,
        timestamp: msg.timestamp,
        epoch_number: msg.epoch_number,
    };
    let decision = match &state.grant {
        None => GrantDecision::GrantedFresh,
        Some(rec) if rec.holder == msg.holder && requested.metadata() >= rec.metadata() => {
            GrantDecision::Extended
        }
        Some(_) => GrantDecision::Rejected,
    };
    let next = if decision.granted() {
        GranterState {
            grant: Some(requested),
            expire_timer: cfg.granter_term(),
            ..*state
        }
    } else {
        *state
    };
    let reply = ProtocolMessage {
        kind: if decision.granted() {
            MessageKind::Granted
        } else {
            MessageKind::NotGranted
        },
        send_timestamp: now,
        ..*msg
    };
    Ok((next, reply, decision))
}

/// Burns granter-measured enclave time off the grant. Returns the next
/// state and whether the grant expired during this step.
pub fn granter_tick(state: &GranterState, elapsed_in_enclave: Nanos) -> (GranterState, bool) {
    if state.phase == GranterPhase::Interrupted || state.grant.is_none() {
        return (*state, false);
    }
    let remaining = state.expire_timer.saturating_sub(elapsed_in_enclave);
    if remaining == 0 {
        (
            GranterState {
                grant: None,
                expire_timer: 0,
                ..*state
            },
            true,
        )
    } else {
        (
            GranterState {
                expire_timer: remaining,
                ..*state
            },
            false,
        )
    }
}

pub fn granter_on_interrupt(state: &GranterState) -> GranterState {
    GranterState {
        phase: GranterPhase::Interrupted,
        ..*state
    }
}

pub fn granter_on_resume(state: &GranterState) -> GranterState {
    GranterState {
        phase: GranterPhase::InsideEnclave,
        ..*state
    }
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("invalid lease configuration: {0}")]
    BadConfig(&'static str),
    #[error("cannot request a lease while interrupted")]
    RequestWhileInterrupted,
    #[error("cannot request a lease while a request is outstanding")]
    RequestWhilePending,
    #[error("holder_receive expects a reply, got a request")]
    NotAReply,
    #[error("reply addressed to a different holder or lease")]
    MisroutedReply,
    #[error("reply carries an epoch the holder never sent")]
    ReplyFromFuture,
    #[error("timeout is only meaningful with a request outstanding")]
    TimeoutWithoutRequest,
    #[error("resume without a preceding interrupt")]
    ResumeWithoutInterrupt,
    #[error("granter_process expects a request, got a reply")]
    NotARequest,
    #[error("granter cannot process requests while interrupted")]
    ProcessWhileInterrupted,
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LeaseConfig {
        LeaseConfig {
            lease_term: 1_000,
            granter_multiplier: 2.0,
            drift: 0.0,
            renew_fraction: 0.2,
        }
    }

    fn holder() -> HolderState {
        HolderState::new(7, 42)
    }

    #[test]
    fn fresh_request_arms_countdown_at_send() {
        let (st, msg) = holder_request(&holder(), &cfg(), 123).unwrap();
        assert_eq!(st.phase, HolderPhase::Pending);
        assert_eq!(st.expire_timer, 1_000);
        assert_eq!(st.last_request_ts, 123);
        assert_eq!(msg.kind, MessageKind::ReqLease);
        assert_eq!(msg.epoch_number, 1);
        assert_eq!(msg.timestamp, 123);
        assert_eq!(msg.send_timestamp, 0);
    }

    #[test]
    fn granted_reply_with_time_left_validates_lease() {
        let (st, msg) = holder_request(&holder(), &cfg(), 5).unwrap();
        let st = holder_tick(&st, 400);
        let reply = ProtocolMessage {
            kind: MessageKind::Granted,
            send_timestamp: 9,
            ..msg
        };
        let (st, out) = holder_receive(&st, &reply).unwrap();
        assert_eq!(out, ReceiveOutcome::Applied);
        assert_eq!(st.phase, HolderPhase::ValidLease);
        assert!(st.lease_usable());
    }

    #[test]
    fn granted_reply_after_local_expiry_blocks() {
        let (st, msg) = holder_request(&holder(), &cfg(), 5).unwrap();
        let st = holder_tick(&st, 1_000);
        assert_eq!(st.expire_timer, 0);
        let reply = ProtocolMessage {
            kind: MessageKind::Granted,
            send_timestamp: 2_000,
            ..msg
        };
        let (st, out) = holder_receive(&st, &reply).unwrap();
        assert_eq!(out, ReceiveOutcome::Applied);
        assert_eq!(st.phase, HolderPhase::Blocked);
    }

    #[test]
    fn not_granted_blocks() {
        let (st, msg) = holder_request(&holder(), &cfg(), 5).unwrap();
        let reply = ProtocolMessage {
            kind: MessageKind::NotGranted,
            send_timestamp: 9,
            ..msg
        };
        let (st, out) = holder_receive(&st, &reply).unwrap();
        assert_eq!(out, ReceiveOutcome::Applied);
        assert_eq!(st.phase, HolderPhase::Blocked);
    }

    #[test]
    fn reply_to_older_epoch_is_ignored() {
        let st = holder();
        let (st, old_msg) = holder_request(&st, &cfg(), 5).unwrap();
        // Interrupt hits while the request is in flight.
        let st = holder_on_resume(&holder_on_interrupt(&st)).unwrap();
        assert_eq!(st.epoch_number, 2);
        let (st, _msg) = holder_request(&st, &cfg(), 50).unwrap();
        let stale = ProtocolMessage {
            kind: MessageKind::Granted,
            send_timestamp: 60,
            ..old_msg
        };
        let (st, out) = holder_receive(&st, &stale).unwrap();
        assert_eq!(out, ReceiveOutcome::Ignored);
        assert_eq!(st.phase, HolderPhase::Pending);
    }

    #[test]
    fn reply_to_older_request_in_same_epoch_is_ignored() {
        // Two requests in one epoch: abandon the first, send the second,
        // then the first's reply finally shows up. It must not validate a
        // countdown we no longer run.
        let (st, first) = holder_request(&holder(), &cfg(), 5).unwrap();
        let st = holder_timeout(&st).unwrap();
        let (st, _second) = holder_request(&st, &cfg(), 800).unwrap();
        let straggler = ProtocolMessage {
            kind: MessageKind::Granted,
            send_timestamp: 820,
            ..first
        };
        let (st, out) = holder_receive(&st, &straggler).unwrap();
        assert_eq!(out, ReceiveOutcome::Ignored);
        assert_eq!(st.phase, HolderPhase::Pending);
        assert_eq!(st.last_request_ts, 800);
    }

    #[test]
    fn reply_while_blocked_is_ignored() {
        let (st, msg) = holder_request(&holder(), &cfg(), 5).unwrap();
        let st = holder_timeout(&st).unwrap();
        let reply = ProtocolMessage {
            kind: MessageKind::Granted,
            send_timestamp: 9,
            ..msg
        };
        let (st, out) = holder_receive(&st, &reply).unwrap();
        assert_eq!(out, ReceiveOutcome::Ignored);
        assert_eq!(st.phase, HolderPhase::Blocked);
    }

    #[test]
    fn interrupt_then_resume_increments_epoch_once() {
        let st = holder();
        let st = holder_on_interrupt(&st);
        let st = holder_on_interrupt(&st); // back-to-back interrupts collapse
        assert_eq!(st.phase, HolderPhase::Interrupted);
        let st = holder_on_resume(&st).unwrap();
        assert_eq!(st.phase, HolderPhase::Blocked);
        assert_eq!(st.epoch_number, 2);
        assert_eq!(st.expire_timer, 0);
    }

    #[test]
    fn request_rejected_while_interrupted_or_pending() {
        let st = holder_on_interrupt(&holder());
        assert_eq!(
            holder_request(&st, &cfg(), 1).unwrap_err(),
            ProtocolError::RequestWhileInterrupted
        );
        let (st, _) = holder_request(&holder(), &cfg(), 1).unwrap();
        assert_eq!(
            holder_request(&st, &cfg(), 2).unwrap_err(),
            ProtocolError::RequestWhilePending
        );
    }

    #[test]
    fn extension_keeps_epoch_and_rearms_countdown() {
        let (st, msg) = holder_request(&holder(), &cfg(), 5).unwrap();
        let reply = ProtocolMessage {
            kind: MessageKind::Granted,
            send_timestamp: 9,
            ..msg
        };
        let (st, _) = holder_receive(&st, &reply).unwrap();
        let st = holder_tick(&st, 900);
        assert!(st.wants_renewal(&cfg()));
        let (st, ext) = holder_request(&st, &cfg(), 950).unwrap();
        assert_eq!(ext.epoch_number, 1);
        assert_eq!(st.expire_timer, 1_000);
        assert_eq!(st.phase, HolderPhase::Pending);
    }

    #[test]
    fn renewal_triggers_below_fraction_threshold() {
        let c = cfg();
        let (st, msg) = holder_request(&holder(), &c, 0).unwrap();
        let reply = ProtocolMessage {
            kind: MessageKind::Granted,
            send_timestamp: 1,
            ..msg
        };
        let (st, _) = holder_receive(&st, &reply).unwrap();
        // Threshold is 200 of 1000: at exactly 200 remaining, no renewal yet.
        let at_threshold = holder_tick(&st, 800);
        assert!(!at_threshold.wants_renewal(&c));
        let below = holder_tick(&st, 801);
        assert!(below.wants_renewal(&c));
    }

    #[test]
    fn granter_installs_fresh_grant_with_multiplied_term() {
        let req = ProtocolMessage::req_lease(7, 42, 1, 100);
        let (g, reply, decision) =
            granter_process(&GranterState::new(), &cfg(), &req, 130).unwrap();
        assert_eq!(decision, GrantDecision::GrantedFresh);
        assert_eq!(reply.kind, MessageKind::Granted);
        assert_eq!(reply.epoch_number, 1);
        assert_eq!(reply.timestamp, 100);
        assert_eq!(reply.send_timestamp, 130);
        assert_eq!(g.expire_timer, 2_000);
        assert_eq!(
            g.grant,
            Some(GrantRecord {
                holder: 7,
                timestamp: 100,
                epoch_number: 1
            })
        );
    }

    #[test]
    fn granter_extends_same_holder_with_newer_metadata() {
        let req = ProtocolMessage::req_lease(7, 42, 1, 100);
        let (g, _, _) = granter_process(&GranterState::new(), &cfg(), &req, 110).unwrap();
        let (g, _) = granter_tick(&g, 1_500);
        let ext = ProtocolMessage::req_lease(7, 42, 1, 900);
        let (g, reply, decision) = granter_process(&g, &cfg(), &ext, 910).unwrap();
        assert_eq!(decision, GrantDecision::Extended);
        assert_eq!(reply.kind, MessageKind::Granted);
        assert_eq!(g.expire_timer, 2_000);
        assert_eq!(g.grant.unwrap().timestamp, 900);
    }

    #[test]
    fn granter_rejects_stale_metadata_from_same_holder() {
        let newer = ProtocolMessage::req_lease(7, 42, 2, 100);
        let (g, _, _) = granter_process(&GranterState::new(), &cfg(), &newer, 110).unwrap();
        // Same epoch, older timestamp.
        let stale_ts = ProtocolMessage::req_lease(7, 42, 2, 50);
        let (g, reply, decision) = granter_process(&g, &cfg(), &stale_ts, 120).unwrap();
        assert_eq!(decision, GrantDecision::Rejected);
        assert_eq!(reply.kind, MessageKind::NotGranted);
        // Older epoch, newer timestamp: epoch dominates.
        let stale_epoch = ProtocolMessage::req_lease(7, 42, 1, 500);
        let (g, reply, decision) = granter_process(&g, &cfg(), &stale_epoch, 510).unwrap();
        assert_eq!(decision, GrantDecision::Rejected);
        assert_eq!(reply.kind, MessageKind::NotGranted);
        assert_eq!(g.grant.unwrap().timestamp, 100);
    }

    #[test]
    fn granter_rejects_other_holder_while_granted() {
        let req = ProtocolMessage::req_lease(7, 42, 1, 100);
        let (g, _, _) = granter_process(&GranterState::new(), &cfg(), &req, 110).unwrap();
        let rival = ProtocolMessage::req_lease(8, 42, 9, 900);
        let (g, reply, decision) = granter_process(&g, &cfg(), &rival, 910).unwrap();
        assert_eq!(decision, GrantDecision::Rejected);
        assert_eq!(reply.kind, MessageKind::NotGranted);
        assert_eq!(reply.holder, 8);
        assert_eq!(g.grant.unwrap().holder, 7);
    }

    #[test]
    fn granter_regrants_after_expiry() {
        let req = ProtocolMessage::req_lease(7, 42, 1, 100);
        let (g, _, _) = granter_process(&GranterState::new(), &cfg(), &req, 110).unwrap();
        let (g, expired) = granter_tick(&g, 2_000);
        assert!(expired);
        assert_eq!(g.grant, None);
        let rival = ProtocolMessage::req_lease(8, 42, 1, 2_500);
        let (g, reply, decision) = granter_process(&g, &cfg(), &rival, 2_510).unwrap();
        assert_eq!(decision, GrantDecision::GrantedFresh);
        assert_eq!(reply.kind, MessageKind::Granted);
        assert_eq!(g.grant.unwrap().holder, 8);
    }

    #[test]
    fn granter_tick_freezes_while_interrupted() {
        let req = ProtocolMessage::req_lease(7, 42, 1, 100);
        let (g, _, _) = granter_process(&GranterState::new(), &cfg(), &req, 110).unwrap();
        let g = granter_on_interrupt(&g);
        let (g, expired) = granter_tick(&g, 10_000);
        assert!(!expired);
        assert_eq!(g.expire_timer, 2_000);
        let g = granter_on_resume(&g);
        let (g, expired) = granter_tick(&g, 10_000);
        assert!(expired);
        assert_eq!(g.grant, None);
    }

    #[test]
    fn holder_term_shortens_with_drift() {
        let c = LeaseConfig {
            lease_term: 1_000,
            drift: 0.1,
            ..cfg()
        };
        assert_eq!(c.holder_term(), 900);
        assert_eq!(c.granter_term(), 2_000);
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        assert!(cfg().validate().is_ok());
        let bad = LeaseConfig {
            granter_multiplier: 0.5,
            ..cfg()
        };
        assert!(bad.validate().is_err());
        let bad = LeaseConfig {
            renew_fraction: 0.0,
            ..cfg()
        };
        assert!(bad.validate().is_err());
        let bad = LeaseConfig {
            lease_term: 0,
            ..cfg()
        };
        assert!(bad.validate().is_err());
        let bad = LeaseConfig { drift: 1.0, ..cfg() };
        assert!(bad.validate().is_err());
    }
}
