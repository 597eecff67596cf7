//! Conformance replay: checks simulator traces against the model's rules.
//!
//! The simulator runs the real engines on a nanosecond timeline; the model
//! speaks in abstract ticks. What survives the translation is the *order*
//! of protocol steps and the guards on each one: which phase a holder must
//! be in to send, what a reply must mirror to be accepted, what a grant
//! record must contain for an extension to be legal. The replay walks a
//! trace event by event, maintains the model-visible state of every host,
//! and reports a [`Divergence`] the moment an event happens that the
//! model's transition relation would not allow — or an event fails to
//! happen where the model leaves no alternative (a matching reply that was
//! ignored, say).
//!
//! Preemption is the one place where a trace is finer-grained than the
//! model: a window begins at a hardware instant, but an engine only learns
//! of it at its next counter read and reports it by ending the epoch. The
//! replay therefore carries a debt from window start to the matching epoch
//! end. One operation decided before the window may still complete under
//! that debt, and windows that a single read coalesces are covered by the
//! one epoch end that read produces. Anything more — a second step before
//! the report, an epoch end with no window behind it, an epoch number
//! moving by other than one — is a divergence, which is exactly how
//! flag-suppressing or epoch-skipping hardware gets caught.
//!
//! Timers and rates are deliberately not replayed, so a trace can only be
//! judged if its scheduling stays inside what the model expresses:
//! deliveries must beat the engines' response timeout (no retry storms),
//! messages must not be dropped, preemption windows land on holders only,
//! and the only clock mutation in play is frequency retuning. Traces from
//! scenarios outside that envelope diverge with a message saying so rather
//! than pretending to a verdict.

use std::collections::{BTreeMap, BTreeSet};

use leaseguard_core::{EpochNumber, HolderPhase, HostId, LeaseId, MessageKind, Nanos};
use leaseguard_runtime::EventKind;
use leaseguard_sim::{run, Scenario, SimError, Trace, TraceBody};
use serde::{Deserialize, Serialize};

/// A trace event the model cannot reproduce, with enough context to find
/// it in the trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    /// Index into `trace.events`.
    pub index: usize,
    /// True time of the offending event, in nanoseconds.
    pub t: Nanos,
    pub host: HostId,
    pub event: String,
    pub why: String,
}

/// What one trace replay covered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayStats {
    /// Events that mapped onto a model transition and had their guard
    /// checked (the rest are below the model's level of detail).
    pub mapped: u64,
    pub events: u64,
}

/// Aggregate over a batch of seeded runs of one scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub traces: u64,
    pub mapped: u64,
    /// First divergence of each non-conforming trace, with its seed.
    pub divergences: Vec<(u64, Divergence)>,
}

#[derive(Debug, Clone)]
struct HolderView {
    /// The protocol phase the engine itself is in. Preemption is tracked
    /// separately below, so this never takes the value `Interrupted`.
    phase: HolderPhase,
    epoch: EpochNumber,
    last_req_ts: Nanos,
    /// A preemption window has started and no protocol step has run past
    /// its report yet. Settled by the first step after the epoch end.
    window_debt: bool,
    /// The debt has been reported: an epoch ended after the most recent
    /// window start.
    detected: bool,
    /// One operation decided before the window may still complete before
    /// the holder's next counter read notices anything.
    straddle_budget: bool,
}

impl HolderView {
    fn new() -> Self {
        HolderView {
            phase: HolderPhase::Created,
            epoch: 1,
            last_req_ts: 0,
            window_debt: false,
            detected: false,
            straddle_budget: false,
        }
    }

    /// Charges one protocol step against the preemption bookkeeping. A
    /// step after the epoch end settles the debt; a step before it spends
    /// the single straddle allowance; past that, the holder is acting on
    /// hardware state it should have known was torn.
    fn admit_step(&mut self) -> Result<(), String> {
        if self.window_debt {
            if self.detected {
                self.window_debt = false;
            } else if self.straddle_budget {
                self.straddle_budget = false;
            } else {
                return Err(
                    "the holder kept working through a preemption it never reported".to_string(),
                );
            }
        }
        Ok(())
    }
}

struct Replay {
    granter: HostId,
    granter_interrupted: bool,
    holders: BTreeMap<HostId, HolderView>,
    /// Grant records by lease: (holder, epoch, request timestamp).
    grants: BTreeMap<LeaseId, (HostId, EpochNumber, Nanos)>,
    /// Requests sent and not yet answered: (lease, holder, epoch, req_ts).
    requests: BTreeSet<(LeaseId, HostId, EpochNumber, Nanos)>,
    stats: ReplayStats,
}

macro_rules! diverge {
    ($($arg:tt)*) => {
        return Err(format!($($arg)*))
    };
}

impl Replay {
    fn new(granter: HostId) -> Self {
        Replay {
            granter,
            granter_interrupted: false,
            holders: BTreeMap::new(),
            grants: BTreeMap::new(),
            requests: BTreeSet::new(),
            stats: ReplayStats::default(),
        }
    }

    fn holder(&mut self, host: HostId) -> &mut HolderView {
        self.holders.entry(host).or_insert_with(HolderView::new)
    }

    fn step(&mut self, host: HostId, body: &TraceBody) -> Result<(), String> {
        match body {
            TraceBody::Engine { kind, .. } => {
                if host == self.granter {
                    self.granter_event(kind)
                } else {
                    self.holder_event(host, kind)
                }
            }
            TraceBody::WindowStart { .. } => {
                self.stats.mapped += 1;
                if host == self.granter {
                    self.granter_interrupted = true;
                } else {
                    let view = self.holder(host);
                    if !view.window_debt || view.detected {
                        view.straddle_budget = true;
                    }
                    view.window_debt = true;
                    view.detected = false;
                }
                Ok(())
            }
            TraceBody::FreqSet { .. } => {
                self.stats.mapped += 1;
                let preempted = if host == self.granter {
                    self.granter_interrupted
                } else {
                    let view = self.holder(host);
                    view.window_debt && !view.detected
                };
                if !preempted {
                    diverge!("a clock retune landed while the host was running");
                }
                Ok(())
            }
            TraceBody::CounterSet { .. } => {
                diverge!(
                    "counter rewrites are outside the replayable alphabet; \
                     conformance scenarios may only retune frequency"
                )
            }
            // Below the model's level of detail: window bookkeeping,
            // network hops (the model only sees sends and receipts via
            // engine events), refused mutations, and end-of-run summaries.
            TraceBody::WindowEnd { .. }
            | TraceBody::WindowTotal { .. }
            | TraceBody::MsgSent { .. }
            | TraceBody::MsgDelivered { .. }
            | TraceBody::ActionRejected { .. }
            | TraceBody::HolderSummary { .. }
            | TraceBody::GranterSummary { .. } => Ok(()),
        }
    }

    fn holder_event(&mut self, host: HostId, kind: &EventKind) -> Result<(), String> {
        match kind {
            EventKind::RequestSent {
                lease_id,
                epoch,
                req_ts,
                fresh,
                ..
            } => {
                self.stats.mapped += 1;
                let view = self.holder(host);
                view.admit_step()?;
                if *epoch != view.epoch {
                    diverge!(
                        "a request carried epoch {} but the holder is in epoch {}",
                        epoch,
                        view.epoch
                    );
                }
                if *fresh {
                    if !matches!(view.phase, HolderPhase::Created | HolderPhase::Blocked) {
                        diverge!(
                            "a fresh request is only sent without a live lease, \
                             but the holder was {:?}",
                            view.phase
                        );
                    }
                } else if view.phase != HolderPhase::ValidLease {
                    diverge!(
                        "an extension is only sent while the lease is believed \
                         valid, but the holder was {:?}",
                        view.phase
                    );
                }
                view.phase = HolderPhase::Pending;
                view.last_req_ts = *req_ts;
                self.requests.insert((*lease_id, host, *epoch, *req_ts));
                Ok(())
            }
            EventKind::ReplyApplied {
                kind,
                epoch,
                req_ts,
                phase,
                ..
            } => {
                self.stats.mapped += 1;
                let view = self.holder(host);
                view.admit_step()?;
                if view.phase != HolderPhase::Pending {
                    diverge!("a reply was applied while the holder was {:?}", view.phase);
                }
                if *epoch != view.epoch || *req_ts != view.last_req_ts {
                    diverge!(
                        "the applied reply mirrors (epoch {}, req {}) but the \
                         outstanding request is (epoch {}, req {})",
                        epoch,
                        req_ts,
                        view.epoch,
                        view.last_req_ts
                    );
                }
                match kind {
                    MessageKind::Granted => {
                        if !matches!(phase, HolderPhase::ValidLease | HolderPhase::Blocked) {
                            diverge!("a grant can only validate or block, not {phase:?}");
                        }
                    }
                    MessageKind::NotGranted => {
                        if *phase != HolderPhase::Blocked {
                            diverge!("a refusal must block the holder, not {phase:?}");
                        }
                    }
                    MessageKind::ReqLease => diverge!("a request cannot be applied as a reply"),
                }
                view.phase = *phase;
                Ok(())
            }
            EventKind::ReplyIgnored {
                kind, epoch, req_ts, ..
            } => {
                self.stats.mapped += 1;
                let view = self.holder(host);
                if *kind != MessageKind::ReqLease
                    && view.phase == HolderPhase::Pending
                    && *epoch == view.epoch
                    && *req_ts == view.last_req_ts
                {
                    diverge!(
                        "a reply matching the outstanding request was ignored \
                         instead of applied"
                    );
                }
                Ok(())
            }
            EventKind::RequestTimeout { .. } => {
                diverge!(
                    "request timeouts are outside the replayable alphabet; \
                     conformance scenarios must keep delays below the response budget"
                )
            }
            EventKind::EpochEnded { epoch } => {
                self.stats.mapped += 1;
                let view = self.holder(host);
                if !view.window_debt {
                    diverge!(
                        "an epoch ended on a holder that was never preempted \
                         (phase {:?})",
                        view.phase
                    );
                }
                if *epoch != view.epoch + 1 {
                    diverge!(
                        "the epoch moved from {} to {}; interruption advances \
                         it by exactly one",
                        view.epoch,
                        epoch
                    );
                }
                view.epoch = *epoch;
                view.phase = HolderPhase::Blocked;
                view.detected = true;
                view.straddle_budget = false;
                Ok(())
            }
            EventKind::EffectReleased { .. } => {
                self.stats.mapped += 1;
                let view = self.holder(host);
                view.admit_step()?;
                if view.phase != HolderPhase::ValidLease {
                    diverge!(
                        "an effect was released while the holder was {:?}; \
                         only a believed-valid lease may release effects",
                        view.phase
                    );
                }
                Ok(())
            }
            // Timer-level happenings the tick-free replay cannot judge.
            EventKind::LeaseExpiredLocally { .. }
            | EventKind::FreqAlarm
            | EventKind::FreqRecovered
            | EventKind::TimerFailed { .. }
            | EventKind::SubmitResult { .. }
            | EventKind::SendFailed => Ok(()),
            EventKind::GrantInstalled { .. }
            | EventKind::GrantExtended { .. }
            | EventKind::GrantRejected { .. }
            | EventKind::GrantExpired { .. }
            | EventKind::UnknownLease { .. } => {
                diverge!("a granter event was logged by a holder host")
            }
        }
    }

    fn granter_event(&mut self, kind: &EventKind) -> Result<(), String> {
        // The granter only acts while running; the simulator cannot even
        // schedule a preempted host, so a grant decision inside a window
        // means the replay's window tracking or the trace is wrong.
        let awake = !self.granter_interrupted;
        match kind {
            EventKind::GrantInstalled {
                lease_id,
                holder,
                epoch,
                req_ts,
            } => {
                self.stats.mapped += 1;
                if !awake {
                    diverge!("the granter installed a grant while preempted");
                }
                if !self.requests.remove(&(*lease_id, *holder, *epoch, *req_ts)) {
                    diverge!("a grant was installed for a request nobody sent");
                }
                if let Some(existing) = self.grants.get(lease_id) {
                    diverge!(
                        "a fresh grant was installed over a live record held \
                         by host {}",
                        existing.0
                    );
                }
                self.grants.insert(*lease_id, (*holder, *epoch, *req_ts));
                Ok(())
            }
            EventKind::GrantExtended {
                lease_id,
                holder,
                epoch,
                req_ts,
            } => {
                self.stats.mapped += 1;
                if !awake {
                    diverge!("the granter extended a grant while preempted");
                }
                if !self.requests.remove(&(*lease_id, *holder, *epoch, *req_ts)) {
                    diverge!("a grant was extended for a request nobody sent");
                }
                match self.grants.get(lease_id) {
                    None => diverge!("an extension was accepted with no record installed"),
                    Some(&(h, e, t)) => {
                        if h != *holder {
                            diverge!(
                                "holder {holder} extended a record held by host {h}"
                            );
                        }
                        if (*epoch, *req_ts) < (e, t) {
                            diverge!(
                                "an extension with stale metadata (epoch {epoch}, \
                                 req {req_ts}) was accepted over (epoch {e}, req {t})"
                            );
                        }
                    }
                }
                self.grants.insert(*lease_id, (*holder, *epoch, *req_ts));
                Ok(())
            }
            EventKind::GrantRejected {
                lease_id,
                holder,
                epoch,
                req_ts,
            } => {
                self.stats.mapped += 1;
                if !awake {
                    diverge!("the granter refused a request while preempted");
                }
                if !self.requests.remove(&(*lease_id, *holder, *epoch, *req_ts)) {
                    diverge!("a refusal answered a request nobody sent");
                }
                match self.grants.get(lease_id) {
                    None => diverge!("a request was refused although no record blocks it"),
                    Some(&(h, e, t)) => {
                        if h == *holder && (*epoch, *req_ts) >= (e, t) {
                            diverge!(
                                "a grantable extension (epoch {epoch}, req {req_ts}) \
                                 was refused against record (epoch {e}, req {t})"
                            );
                        }
                    }
                }
                Ok(())
            }
            EventKind::GrantExpired { lease_id, holder } => {
                self.stats.mapped += 1;
                if !awake {
                    diverge!("a grant expired while the granter was preempted");
                }
                match self.grants.remove(lease_id) {
                    None => diverge!("a grant expired that was never installed"),
                    Some((h, _, _)) if h != *holder => {
                        diverge!("an expiry named holder {holder} but the record was host {h}")
                    }
                    Some(_) => Ok(()),
                }
            }
            EventKind::EpochEnded { .. } => {
                self.stats.mapped += 1;
                if !self.granter_interrupted {
                    diverge!("an epoch ended on a granter that was never preempted");
                }
                self.granter_interrupted = false;
                Ok(())
            }
            EventKind::UnknownLease { .. } => {
                diverge!("a request named a lease the granter does not serve")
            }
            EventKind::FreqAlarm
            | EventKind::FreqRecovered
            | EventKind::TimerFailed { .. }
            | EventKind::SendFailed => Ok(()),
            EventKind::RequestSent { .. }
            | EventKind::ReplyApplied { .. }
            | EventKind::ReplyIgnored { .. }
            | EventKind::RequestTimeout { .. }
            | EventKind::LeaseExpiredLocally { .. }
            | EventKind::SubmitResult { .. }
            | EventKind::EffectReleased { .. } => {
                diverge!("a holder event was logged by the granter host")
            }
        }
    }
}

/// Replays one trace. Returns the first divergence, or coverage stats if
/// every event the model can see was legal.
pub fn replay_trace(trace: &Trace) -> Result<ReplayStats, Divergence> {
    let mut replay = Replay::new(trace.granter);
    for (index, ev) in trace.events.iter().enumerate() {
        replay.stats.events += 1;
        let host = ev.body.host().unwrap_or(trace.granter);
        if let Err(why) = replay.step(host, &ev.body) {
            return Err(Divergence {
                index,
                t: ev.t,
                host,
                event: format!("{:?}", ev.body),
                why,
            });
        }
    }
    Ok(replay.stats)
}

/// Runs a scenario across many seeds and replays every trace.
pub fn check_conformance(
    scenario: &Scenario,
    seeds: impl IntoIterator<Item = u64>,
) -> Result<ConformanceReport, SimError> {
    let mut report = ConformanceReport::default();
    for seed in seeds {
        let trace = run(scenario, seed)?;
        report.traces += 1;
        match replay_trace(&trace) {
            Ok(stats) => report.mapped += stats.mapped,
            Err(d) => report.divergences.push((seed, d)),
        }
    }
    Ok(report)
}
