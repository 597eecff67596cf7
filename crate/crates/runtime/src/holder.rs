//! The holder engine: acquires one lease, keeps it renewed, and runs
//! guarded submissions under it.
//!
//! The engine is a straight-line loop around the pure transitions: read the
//! trusted clock, burn the elapsed time off the countdown, send a request
//! when one is due, and wait for the matching reply — giving the granter a
//! turn (via [`HostHardware::idle`]) between transport polls. An
//! interruption discovered at any of those clock reads ends the accounting
//! epoch, invalidates the lease on the spot, and (by policy) re-verifies the
//! counter rate before the holder is allowed back on the network.

use leaseguard_core::{
    holder_on_interrupt, holder_on_resume, holder_receive, holder_request, holder_tick,
    holder_timeout, probe_frequency, protected_submit, Advance, AtomicSection, CommitOutcome,
    EffectBuffer, EffectSink, EpochAccount, FreqCheck, HolderPhase, HolderState, HostId,
    LeaseConfig, LeaseId, ReceiveOutcome, SubmitOutcome, TimerFault,
};
use leaseguard_wire::Endpoint;

use crate::{EngineError, EnginePolicy, EventKind, EventSink, HostHardware, LogEvent};

/// Outcome of one renewal pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RenewOutcome {
    /// The lease is valid with plenty of time left; nothing was sent.
    Active,
    /// A grant — fresh or an extension — was obtained.
    Renewed,
    /// The granter answered but the holder ends up without a usable lease:
    /// someone else holds it, or the grant arrived after the countdown had
    /// already run out.
    Blocked,
    /// No usable answer within the retry budget, or the counter rate is
    /// currently unverified; the holder remains without a lease.
    Failed,
}

/// Running totals, cheap enough to keep unconditionally. The experiment
/// drivers read these instead of re-deriving numbers from the event log.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct HolderCounters {
    pub requests_sent: u64,
    pub renewals: u64,
    /// Re-requests after a timeout or an epoch end, within renewal calls.
    pub retries: u64,
    pub timeouts: u64,
    pub replies_ignored: u64,
    pub epochs_ended: u64,
    /// Times the countdown ran out while the holder still wanted the lease.
    pub local_expiries: u64,
    pub freq_alarms: u64,
    pub submits: u64,
    pub submit_retries: u64,
    pub effects_released: u64,
    pub send_failures: u64,
}

enum Observation {
    Advanced,
    EpochEnded,
}

enum AttemptEnd {
    Applied,
    TimedOut,
    EpochEnded,
}

pub struct HolderEngine<H, E, S> {
    host: HostId,
    cfg: LeaseConfig,
    policy: EnginePolicy,
    state: HolderState,
    account: EpochAccount,
    hw: H,
    ep: E,
    section: S,
    log: Box<dyn EventSink>,
    counters: HolderCounters,
    /// Set once the counter misbehaves unexplainably; never cleared.
    fault: Option<TimerFault>,
    /// Set while the last counter-rate check failed; cleared by a pass.
    clock_suspect: bool,
}

impl<H, E, S> HolderEngine<H, E, S>
where
    H: HostHardware,
    E: Endpoint,
    S: AtomicSection,
{
    pub fn new(
        host: HostId,
        lease_id: LeaseId,
        cfg: LeaseConfig,
        policy: EnginePolicy,
        mut hw: H,
        ep: E,
        section: S,
        log: Box<dyn EventSink>,
    ) -> Result<Self, EngineError> {
        cfg.validate()?;
        policy.validate().map_err(EngineError::BadPolicy)?;
        let account = EpochAccount::start(&mut hw);
        let mut engine = HolderEngine {
            host,
            cfg,
            policy,
            state: HolderState::new(host, lease_id),
            account,
            hw,
            ep,
            section,
            log,
            counters: HolderCounters::default(),
            fault: None,
            clock_suspect: false,
        };
        // Verify the counter rate once before trusting it at all.
        if engine.policy.freq_check_on_epoch {
            engine.check_rate()?;
        }
        Ok(engine)
    }

    pub fn state(&self) -> &HolderState {
        &self.state
    }

    pub fn counters(&self) -> &HolderCounters {
        &self.counters
    }

    pub fn account(&self) -> &EpochAccount {
        &self.account
    }

    pub fn config(&self) -> &LeaseConfig {
        &self.cfg
    }

    /// False once the counter has faulted, whatever the frozen state says:
    /// a countdown on an untrustworthy clock guards nothing.
    pub fn lease_usable(&self) -> bool {
        self.fault.is_none() && self.state.lease_usable()
    }

    pub fn clock_suspect(&self) -> bool {
        self.clock_suspect
    }

    pub fn timer_faulted(&self) -> bool {
        self.fault.is_some()
    }

    /// Refreshes the trusted clock and the countdown without renewing.
    /// Returns the phase the holder is left in.
    pub fn age(&mut self) -> Result<HolderPhase, EngineError> {
        self.fail_if_faulted()?;
        self.observe()?;
        Ok(self.state.phase)
    }

    /// Brings the lease to a decided state: returns [`RenewOutcome::Active`]
    /// if nothing needed doing, otherwise requests (and re-requests, up to
    /// the policy budget) until a reply lands or the budget is spent.
    pub fn update_renew_lease(&mut self) -> Result<RenewOutcome, EngineError> {
        self.fail_if_faulted()?;
        self.observe()?;
        self.drain_stale_replies()?;
        if self.clock_suspect {
            self.check_rate()?;
        }
        if self.clock_suspect {
            return Ok(RenewOutcome::Failed);
        }
        if self.state.phase == HolderPhase::ValidLease && !self.state.wants_renewal(&self.cfg) {
            return Ok(RenewOutcome::Active);
        }
        debug_assert!(!matches!(
            self.state.phase,
            HolderPhase::Pending | HolderPhase::Interrupted
        ));
        for attempt in 0..=self.policy.max_request_retries {
            let extension = self.state.phase == HolderPhase::ValidLease;
            let now = self.hw.now();
            let (next, msg) = holder_request(&self.state, &self.cfg, now)?;
            self.state = next;
            self.counters.requests_sent += 1;
            if attempt > 0 {
                self.counters.retries += 1;
            }
            self.stamp(EventKind::RequestSent {
                lease_id: msg.lease_id,
                epoch: msg.epoch_number,
                req_ts: msg.timestamp,
                fresh: !extension,
                attempt,
            });
            if self.ep.send(&msg).is_err() {
                self.counters.send_failures += 1;
                self.stamp(EventKind::SendFailed);
            }
            match self.await_reply(attempt)? {
                AttemptEnd::Applied => {
                    return Ok(if self.state.phase == HolderPhase::ValidLease {
                        self.counters.renewals += 1;
                        RenewOutcome::Renewed
                    } else {
                        if extension {
                            // The grant came back, but after the countdown it
                            // was meant to refresh had already run out.
                            self.counters.local_expiries += 1;
                            self.stamp(EventKind::LeaseExpiredLocally {
                                lease_id: self.state.lease_id,
                                epoch: self.state.epoch_number,
                            });
                        }
                        RenewOutcome::Blocked
                    });
                }
                AttemptEnd::TimedOut => {}
                AttemptEnd::EpochEnded => {
                    if self.clock_suspect {
                        return Ok(RenewOutcome::Failed);
                    }
                }
            }
        }
        Ok(RenewOutcome::Failed)
    }

    /// Submits one effect under the lease, renewing and retrying within the
    /// policy budget. The effect is released exactly once, and only from an
    /// attempt whose freshness check and commit both succeeded.
    pub fn lease_protected_syscall(
        &mut self,
        payload: &[u8],
        sink: &mut dyn EffectSink,
    ) -> Result<SubmitOutcome, EngineError> {
        self.fail_if_faulted()?;
        let mut attempts = 0u32;
        let outcome = loop {
            attempts += 1;
            match self.submit_once(payload, sink)? {
                SubmitOutcome::Submitted => break SubmitOutcome::Submitted,
                SubmitOutcome::LeaseInvalid => {
                    if attempts > self.policy.max_submit_retries {
                        break SubmitOutcome::LeaseInvalid;
                    }
                    self.counters.submit_retries += 1;
                    match self.update_renew_lease()? {
                        RenewOutcome::Active | RenewOutcome::Renewed => {}
                        RenewOutcome::Blocked | RenewOutcome::Failed => {
                            break SubmitOutcome::LeaseInvalid
                        }
                    }
                }
                SubmitOutcome::Aborted => {
                    // The section was killed but the lease may still be
                    // fine; retry without renewing first.
                    if attempts > self.policy.max_submit_retries {
                        break SubmitOutcome::Aborted;
                    }
                    self.counters.submit_retries += 1;
                }
            }
        };
        self.counters.submits += 1;
        if outcome == SubmitOutcome::Submitted {
            self.counters.effects_released += 1;
            self.stamp(EventKind::EffectReleased {
                lease_id: self.state.lease_id,
                bytes: payload.len(),
            });
        }
        self.stamp(EventKind::SubmitResult {
            lease_id: self.state.lease_id,
            outcome,
            attempts,
        });
        Ok(outcome)
    }

    fn submit_once(
        &mut self,
        payload: &[u8],
        sink: &mut dyn EffectSink,
    ) -> Result<SubmitOutcome, EngineError> {
        let was_usable = self.state.lease_usable();
        let epoch_before = self.account.epoch_number();
        let outcome = self.submit_once_inner(payload, sink)?;
        if was_usable
            && !self.state.lease_usable()
            && self.account.epoch_number() == epoch_before
        {
            // The countdown ran out during the submission itself.
            self.counters.local_expiries += 1;
            self.stamp(EventKind::LeaseExpiredLocally {
                lease_id: self.state.lease_id,
                epoch: self.state.epoch_number,
            });
        }
        Ok(outcome)
    }

    fn submit_once_inner(
        &mut self,
        payload: &[u8],
        sink: &mut dyn EffectSink,
    ) -> Result<SubmitOutcome, EngineError> {
        if self.policy.interrupt_detection {
            let epoch_before = self.account.epoch_number();
            match protected_submit(
                &mut self.state,
                &mut self.account,
                &mut self.hw,
                &mut self.section,
                payload,
                sink,
            ) {
                Ok(outcome) => {
                    if self.account.epoch_number() > epoch_before {
                        self.counters.epochs_ended += 1;
                        self.stamp(EventKind::EpochEnded {
                            epoch: self.state.epoch_number,
                        });
                        if self.policy.freq_check_on_epoch {
                            self.check_rate()?;
                        }
                    }
                    Ok(outcome)
                }
                Err(fault) => Err(self.latch_fault(fault)),
            }
        } else {
            // Baseline path: trust the raw counter and stay blind to
            // interruptions, like an ordinary lease client would.
            let token = self.section.begin();
            if let Advance::Advanced { ns } = self.account.update_unchecked(&mut self.hw) {
                self.state = holder_tick(&self.state, ns);
            }
            if !self.state.lease_usable() {
                self.section.abort(token);
                return Ok(SubmitOutcome::LeaseInvalid);
            }
            let buffer = EffectBuffer::stage(payload);
            self.section.commit_early_hint(&token);
            match self.section.commit(token) {
                CommitOutcome::Committed => {
                    buffer.release_into(sink);
                    Ok(SubmitOutcome::Submitted)
                }
                CommitOutcome::Aborted => {
                    buffer.discard();
                    Ok(SubmitOutcome::Aborted)
                }
            }
        }
    }

    /// Polls for a reply to the outstanding request until one is applied,
    /// the response window closes, or an interruption ends the epoch.
    fn await_reply(&mut self, attempt: u32) -> Result<AttemptEnd, EngineError> {
        let deadline = self.hw.now().saturating_add(self.policy.response_timeout());
        loop {
            while let Some(msg) = self.ep.poll()? {
                match holder_receive(&self.state, &msg) {
                    Ok((next, ReceiveOutcome::Applied)) => {
                        self.state = next;
                        self.stamp(EventKind::ReplyApplied {
                            lease_id: msg.lease_id,
                            kind: msg.kind,
                            epoch: msg.epoch_number,
                            req_ts: msg.timestamp,
                            phase: self.state.phase,
                        });
                        return Ok(AttemptEnd::Applied);
                    }
                    Ok((_, ReceiveOutcome::Ignored)) | Err(_) => {
                        self.counters.replies_ignored += 1;
                        self.stamp(EventKind::ReplyIgnored {
                            lease_id: msg.lease_id,
                            kind: msg.kind,
                            epoch: msg.epoch_number,
                            req_ts: msg.timestamp,
                        });
                    }
                }
            }
            if self.hw.now() >= deadline {
                let epoch = self.state.epoch_number;
                self.state = holder_timeout(&self.state)?;
                self.counters.timeouts += 1;
                self.stamp(EventKind::RequestTimeout {
                    lease_id: self.state.lease_id,
                    epoch,
                    attempt,
                });
                return Ok(AttemptEnd::TimedOut);
            }
            self.hw.idle(self.policy.poll_interval);
            if let Observation::EpochEnded = self.observe()? {
                return Ok(AttemptEnd::EpochEnded);
            }
        }
    }

    /// One trusted-clock step: credit interrupt-free time to the countdown,
    /// or fold an interruption into the holder (epoch ends, lease dies).
    fn observe(&mut self) -> Result<Observation, EngineError> {
        let advance = if self.policy.interrupt_detection {
            self.account.update(&mut self.hw)
        } else {
            Ok(self.account.update_unchecked(&mut self.hw))
        };
        match advance {
            Ok(Advance::Advanced { ns }) => {
                let was_usable = self.state.lease_usable();
                self.state = holder_tick(&self.state, ns);
                if was_usable && self.state.expire_timer == 0 {
                    self.counters.local_expiries += 1;
                    self.stamp(EventKind::LeaseExpiredLocally {
                        lease_id: self.state.lease_id,
                        epoch: self.state.epoch_number,
                    });
                }
                Ok(Observation::Advanced)
            }
            Ok(Advance::InterruptDetected) => {
                self.state = holder_on_resume(&holder_on_interrupt(&self.state))?;
                debug_assert_eq!(self.state.epoch_number, self.account.epoch_number());
                self.counters.epochs_ended += 1;
                self.stamp(EventKind::EpochEnded {
                    epoch: self.state.epoch_number,
                });
                if self.policy.freq_check_on_epoch {
                    self.check_rate()?;
                }
                Ok(Observation::EpochEnded)
            }
            Err(fault) => Err(self.latch_fault(fault)),
        }
    }

    /// Runs the counter-rate check. Only called while the lease is unusable:
    /// the check's counter reads consume interruption flags, which must not
    /// happen behind a live countdown's back. Any flag the probe does
    /// consume is folded back in as a proper epoch end before the verdict
    /// is acted on — a preemption that lands mid-check still ends an epoch.
    fn check_rate(&mut self) -> Result<(), EngineError> {
        debug_assert!(!self.state.lease_usable());
        let probe = probe_frequency(&mut self.hw, &self.policy.freq_check);
        let mut missed = probe.interruptions;
        while missed > 0 {
            missed -= 1;
            missed += self.account.note_interruption(&mut self.hw);
            self.state = holder_on_resume(&holder_on_interrupt(&self.state))?;
            debug_assert_eq!(self.state.epoch_number, self.account.epoch_number());
            self.counters.epochs_ended += 1;
            self.stamp(EventKind::EpochEnded {
                epoch: self.state.epoch_number,
            });
        }
        match probe.verdict {
            FreqCheck::Pass => {
                if self.clock_suspect {
                    self.clock_suspect = false;
                    self.stamp(EventKind::FreqRecovered);
                }
            }
            FreqCheck::Fail => {
                if !self.clock_suspect {
                    self.clock_suspect = true;
                    self.counters.freq_alarms += 1;
                    self.stamp(EventKind::FreqAlarm);
                }
            }
        }
        Ok(())
    }

    fn drain_stale_replies(&mut self) -> Result<(), EngineError> {
        while let Some(msg) = self.ep.poll()? {
            self.counters.replies_ignored += 1;
            self.stamp(EventKind::ReplyIgnored {
                lease_id: msg.lease_id,
                kind: msg.kind,
                epoch: msg.epoch_number,
                req_ts: msg.timestamp,
            });
        }
        Ok(())
    }

    fn fail_if_faulted(&self) -> Result<(), EngineError> {
        match &self.fault {
            Some(fault) => Err(EngineError::TimerFailed(fault.clone())),
            None => Ok(()),
        }
    }

    fn latch_fault(&mut self, fault: TimerFault) -> EngineError {
        self.stamp(EventKind::TimerFailed {
            reason: fault.to_string(),
        });
        self.fault = Some(fault.clone());
        EngineError::TimerFailed(fault)
    }

    fn stamp(&mut self, kind: EventKind) {
        let event = LogEvent {
            time: self.hw.now(),
            host: self.host,
            kind,
        };
        self.log.record(event);
    }
}
