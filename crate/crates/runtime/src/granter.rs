//! The granter engine: serves lease requests and ages grant records by
//! trusted enclave time.
//!
//! Timekeeping follows the holder's discipline with one twist on the safe
//! direction: where the holder may only *under*-count the time its lease
//! has left, the granter may only *over*-hold its records. Intervals
//! tainted by an interruption are therefore discarded (grants frozen across
//! the gap), and while the counter rate is unverified the engine neither
//! ages records nor installs new ones.

use std::collections::{BTreeMap, BTreeSet};

use leaseguard_core::{
    granter_process, granter_tick, probe_frequency, Advance, EpochAccount, FreqCheck,
    GrantDecision, GranterState, HostId, LeaseConfig, LeaseId, MessageKind, Nanos,
    ProtocolMessage, TimerFault,
};
use leaseguard_wire::Endpoint;

use crate::{EngineError, EnginePolicy, EventKind, EventSink, HostHardware, LogEvent};

/// Running totals mirroring [`crate::HolderCounters`] for the serving side.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GranterCounters {
    pub grants_fresh: u64,
    pub extensions: u64,
    pub rejections: u64,
    pub expirations: u64,
    pub unknown_lease: u64,
    pub replies_ignored: u64,
    pub epochs_ended: u64,
    pub freq_alarms: u64,
    pub send_failures: u64,
}

pub struct GranterEngine<H, E> {
    host: HostId,
    cfg: LeaseConfig,
    policy: EnginePolicy,
    leases: BTreeMap<LeaseId, GranterState>,
    /// When set, requests for other lease ids are answered NotGranted
    /// without creating state for them.
    allowed: Option<BTreeSet<LeaseId>>,
    account: EpochAccount,
    hw: H,
    ep: E,
    log: Box<dyn EventSink>,
    counters: GranterCounters,
    fault: Option<TimerFault>,
    clock_suspect: bool,
}

impl<H, E> GranterEngine<H, E>
where
    H: HostHardware,
    E: Endpoint,
{
    pub fn new(
        host: HostId,
        cfg: LeaseConfig,
        policy: EnginePolicy,
        mut hw: H,
        ep: E,
        log: Box<dyn EventSink>,
    ) -> Result<Self, EngineError> {
        cfg.validate()?;
        policy.validate().map_err(EngineError::BadPolicy)?;
        let account = EpochAccount::start(&mut hw);
        let mut engine = GranterEngine {
            host,
            cfg,
            policy,
            leases: BTreeMap::new(),
            allowed: None,
            account,
            hw,
            ep,
            log,
            counters: GranterCounters::default(),
            fault: None,
            clock_suspect: false,
        };
        // Verify the counter rate once before trusting it at all.
        if engine.policy.freq_check_on_epoch {
            engine.check_rate();
        }
        Ok(engine)
    }

    /// Restricts service to the given lease ids.
    pub fn with_allowed_leases<I: IntoIterator<Item = LeaseId>>(mut self, ids: I) -> Self {
        self.allowed = Some(ids.into_iter().collect());
        self
    }

    pub fn counters(&self) -> &GranterCounters {
        &self.counters
    }

    pub fn account(&self) -> &EpochAccount {
        &self.account
    }

    pub fn lease(&self, id: LeaseId) -> Option<&GranterState> {
        self.leases.get(&id)
    }

    /// Number of lease ids currently backed by a live grant record.
    pub fn active_grants(&self) -> usize {
        self.leases.values().filter(|s| s.grant.is_some()).count()
    }

    pub fn clock_suspect(&self) -> bool {
        self.clock_suspect
    }

    pub fn timer_faulted(&self) -> bool {
        self.fault.is_some()
    }

    /// Ages all records, then serves at most one request from the inbox,
    /// then ages again so a long-queued request cannot keep records alive
    /// past their hold time. Returns whether a message was consumed.
    pub fn serve_once(&mut self) -> Result<bool, EngineError> {
        self.fail_if_faulted()?;
        if self.clock_suspect {
            self.check_rate();
        }
        self.observe()?;
        let Some(msg) = self.ep.poll()? else {
            return Ok(false);
        };
        self.handle(msg)?;
        self.observe()?;
        Ok(true)
    }

    /// Serves requests until the host clock passes `duration` from now,
    /// idling between polls when the inbox is empty.
    pub fn serve_for(&mut self, duration: Nanos) -> Result<(), EngineError> {
        let deadline = self.hw.now().saturating_add(duration);
        while self.hw.now() < deadline {
            if !self.serve_once()? {
                let interval = self.policy.poll_interval;
                self.hw.idle(interval);
            }
        }
        Ok(())
    }

    /// Ages every grant by the trusted time since the last clock read and
    /// drops the ones whose conservative hold ran out. Returns how many
    /// expired during this call.
    pub fn update_lease_client(&mut self) -> Result<usize, EngineError> {
        self.fail_if_faulted()?;
        self.observe()
    }

    fn handle(&mut self, msg: ProtocolMessage) -> Result<(), EngineError> {
        if !msg.is_request() {
            self.counters.replies_ignored += 1;
            self.stamp(EventKind::ReplyIgnored {
                lease_id: msg.lease_id,
                kind: msg.kind,
                epoch: msg.epoch_number,
                req_ts: msg.timestamp,
            });
            return Ok(());
        }
        if let Some(allowed) = &self.allowed {
            if !allowed.contains(&msg.lease_id) {
                self.counters.unknown_lease += 1;
                self.stamp(EventKind::UnknownLease {
                    lease_id: msg.lease_id,
                    holder: msg.holder,
                });
                self.refuse(&msg);
                return Ok(());
            }
        }
        if self.clock_suspect {
            // Granting against an unverified clock could hand out a record
            // that expires early in real time; refuse until a check passes.
            self.counters.rejections += 1;
            self.stamp(EventKind::GrantRejected {
                lease_id: msg.lease_id,
                holder: msg.holder,
                epoch: msg.epoch_number,
                req_ts: msg.timestamp,
            });
            self.refuse(&msg);
            return Ok(());
        }
        let now = self.hw.now();
        let current = *self.leases.entry(msg.lease_id).or_default();
        let (next, reply, decision) = granter_process(&current, &self.cfg, &msg, now)?;
        self.leases.insert(msg.lease_id, next);
        match decision {
            GrantDecision::GrantedFresh => {
                self.counters.grants_fresh += 1;
                self.stamp(EventKind::GrantInstalled {
                    lease_id: msg.lease_id,
                    holder: msg.holder,
                    epoch: msg.epoch_number,
                    req_ts: msg.timestamp,
                });
            }
            GrantDecision::Extended => {
                self.counters.extensions += 1;
                self.stamp(EventKind::GrantExtended {
                    lease_id: msg.lease_id,
                    holder: msg.holder,
                    epoch: msg.epoch_number,
                    req_ts: msg.timestamp,
                });
            }
            GrantDecision::Rejected => {
                self.counters.rejections += 1;
                self.stamp(EventKind::GrantRejected {
                    lease_id: msg.lease_id,
                    holder: msg.holder,
                    epoch: msg.epoch_number,
                    req_ts: msg.timestamp,
                });
            }
        }
        self.send_reply(&reply);
        Ok(())
    }

    fn refuse(&mut self, msg: &ProtocolMessage) {
        let reply = ProtocolMessage {
            kind: MessageKind::NotGranted,
            send_timestamp: self.hw.now(),
            ..*msg
        };
        self.send_reply(&reply);
    }

    fn send_reply(&mut self, reply: &ProtocolMessage) {
        if self.ep.send(reply).is_err() {
            self.counters.send_failures += 1;
            self.stamp(EventKind::SendFailed);
        }
    }

    /// One trusted-clock step; returns how many grants expired from it.
    fn observe(&mut self) -> Result<usize, EngineError> {
        let advance = if self.policy.interrupt_detection {
            self.account.update(&mut self.hw)
        } else {
            Ok(self.account.update_unchecked(&mut self.hw))
        };
        match advance {
            Ok(Advance::Advanced { ns }) => {
                if self.clock_suspect {
                    // Freezing records while the rate is unverified can only
                    // over-hold them, never release them early.
                    return Ok(0);
                }
                let mut expired = Vec::new();
                for (id, state) in self.leases.iter_mut() {
                    let holder = state.grant.as_ref().map(|g| g.holder);
                    let (next, died) = granter_tick(state, ns);
                    *state = next;
                    if died {
                        expired.push((*id, holder.unwrap_or_default()));
                    }
                }
                for (lease_id, holder) in &expired {
                    self.counters.expirations += 1;
                    self.stamp(EventKind::GrantExpired {
                        lease_id: *lease_id,
                        holder: *holder,
                    });
                }
                Ok(expired.len())
            }
            Ok(Advance::InterruptDetected) => {
                self.counters.epochs_ended += 1;
                self.stamp(EventKind::EpochEnded {
                    epoch: self.account.epoch_number(),
                });
                if self.policy.freq_check_on_epoch {
                    self.check_rate();
                }
                Ok(0)
            }
            Err(fault) => Err(self.latch_fault(fault)),
        }
    }

    fn check_rate(&mut self) {
        let probe = probe_frequency(&mut self.hw, &self.policy.freq_check);
        let mut missed = probe.interruptions;
        while missed > 0 {
            missed -= 1;
            missed += self.account.note_interruption(&mut self.hw);
            self.counters.epochs_ended += 1;
            self.stamp(EventKind::EpochEnded {
                epoch: self.account.epoch_number(),
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
