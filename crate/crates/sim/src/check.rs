//! Replays a trace against world truth and reports the first safety break.
//!
//! Two claims are checked, both from the grant table's point of view:
//!
//! * **Belief coverage** — whenever a holder is in a state where it would
//!   act on its lease (it applied a `Granted` reply and nothing since has
//!   ended, expired, suspended or superseded that), the granter must hold a
//!   record naming that holder. A holder's belief is suspended the moment a
//!   preemption window opens on it: a stopped holder cannot act, and on an
//!   honest stack the first thing it does afterwards is notice the epoch
//!   ended. Belief returns only with the next applied grant.
//! * **Effect coverage** — every released effect must happen while the
//!   granter's record names the releasing holder. This is the check that
//!   stays meaningful when interrupt detection is compiled out, because a
//!   blind holder keeps believing and submitting after its grant is gone.
//!
//! Both sides of the joint state only change at trace entries, so scanning
//! entries in order checks the full timeline, not samples of it.

use std::collections::BTreeMap;

use leaseguard_core::{HolderPhase, HostId, LeaseId};
use leaseguard_runtime::EventKind;

use crate::trace::{Trace, TraceBody};

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Safe,
    ViolationAt { index: usize, reason: String },
}

impl Verdict {
    pub fn is_safe(&self) -> bool {
        matches!(self, Verdict::Safe)
    }

    pub fn index(&self) -> Option<usize> {
        match self {
            Verdict::Safe => None,
            Verdict::ViolationAt { index, .. } => Some(*index),
        }
    }
}

pub fn check_trace(trace: &Trace) -> Verdict {
    let mut grants: BTreeMap<LeaseId, HostId> = BTreeMap::new();
    let mut believes: BTreeMap<HostId, LeaseId> = BTreeMap::new();

    for (index, entry) in trace.events.iter().enumerate() {
        match &entry.body {
            TraceBody::Engine { host, kind, .. } if *host == trace.granter => match kind {
                EventKind::GrantInstalled { lease_id, holder, .. }
                | EventKind::GrantExtended { lease_id, holder, .. } => {
                    grants.insert(*lease_id, *holder);
                }
                EventKind::GrantExpired { lease_id, .. } => {
                    grants.remove(lease_id);
                }
                _ => {}
            },
            TraceBody::Engine { host, kind, .. } => match kind {
                EventKind::ReplyApplied { lease_id, phase, .. } => {
                    if *phase == HolderPhase::ValidLease {
                        believes.insert(*host, *lease_id);
                    } else {
                        believes.remove(host);
                    }
                }
                EventKind::RequestSent { .. }
                | EventKind::EpochEnded { .. }
                | EventKind::LeaseExpiredLocally { .. }
                | EventKind::TimerFailed { .. }
                | EventKind::FreqAlarm => {
                    // Pending again, resumed into a new epoch, counted down
                    // to zero, or refusing service: in every case the holder
                    // no longer acts on the old grant.
                    believes.remove(host);
                }
                EventKind::EffectReleased { lease_id, .. } => {
                    if grants.get(lease_id) != Some(host) {
                        return Verdict::ViolationAt {
                            index,
                            reason: format!(
                                "host {host} released an effect under lease {lease_id} \
                                 at t={} with no covering grant",
                                entry.t
                            ),
                        };
                    }
                }
                _ => {}
            },
            TraceBody::WindowStart { host, .. } => {
                believes.remove(host);
            }
            _ => {}
        }

        for (holder, lease_id) in &believes {
            if grants.get(lease_id) != Some(holder) {
                return Verdict::ViolationAt {
                    index,
                    reason: format!(
                        "host {holder} still considers lease {lease_id} usable at t={} \
                         but the granter holds no matching record",
                        entry.t
                    ),
                };
            }
        }
    }
    Verdict::Safe
}
