//! Check-to-use atomicity for lease-protected effects.
//!
//! A lease check and the effect it authorizes are worthless as two separate
//! steps: an interrupt between them lets the platform freeze the holder
//! past expiry and release the effect into someone else's lease window.
//! [`protected_submit`] closes that gap by running the freshness check and
//! the effect hand-off inside one [`AtomicSection`] — any interrupt that
//! lands between `begin` and `commit` aborts the section, and an aborted
//! section's staged effect is never observable.
//!
//! Sections are a capability of the execution environment: hardware
//! transactional memory on real enclaves, a virtual-time window in the
//! simulator, and a no-contention stub for plain processes. The guard logic
//! here stays the same across all of them.

use crate::protocol::{holder_on_interrupt, holder_on_resume, holder_tick, HolderState};
use crate::timer::{Advance, EpochAccount, HardwareView, TimerFault};

// ---------------------------------------------------------------------------
// Section and sink capabilities
// ---------------------------------------------------------------------------

/// Handle for one open section; prevents commits against nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectionToken(pub u64);

/// How a section ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitOutcome {
    Committed,
    /// The environment killed the section: an interrupt landed inside it,
    /// or a spurious conflict aborted it.
    Aborted,
}

/// An execution window with all-or-nothing visibility. The contract that
/// everything above relies on: an interrupt anywhere in `[begin, commit)`
/// forces [`CommitOutcome::Aborted`].
pub trait AtomicSection {
    fn begin(&mut self) -> SectionToken;

    /// Declares the protected work done even though the caller has more
    /// (unprotected) work in the section's scope; the environment may
    /// close the vulnerable window early. Advisory — a no-op by default.
    fn commit_early_hint(&mut self, _token: &SectionToken) {}

    fn commit(&mut self, token: SectionToken) -> CommitOutcome;

    /// Tears down a section whose guard checks failed before commit.
    fn abort(&mut self, token: SectionToken);
}

/// Where committed effects become visible: an observability log in the
/// simulator, a file or datagram sink in a real process.
pub trait EffectSink {
    fn release(&mut self, payload: &[u8]);
}

impl EffectSink for Vec<Vec<u8>> {
    fn release(&mut self, payload: &[u8]) {
        self.push(payload.to_vec());
    }
}

/// Staging area for one effect. Consuming methods make the release-once
/// rule structural: a buffer either releases into a sink or is discarded,
/// never both and never twice.
#[derive(Debug)]
pub struct EffectBuffer {
    payload: Vec<u8>,
}

impl EffectBuffer {
    pub fn stage(payload: &[u8]) -> Self {
        EffectBuffer {
            payload: payload.to_vec(),
        }
    }

    pub fn release_into<K: EffectSink + ?Sized>(self, sink: &mut K) {
        sink.release(&self.payload);
    }

    pub fn discard(self) {}
}

/// A section for environments without preemption reporting (ordinary OS
/// processes): nothing can abort it. The lease freshness check still runs;
/// only the interrupt-vs-commit race has no hardware to catch it.
#[derive(Debug, Default)]
pub struct UncontestedSection {
    next_token: u64,
}

impl AtomicSection for UncontestedSection {
    fn begin(&mut self) -> SectionToken {
        self.next_token += 1;
        SectionToken(self.next_token)
    }

    fn commit(&mut self, _token: SectionToken) -> CommitOutcome {
        CommitOutcome::Committed
    }

    fn abort(&mut self, _token: SectionToken) {}
}

// ---------------------------------------------------------------------------
// Guarded submission
// ---------------------------------------------------------------------------

/// Result of one guarded submission attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SubmitOutcome {
    /// Checks passed and the section committed; the effect is released.
    Submitted,
    /// The lease is not usable (expired, not yet granted, or an interrupt
    /// just ended the epoch). Renew before retrying.
    LeaseInvalid,
    /// The section aborted at commit; the effect was discarded unseen.
    /// Retrying is safe.
    Aborted,
}

/// Submits one effect under the lease, atomically with the freshness check.
///
/// Order of operations inside the section: refresh the trusted clock,
/// re-check the lease, stage the effect, hint that the protected work is
/// done, commit, and only then release. An interrupt detected by the clock
/// refresh ends the holder's epoch right here (the holder comes out
/// blocked, with its epoch advanced); an interrupt that sneaks in after
/// the check surfaces as an abort from the section itself. Either way the
/// effect stays invisible.
pub fn protected_submit<H, S, K>(
    holder: &mut HolderState,
    account: &mut EpochAccount,
    hw: &mut H,
    section: &mut S,
    payload: &[u8],
    sink: &mut K,
) -> Result<SubmitOutcome, TimerFault>
where
    H: HardwareView + ?Sized,
    S: AtomicSection + ?Sized,
    K: EffectSink + ?Sized,
{
    let token = section.begin();
    match account.update(hw) {
        Ok(Advance::Advanced { ns }) => {
            *holder = holder_tick(holder, ns);
        }
        Ok(Advance::InterruptDetected) => {
            section.abort(token);
            *holder = holder_on_resume(&holder_on_interrupt(holder))
                .expect("resume directly follows interrupt");
            debug_assert_eq!(holder.epoch_number, account.epoch_number());
            return Ok(SubmitOutcome::LeaseInvalid);
        }
        Err(fault) => {
            section.abort(token);
            return Err(fault);
        }
    }
    if !holder.lease_usable() {
        section.abort(token);
        return Ok(SubmitOutcome::LeaseInvalid);
    }
    let buffer = EffectBuffer::stage(payload);
    section.commit_early_hint(&token);
    match section.commit(token) {
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

// ---------------------------------------------------------------------------
