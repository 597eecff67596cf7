//! Structured event log shared by both engines.
//!
//! Every externally visible step an engine takes — sending a request,
//! applying or discarding a reply, ending a timer epoch, installing or
//! expiring a grant — is reported as one [`LogEvent`]. The default sink
//! writes one JSON object per line, which is what the command-line binaries
//! emit; tests and the simulator capture events into a `Vec` instead and
//! assert on them directly.

use std::io::Write;

use leaseguard_core::{EpochNumber, HolderPhase, HostId, LeaseId, MessageKind, Nanos, SubmitOutcome};
use serde::{Deserialize, Serialize};

/// One logged step, stamped with the host's own clock reading.
///
/// `time` comes from the host's raw counter, so under clock manipulation it
/// reflects what the host *believed* the time was. Consumers that know the
/// true time (the simulator) re-stamp events on capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub time: Nanos,
    pub host: HostId,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// What happened. Serialized with an `event` tag so logs stay greppable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    /// A lease request left the holder. `fresh` distinguishes a new
    /// acquisition from an extension of a lease still believed valid.
    RequestSent {
        lease_id: LeaseId,
        epoch: EpochNumber,
        req_ts: Nanos,
        fresh: bool,
        attempt: u32,
    },
    /// A reply matched the outstanding request and changed holder state.
    ReplyApplied {
        lease_id: LeaseId,
        kind: MessageKind,
        epoch: EpochNumber,
        req_ts: Nanos,
        phase: HolderPhase,
    },
    /// A reply arrived but was stale, misrouted, or malformed and was dropped.
    ReplyIgnored {
        lease_id: LeaseId,
        kind: MessageKind,
        epoch: EpochNumber,
        req_ts: Nanos,
    },
    /// No reply arrived within the response window; the attempt was abandoned.
    RequestTimeout {
        lease_id: LeaseId,
        epoch: EpochNumber,
        attempt: u32,
    },
    /// The trusted counter reported an interruption; the accounting epoch
    /// ended and `epoch` is the number of the one that just began.
    EpochEnded { epoch: EpochNumber },
    /// The counter-rate check failed; lease operations are suspended.
    FreqAlarm,
    /// A later counter-rate check passed; lease operations resume.
    FreqRecovered,
    /// The counter regressed without an interruption flag. Unrecoverable.
    TimerFailed { reason: String },
    /// The holder's countdown reached zero while it still believed the lease
    /// valid: the lease was lost rather than renewed in time.
    LeaseExpiredLocally {
        lease_id: LeaseId,
        epoch: EpochNumber,
    },
    /// Outcome of one guarded submission, including renew-and-retry rounds.
    SubmitResult {
        lease_id: LeaseId,
        outcome: SubmitOutcome,
        attempts: u32,
    },
    /// A committed submission released its buffered effect.
    EffectReleased { lease_id: LeaseId, bytes: usize },
    /// The granter installed a fresh grant record.
    GrantInstalled {
        lease_id: LeaseId,
        holder: HostId,
        epoch: EpochNumber,
        req_ts: Nanos,
    },
    /// The granter extended an existing grant for the same holder.
    GrantExtended {
        lease_id: LeaseId,
        holder: HostId,
        epoch: EpochNumber,
        req_ts: Nanos,
    },
    /// The granter refused a request (held by another, or stale metadata).
    GrantRejected {
        lease_id: LeaseId,
        holder: HostId,
        epoch: EpochNumber,
        req_ts: Nanos,
    },
    /// A grant's conservative countdown ran out and the record was dropped.
    GrantExpired { lease_id: LeaseId, holder: HostId },
    /// A request named a lease outside the granter's configured set.
    UnknownLease { lease_id: LeaseId, holder: HostId },
    /// The transport refused an outgoing message; treated as a loss.
    SendFailed,
}

/// Destination for engine events.
pub trait EventSink {
    fn record(&mut self, event: LogEvent);
}

/// Discards everything.
pub struct NullSink;

impl EventSink for NullSink {
    fn record(&mut self, _event: LogEvent) {}
}

impl EventSink for Vec<LogEvent> {
    fn record(&mut self, event: LogEvent) {
        self.push(event);
    }
}

/// Writes one JSON object per line. Flushes after every event so logs from
/// a killed process stay complete up to the final entry.
pub struct JsonLinesLog<W: Write> {
    out: W,
}

impl<W: Write> JsonLinesLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }
}

impl<W: Write> EventSink for JsonLinesLog<W> {
    fn record(&mut self, event: LogEvent) {
        if serde_json::to_writer(&mut self.out, &event).is_ok() {
            let _ = self.out.write_all(b"\n");
            let _ = self.out.flush();
        }
    }
}
