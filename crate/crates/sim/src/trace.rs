//! The simulation trace: everything that happened, stamped with true time.
//!
//! Engine logs stamp events with the host's own counter, which an adversary
//! may be skewing. The simulator knows the real clock, so every trace entry
//! carries the true nanosecond `t` at which it happened, and engine events
//! additionally keep the time the host believed it was (`host_time`).
//!
//! Entries are ordered by `(t, seq)`. Runtime events get their sequence
//! number at the moment they occur; bookkeeping emitted at the end of a run
//! (interrupt windows, per-host summaries) sorts after same-instant runtime
//! events. Serialization is one JSON object per line, preceded by a header
//! line, so identical runs produce byte-identical files.

use std::io::{self, BufRead, Write};

use leaseguard_core::{EpochNumber, HostId, LeaseId, MessageKind, Nanos};
use leaseguard_runtime::{EventKind, GranterCounters, HolderCounters};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// True simulation time, in nanoseconds.
    pub t: Nanos,
    pub seq: u64,
    #[serde(flatten)]
    pub body: TraceBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum TraceBody {
    /// An engine log event, re-stamped with true time. `host_time` preserves
    /// the clock reading the host itself put on the event.
    Engine {
        host: HostId,
        host_time: Nanos,
        #[serde(flatten)]
        kind: EventKind,
    },
    MsgSent {
        from: HostId,
        to: HostId,
        kind: MessageKind,
        lease_id: LeaseId,
        epoch: EpochNumber,
        req_ts: Nanos,
        /// None means the message was dropped in flight.
        deliver_at: Option<Nanos>,
    },
    MsgDelivered {
        to: HostId,
        kind: MessageKind,
        lease_id: LeaseId,
        epoch: EpochNumber,
        req_ts: Nanos,
    },
    /// The host is preempted from `t` until `until`.
    WindowStart { host: HostId, until: Nanos },
    WindowEnd { host: HostId },
    FreqSet { host: HostId, factor: f64 },
    CounterSet { host: HostId, value: Nanos },
    /// A scheduled clock mutation targeted a host that was not interrupted
    /// at that instant; the world refused to apply it.
    ActionRejected { host: HostId, action: String },
    /// Total preempted time per host over the run, clipped to the horizon.
    WindowTotal { host: HostId, total_ns: Nanos, count: u64 },
    HolderSummary {
        host: HostId,
        counters: HolderCounters,
        accounted_ns: Nanos,
        epoch: u64,
        usable_at_end: bool,
        timer_fault: bool,
    },
    GranterSummary {
        host: HostId,
        counters: GranterCounters,
        accounted_ns: Nanos,
        active_grants: u64,
        timer_fault: bool,
    },
}

impl TraceBody {
    /// The host an entry is about, when there is a single obvious one.
    pub fn host(&self) -> Option<HostId> {
        match self {
            TraceBody::Engine { host, .. }
            | TraceBody::WindowStart { host, .. }
            | TraceBody::WindowEnd { host }
            | TraceBody::FreqSet { host, .. }
            | TraceBody::CounterSet { host, .. }
            | TraceBody::ActionRejected { host, .. }
            | TraceBody::WindowTotal { host, .. }
            | TraceBody::HolderSummary { host, .. }
            | TraceBody::GranterSummary { host, .. } => Some(*host),
            TraceBody::MsgSent { from, .. } => Some(*from),
            TraceBody::MsgDelivered { to, .. } => Some(*to),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub seed: u64,
    pub horizon_ns: Nanos,
    pub granter: HostId,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    /// One header line, then one event per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        #[derive(Serialize)]
        struct Header<'a> {
            seed: u64,
            horizon_ns: Nanos,
            granter: &'a HostId,
        }
        let header = Header {
            seed: self.seed,
            horizon_ns: self.horizon_ns,
            granter: &self.granter,
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for ev in &self.events {
            writeln!(w, "{}", serde_json::to_string(ev)?)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = Vec::new();
        self.write_jsonl(&mut out).expect("infallible write to Vec");
        String::from_utf8(out).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<Trace> {
        #[derive(Deserialize)]
        struct Header {
            seed: u64,
            horizon_ns: Nanos,
            granter: HostId,
        }
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "empty trace"))??;
        let header: Header = serde_json::from_str(&first)?;
        let mut events = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line)?);
        }
        Ok(Trace {
            seed: header.seed,
            horizon_ns: header.horizon_ns,
            granter: header.granter,
            events,
        })
    }
}
