//! Aggregates a trace into the quantities the experiments report.
//!
//! Everything here is computed from the trace alone — the per-host summary
//! entries the standard scripts append, the world-truth preemption totals,
//! and the per-submission results — so metrics can be taken from a live run
//! or from a trace file read back from disk.

use std::collections::BTreeMap;
use std::io::{self, Write};

use leaseguard_core::{HostId, Nanos, SubmitOutcome};
use leaseguard_runtime::EventKind;

use crate::trace::{Trace, TraceBody};

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct HolderMetrics {
    pub host: HostId,
    pub requests_sent: u64,
    pub renewals: u64,
    pub retries: u64,
    pub timeouts: u64,
    pub epochs_ended: u64,
    /// Countdown ran out while the holder still wanted the lease: a lost
    /// lease from the holder's point of view.
    pub lost_leases: u64,
    pub freq_alarms: u64,
    pub submits: u64,
    pub submit_attempts: u64,
    pub submits_aborted: u64,
    pub submits_invalid: u64,
    pub effects_released: u64,
    /// Requests per second of true time.
    pub request_rate_hz: f64,
    /// Guarded submissions per second: how often the holder exercised (and
    /// therefore checked) the lease.
    pub check_rate_hz: f64,
    pub retries_per_renewal: f64,
    pub lost_lease_rate_hz: f64,
    /// Fraction of the host's true running time its trusted clock failed to
    /// credit: 1 - accounted / (horizon - preempted).
    pub under_accounting: f64,
    pub accounted_ns: Nanos,
    pub preempted_ns: Nanos,
    pub preemption_count: u64,
    pub final_epoch: u64,
    pub usable_at_end: bool,
    pub timer_fault: bool,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct GranterMetrics {
    pub host: HostId,
    pub grants_fresh: u64,
    pub extensions: u64,
    pub rejections: u64,
    /// Grants the granter let lapse; with an honest, renewing holder each
    /// one is a false-positive expiry.
    pub expirations: u64,
    pub unknown_lease: u64,
    pub epochs_ended: u64,
    pub freq_alarms: u64,
    pub under_accounting: f64,
    pub accounted_ns: Nanos,
    pub preempted_ns: Nanos,
    pub preemption_count: u64,
    pub active_grants_at_end: u64,
    pub timer_fault: bool,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub horizon_ns: Nanos,
    pub granter: GranterMetrics,
    pub holders: Vec<HolderMetrics>,
    pub messages_sent: u64,
    pub messages_dropped: u64,
}

pub fn metrics(trace: &Trace) -> MetricsReport {
    let horizon_s = trace.horizon_ns as f64 / 1e9;
    let mut report = MetricsReport {
        seed: trace.seed,
        horizon_ns: trace.horizon_ns,
        ..Default::default()
    };
    let mut preempted: Vec<(HostId, Nanos, u64)> = Vec::new();
    // (attempts, aborted, invalid) per host, merged into the summary rows
    // afterwards because submissions precede summaries in the trace.
    let mut submit_tallies: BTreeMap<HostId, (u64, u64, u64)> = BTreeMap::new();

    for entry in &trace.events {
        match &entry.body {
            TraceBody::WindowTotal { host, total_ns, count } => {
                preempted.push((*host, *total_ns, *count));
            }
            TraceBody::MsgSent { deliver_at, .. } => {
                report.messages_sent += 1;
                if deliver_at.is_none() {
                    report.messages_dropped += 1;
                }
            }
            TraceBody::HolderSummary {
                host,
                counters,
                accounted_ns,
                epoch,
                usable_at_end,
                timer_fault,
            } => {
                let renewals = counters.renewals.max(1) as f64;
                report.holders.push(HolderMetrics {
                    host: *host,
                    requests_sent: counters.requests_sent,
                    renewals: counters.renewals,
                    retries: counters.retries,
                    timeouts: counters.timeouts,
                    epochs_ended: counters.epochs_ended,
                    lost_leases: counters.local_expiries,
                    freq_alarms: counters.freq_alarms,
                    submits: counters.submits,
                    effects_released: counters.effects_released,
                    request_rate_hz: counters.requests_sent as f64 / horizon_s,
                    check_rate_hz: counters.submits as f64 / horizon_s,
                    retries_per_renewal: counters.retries as f64 / renewals,
                    lost_lease_rate_hz: counters.local_expiries as f64 / horizon_s,
                    accounted_ns: *accounted_ns,
                    final_epoch: *epoch,
                    usable_at_end: *usable_at_end,
                    timer_fault: *timer_fault,
                    ..Default::default()
                });
            }
            TraceBody::GranterSummary {
                host,
                counters,
                accounted_ns,
                active_grants,
                timer_fault,
            } => {
                report.granter = GranterMetrics {
                    host: *host,
                    grants_fresh: counters.grants_fresh,
                    extensions: counters.extensions,
                    rejections: counters.rejections,
                    expirations: counters.expirations,
                    unknown_lease: counters.unknown_lease,
                    epochs_ended: counters.epochs_ended,
                    freq_alarms: counters.freq_alarms,
                    accounted_ns: *accounted_ns,
                    active_grants_at_end: *active_grants,
                    timer_fault: *timer_fault,
                    ..Default::default()
                };
            }
            TraceBody::Engine { host, kind, .. } => {
                if let EventKind::SubmitResult { outcome, attempts, .. } = kind {
                    let tally = submit_tallies.entry(*host).or_default();
                    tally.0 += *attempts as u64;
                    match outcome {
                        SubmitOutcome::Aborted => tally.1 += 1,
                        SubmitOutcome::LeaseInvalid => tally.2 += 1,
                        SubmitOutcome::Submitted => {}
                    }
                }
            }
            _ => {}
        }
    }

    for holder in &mut report.holders {
        if let Some((attempts, aborted, invalid)) = submit_tallies.get(&holder.host) {
            holder.submit_attempts = *attempts;
            holder.submits_aborted = *aborted;
            holder.submits_invalid = *invalid;
        }
        if let Some((_, total, count)) =
            preempted.iter().find(|(h, _, _)| *h == holder.host)
        {
            holder.preempted_ns = *total;
            holder.preemption_count = *count;
        }
        holder.under_accounting =
            under_accounting(trace.horizon_ns, holder.preempted_ns, holder.accounted_ns);
    }
    if let Some((_, total, count)) = preempted
        .iter()
        .find(|(h, _, _)| *h == report.granter.host)
    {
        report.granter.preempted_ns = *total;
        report.granter.preemption_count = *count;
    }
    report.granter.under_accounting = under_accounting(
        trace.horizon_ns,
        report.granter.preempted_ns,
        report.granter.accounted_ns,
    );
    report
}

fn under_accounting(horizon: Nanos, preempted: Nanos, accounted: Nanos) -> f64 {
    let running = horizon.saturating_sub(preempted);
    if running == 0 {
        return 0.0;
    }
    (1.0 - accounted as f64 / running as f64).max(0.0)
}

impl MetricsReport {
    /// Long-format CSV: one row per host and metric.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "host,role,metric,value")?;
        writeln!(w, ",world,seed,{}", self.seed)?;
        writeln!(w, ",world,horizon_ns,{}", self.horizon_ns)?;
        writeln!(w, ",world,messages_sent,{}", self.messages_sent)?;
        writeln!(w, ",world,messages_dropped,{}", self.messages_dropped)?;
        let g = &self.granter;
        for (name, value) in [
            ("grants_fresh", g.grants_fresh as f64),
            ("extensions", g.extensions as f64),
            ("rejections", g.rejections as f64),
            ("expirations", g.expirations as f64),
            ("unknown_lease", g.unknown_lease as f64),
            ("epochs_ended", g.epochs_ended as f64),
            ("freq_alarms", g.freq_alarms as f64),
            ("under_accounting", g.under_accounting),
            ("accounted_ns", g.accounted_ns as f64),
            ("preempted_ns", g.preempted_ns as f64),
            ("preemption_count", g.preemption_count as f64),
            ("active_grants_at_end", g.active_grants_at_end as f64),
            ("timer_fault", g.timer_fault as u8 as f64),
        ] {
            writeln!(w, "{},granter,{},{}", g.host, name, value)?;
        }
        for h in &self.holders {
            for (name, value) in [
                ("requests_sent", h.requests_sent as f64),
                ("renewals", h.renewals as f64),
                ("retries", h.retries as f64),
                ("timeouts", h.timeouts as f64),
                ("epochs_ended", h.epochs_ended as f64),
                ("lost_leases", h.lost_leases as f64),
                ("freq_alarms", h.freq_alarms as f64),
                ("submits", h.submits as f64),
                ("submit_attempts", h.submit_attempts as f64),
                ("submits_aborted", h.submits_aborted as f64),
                ("submits_invalid", h.submits_invalid as f64),
                ("effects_released", h.effects_released as f64),
                ("request_rate_hz", h.request_rate_hz),
                ("check_rate_hz", h.check_rate_hz),
                ("retries_per_renewal", h.retries_per_renewal),
                ("lost_lease_rate_hz", h.lost_lease_rate_hz),
                ("under_accounting", h.under_accounting),
                ("accounted_ns", h.accounted_ns as f64),
                ("preempted_ns", h.preempted_ns as f64),
                ("preemption_count", h.preemption_count as f64),
                ("final_epoch", h.final_epoch as f64),
                ("usable_at_end", h.usable_at_end as u8 as f64),
                ("timer_fault", h.timer_fault as u8 as f64),
            ] {
                writeln!(w, "{},holder,{},{}", h.host, name, value)?;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("infallible write to Vec");
        String::from_utf8(out).expect("CSV is UTF-8")
    }

    pub fn holder(&self, host: HostId) -> Option<&HolderMetrics> {
        self.holders.iter().find(|h| h.host == host)
    }
}
