//! Per-host preemption windows and counter timelines.
//!
//! Both are fixed before a run starts: scheduled and generated interrupts
//! merge into one sorted set of windows, and every clock mutation the
//! adversary managed to place becomes a knot in a piecewise-linear mapping
//! from true time to counter ticks. Hosts then only ever query these
//! structures, which keeps reads cheap and the run deterministic.

use leaseguard_core::Nanos;
use rand::Rng;

/// Sorted, non-overlapping preemption intervals `[start, end)`.
#[derive(Debug, Clone, Default)]
pub struct Windows(Vec<(Nanos, Nanos)>);

impl Windows {
    /// Merges raw intervals; empty ones are dropped, touching ones fuse.
    pub fn from_raw(mut spans: Vec<(Nanos, Nanos)>) -> Windows {
        spans.retain(|(s, e)| e > s);
        spans.sort_unstable();
        let mut merged: Vec<(Nanos, Nanos)> = Vec::with_capacity(spans.len());
        for (s, e) in spans {
            match merged.last_mut() {
                Some((_, last_end)) if s <= *last_end => *last_end = (*last_end).max(e),
                _ => merged.push((s, e)),
            }
        }
        Windows(merged)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Nanos, Nanos)> + '_ {
        self.0.iter().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The window containing `t`, if any.
    pub fn covering(&self, t: Nanos) -> Option<(Nanos, Nanos)> {
        self.first_ending_after(t).filter(|&(s, _)| s <= t)
    }

    /// Start of the first window strictly after `t`.
    pub fn next_start_after(&self, t: Nanos) -> Option<Nanos> {
        let idx = self.0.partition_point(|w| w.1 <= t);
        self.0[idx..].iter().map(|w| w.0).find(|&s| s > t)
    }

    /// Whether any preemption touched the execution gap between a read at
    /// `since` and a read at `until`. A window starting exactly at `until`
    /// has not yet run and is left for the next read to report.
    pub fn preempted_between(&self, since: Nanos, until: Nanos) -> bool {
        let idx = self.0.partition_point(|w| w.1 <= since);
        self.0.get(idx).is_some_and(|w| w.0 < until)
    }

    /// Total preempted time and window count inside `[0, horizon)`.
    pub fn clipped_total(&self, horizon: Nanos) -> (Nanos, u64) {
        let mut total = 0;
        let mut count = 0;
        for &(s, e) in &self.0 {
            if s >= horizon {
                break;
            }
            total += e.min(horizon) - s;
            count += 1;
        }
        (total, count)
    }

    fn first_ending_after(&self, t: Nanos) -> Option<(Nanos, Nanos)> {
        self.0.get(self.0.partition_point(|w| w.1 <= t)).copied()
    }
}

/// One adversarial write to a host's clock, applied at true time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockMutation {
    pub t: Nanos,
    pub kind: MutationKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MutationKind {
    /// Counter advances by this many ticks per true nanosecond from `t` on.
    Freq(f64),
    /// Counter jumps to this absolute value at `t`.
    Counter(Nanos),
    /// Counter rolls back by this many ticks at `t`, floored at zero.
    CounterBack(Nanos),
}

#[derive(Debug, Clone, Copy)]
struct Knot {
    t: Nanos,
    /// Counter value at `t`, kept unrounded so rate changes splice without
    /// accumulating error.
    base: f64,
    factor: f64,
}

/// Piecewise-linear map from true time to counter ticks. One tick per
/// nanosecond until the adversary says otherwise.
#[derive(Debug, Clone)]
pub struct ClockTimeline {
    knots: Vec<Knot>,
}

impl ClockTimeline {
    pub fn identity() -> ClockTimeline {
        ClockTimeline {
            knots: vec![Knot {
                t: 0,
                base: 0.0,
                factor: 1.0,
            }],
        }
    }

    /// Folds mutations (already sorted by time) into the timeline.
    pub fn build(mutations: &[ClockMutation]) -> ClockTimeline {
        let mut timeline = ClockTimeline::identity();
        for m in mutations {
            debug_assert!(m.t >= timeline.knots.last().unwrap().t);
            let (base, factor) = {
                let last = timeline.knots.last().unwrap();
                let value_here = last.base + (m.t - last.t) as f64 * last.factor;
                match m.kind {
                    MutationKind::Freq(f) => (value_here, f),
                    MutationKind::Counter(v) => (v as f64, last.factor),
                    MutationKind::CounterBack(d) => {
                        ((value_here - d as f64).max(0.0), last.factor)
                    }
                }
            };
            timeline.knots.push(Knot { t: m.t, base, factor });
        }
        timeline
    }

    /// Counter reading at true time `t`.
    pub fn value(&self, t: Nanos) -> Nanos {
        let knot = self.knot_at(t);
        let v = knot.base + (t - knot.t) as f64 * knot.factor;
        if v <= 0.0 {
            0
        } else {
            v as Nanos
        }
    }

    pub fn factor_at(&self, t: Nanos) -> f64 {
        self.knot_at(t).factor
    }

    fn knot_at(&self, t: Nanos) -> &Knot {
        let idx = self.knots.partition_point(|k| k.t <= t);
        &self.knots[idx - 1]
    }
}

/// Poisson arrival instants over `[0, horizon)` at the given rate.
pub fn poisson_starts<R: Rng>(rate_hz: f64, horizon: Nanos, rng: &mut R) -> Vec<Nanos> {
    let mut starts = Vec::new();
    if rate_hz <= 0.0 {
        return starts;
    }
    let mut t = 0.0f64;
    loop {
        let u: f64 = rng.gen();
        t += -(1.0 - u).ln() / rate_hz * 1e9;
        if !t.is_finite() || t >= horizon as f64 {
            return starts;
        }
        starts.push(t as Nanos);
    }
}
