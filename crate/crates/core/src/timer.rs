//! Interrupt-aware interval timekeeping and counter-frequency verification.
//!
//! Lease countdowns must be measured on a clock the platform operator
//! cannot stretch. The scheme here assumes only two hardware facts, both
//! abstracted behind [`HardwareView`]:
//!
//! * a cycle counter whose reads come with a sticky "an interrupt happened
//!   since the last read" flag, and
//! * an entropy instruction whose latency is uncontrollable and falls in a
//!   known band.
//!
//! [`EpochAccount`] turns those into an interval clock that only ever
//! under-counts: it accumulates counter deltas between reads, and throws
//! away any interval the interrupt flag taints, because during an interrupt
//! the operator may have retuned the counter's frequency or rewritten its
//! value. Lost time shrinks lease windows, which is the safe direction.
//!
//! Frequency retuning that persists *across* an interrupt is caught by
//! [`verify_frequency`]: timing a burst of entropy instructions against the
//! counter bounds the counter's rate error to the band the entropy latency
//! spans. [`required_multiplier`] converts that residual error into how much
//! longer a granter must hold a grant than holders count it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::{EpochNumber, Nanos};

// ---------------------------------------------------------------------------
// Hardware abstraction
// ---------------------------------------------------------------------------

/// One counter sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRead {
    pub ticks: u64,
    /// True if any interrupt hit this host since the previous read. The
    /// flag is sticky and reading consumes it.
    pub interrupted: bool,
}

/// The two hardware capabilities the timer relies on. Implementations:
/// a monotonic-clock backend for real processes, a virtual-clock backend
/// in the simulator (where the adversary can retune it), and scripted
/// doubles in tests.
pub trait HardwareView {
    /// Samples the cycle counter and consumes the sticky interrupt flag.
    fn read_counter(&mut self) -> CounterRead;

    /// Runs `ops` entropy instructions back to back and returns the
    /// counter ticks they appeared to consume. Interrupts that land inside
    /// the burst surface through the next [`Self::read_counter`].
    fn entropy_op(&mut self, ops: u32) -> u64;

    /// Conversion from counter ticks to nanoseconds.
    fn tick_ratio(&self) -> TickRatio;
}

/// Rational ticks-to-nanoseconds conversion, kept exact so repeated small
/// intervals cannot accumulate rounding drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickRatio {
    pub ns_num: u64,
    pub ns_den: u64,
}

impl TickRatio {
    /// One tick per nanosecond; what the simulator and the monotonic-clock
    /// backend use.
    pub const IDENTITY: TickRatio = TickRatio { ns_num: 1, ns_den: 1 };

    /// Derives the ratio from a calibration observation: `ticks` counted
    /// across a known `ns` of wall time.
    pub fn from_observation(ticks: u64, ns: u64) -> Result<TickRatio, TimerFault> {
        if ticks == 0 || ns == 0 {
            return Err(TimerFault::BadCalibration { ticks, ns });
        }
        let g = gcd(ticks, ns);
        Ok(TickRatio {
            ns_num: ns / g,
            ns_den: ticks / g,
        })
    }

    pub fn ticks_to_ns(&self, ticks: u64) -> Nanos {
        ((ticks as u128 * self.ns_num as u128) / self.ns_den as u128) as Nanos
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

// ---------------------------------------------------------------------------
// Epoch account
// ---------------------------------------------------------------------------

/// Outcome of one [`EpochAccount::update`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Advance {
    /// The interval since the previous read was interrupt-free and has
    /// been credited.
    Advanced { ns: Nanos },
    /// An interrupt tainted the interval; it was discarded, the epoch
    /// ended, and the account re-anchored at the current counter value.
    InterruptDetected,
}

/// Accumulator of trusted enclave time.
///
/// Credits only intervals whose both endpoints were read without an
/// intervening interrupt, so its total is a lower bound on real elapsed
/// time whenever the counter's rate is within the verified band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochAccount {
    accumulated: Nanos,
    epoch_number: EpochNumber,
    last_ticks: u64,
    ratio: TickRatio,
}

impl EpochAccount {
    /// Anchors a new account at the current counter value. Any interrupt
    /// flag pending from before is consumed here, not reported.
    pub fn start<H: HardwareView + ?Sized>(hw: &mut H) -> Self {
        let read = hw.read_counter();
        EpochAccount {
            accumulated: 0,
            epoch_number: 1,
            last_ticks: read.ticks,
            ratio: hw.tick_ratio(),
        }
    }

    pub fn accumulated(&self) -> Nanos {
        self.accumulated
    }

    pub fn epoch_number(&self) -> EpochNumber {
        self.epoch_number
    }

    /// Samples the counter and either credits the interval since the last
    /// read or, if an interrupt tainted it, discards it and ends the epoch.
    ///
    /// A counter that went backwards *without* an interrupt is impossible
    /// on conforming hardware — the adversary can only touch the counter
    /// while the host is preempted, which sets the flag — so that case is
    /// surfaced as a fault rather than silently clamped.
    pub fn update<H: HardwareView + ?Sized>(&mut self, hw: &mut H) -> Result<Advance, TimerFault> {
        let read = hw.read_counter();
        if read.interrupted {
            self.last_ticks = read.ticks;
            self.epoch_number += 1;
            return Ok(Advance::InterruptDetected);
        }
        if read.ticks < self.last_ticks {
            return Err(TimerFault::CounterRegression {
                last: self.last_ticks,
                observed: read.ticks,
            });
        }
        let ns = self.ratio.ticks_to_ns(read.ticks - self.last_ticks);
        self.accumulated += ns;
        self.last_ticks = read.ticks;
        Ok(Advance::Advanced { ns })
    }

    /// Ends an epoch for an interruption whose flag another counter reader
    /// consumed — the rate check's reads do this, see [`probe_frequency`].
    /// Re-anchors at the current counter value, exactly as if [`Self::update`]
    /// had seen the flag itself. Returns how many further interruptions the
    /// re-anchoring read consumed in turn: almost always zero, but a window
    /// can land between any two reads, and those flags must not vanish
    /// either — callers fold until this returns zero.
    pub fn note_interruption<H: HardwareView + ?Sized>(&mut self, hw: &mut H) -> u32 {
        let read = hw.read_counter();
        self.last_ticks = read.ticks;
        self.epoch_number += 1;
        u32::from(read.interrupted)
    }

    /// Baseline behavior of an ordinary counter: trusts every delta,
    /// ignores the interrupt flag, never ends an epoch, and clamps
    /// regressions to zero. Exists so ablation experiments can compare
    /// against undefended timekeeping; lease engines never call this
    /// unless detection is explicitly disabled.
    pub fn update_unchecked<H: HardwareView + ?Sized>(&mut self, hw: &mut H) -> Advance {
        let read = hw.read_counter();
        let delta = read.ticks.saturating_sub(self.last_ticks);
        let ns = self.ratio.ticks_to_ns(delta);
        self.accumulated += ns;
        self.last_ticks = read.ticks;
        Advance::Advanced { ns }
    }
}

// ---------------------------------------------------------------------------
// Frequency verification
// ---------------------------------------------------------------------------

/// Parameters of the entropy-timing check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqCheckConfig {
    /// Entropy instructions timed per measurement.
    pub ops_per_check: u32,
    /// Accepted band for the measured tick count, inclusive.
    pub lower_bound_ticks: u64,
    pub upper_bound_ticks: u64,
    /// Measurements taken per check; the median is compared to the band.
    pub repeats: u32,
}

impl Default for FreqCheckConfig {
    fn default() -> Self {
        FreqCheckConfig {
            ops_per_check: 6,
            lower_bound_ticks: 7_000,
            upper_bound_ticks: 10_500,
            repeats: 1,
        }
    }
}

impl FreqCheckConfig {
    pub fn validate(&self) -> Result<(), TimerFault> {
        if self.ops_per_check == 0 || self.repeats == 0 {
            return Err(TimerFault::BadCheckConfig(
                "ops_per_check and repeats must be positive",
            ));
        }
        if self.lower_bound_ticks == 0 || self.lower_bound_ticks > self.upper_bound_ticks {
            return Err(TimerFault::BadCheckConfig(
                "bounds must satisfy 0 < lower <= upper",
            ));
        }
        Ok(())
    }
}

/// Verdict of one frequency check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreqCheck {
    Pass,
    Fail,
}

/// Result of [`probe_frequency`]: the verdict, plus every interruption
/// flag the check's own counter reads consumed. The flag is sticky but
/// clears on read, so a preemption that lands around a check surfaces
/// here and nowhere else — a caller that keeps an [`EpochAccount`] must
/// fold each one back in via [`EpochAccount::note_interruption`], or the
/// preemption passes without ending an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateProbe {
    pub verdict: FreqCheck,
    /// Interruption flags consumed by the check's reads.
    pub interruptions: u32,
}

/// Times entropy bursts against the counter and checks the median against
/// the configured band. A measurement tainted by an interrupt is retried
/// once; a second taint fails the whole check, since an attacker who can
/// interrupt at will must not be able to dodge verification forever.
pub fn probe_frequency<H: HardwareView + ?Sized>(hw: &mut H, cfg: &FreqCheckConfig) -> RateProbe {
    let mut interruptions = 0;
    let mut measurements = Vec::with_capacity(cfg.repeats as usize);
    for _ in 0..cfg.repeats {
        match measure_once(hw, cfg.ops_per_check, &mut interruptions) {
            Some(ticks) => measurements.push(ticks),
            None => {
                return RateProbe {
                    verdict: FreqCheck::Fail,
                    interruptions,
                }
            }
        }
    }
    measurements.sort_unstable();
    // Lower median; exact for the default single measurement.
    let median = measurements[(measurements.len() - 1) / 2];
    let verdict = if median >= cfg.lower_bound_ticks && median <= cfg.upper_bound_ticks {
        FreqCheck::Pass
    } else {
        FreqCheck::Fail
    };
    RateProbe {
        verdict,
        interruptions,
    }
}

/// [`probe_frequency`] reduced to its verdict, for callers with no epoch
/// accounting to keep (measurement sweeps, detection-rate estimates).
/// Lease engines must use the probe form: this one drops consumed
/// interruption flags on the floor.
pub fn verify_frequency<H: HardwareView + ?Sized>(hw: &mut H, cfg: &FreqCheckConfig) -> FreqCheck {
    probe_frequency(hw, cfg).verdict
}

fn measure_once<H: HardwareView + ?Sized>(
    hw: &mut H,
    ops: u32,
    interruptions: &mut u32,
) -> Option<u64> {
    for _attempt in 0..2 {
        // The warm-up read doubles as flag consumption, so the timed burst
        // starts clean.
        if hw.read_counter().interrupted {
            *interruptions += 1;
        }
        let ticks = hw.entropy_op(ops);
        if !hw.read_counter().interrupted {
            return Some(ticks);
        }
        *interruptions += 1;
    }
    None
}

/// The counter-rate band an adversary can still occupy after passing the
/// check, given the true latency band of one measurement: a factor `f`
/// survives only if some latency `L` in `[latency_min, latency_max]` keeps
/// `L * f` inside the accepted band.
pub fn escape_bounds(
    cfg: &FreqCheckConfig,
    latency_min_ticks: u64,
    latency_max_ticks: u64,
) -> (f64, f64) {
    (
        cfg.lower_bound_ticks as f64 / latency_max_ticks as f64,
        cfg.upper_bound_ticks as f64 / latency_min_ticks as f64,
    )
}

/// Distribution of the true latency of one measurement burst, in honest
/// counter ticks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LatencyModel {
    /// Uniform over `[min_ticks, max_ticks)`.
    Uniform { min_ticks: u64, max_ticks: u64 },
    /// Degenerate; useful for pinning edge cases in tests.
    Fixed { ticks: u64 },
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Uniform {
            min_ticks: 7_000,
            max_ticks: 10_500,
        }
    }
}

impl LatencyModel {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            LatencyModel::Uniform {
                min_ticks,
                max_ticks,
            } => rng.gen_range(min_ticks as f64..max_ticks as f64),
            LatencyModel::Fixed { ticks } => ticks as f64,
        }
    }
}

/// Monte-Carlo estimate of the probability that one check catches a
/// counter retuned by `freq_factor` (1.0 = honest rate). Deterministic in
/// `seed`.
pub fn detection_probability(
    cfg: &FreqCheckConfig,
    freq_factor: f64,
    model: &LatencyModel,
    samples: u32,
    seed: u64,
) -> f64 {
    assert!(samples > 0, "need at least one sample");
    assert!(freq_factor > 0.0, "frequency factor must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lower = cfg.lower_bound_ticks as f64;
    let upper = cfg.upper_bound_ticks as f64;
    let mut detected = 0u64;
    let mut observed = Vec::with_capacity(cfg.repeats as usize);
    for _ in 0..samples {
        observed.clear();
        for _ in 0..cfg.repeats {
            observed.push(model.sample(&mut rng) * freq_factor);
        }
        observed.sort_unstable_by(|a, b| a.total_cmp(b));
        let median = observed[(observed.len() - 1) / 2];
        if median < lower || median > upper {
            detected += 1;
        }
    }
    detected as f64 / samples as f64
}

/// How much longer the granter must hold a grant than holders count it,
/// given the worst counter-rate error the check leaves open: a slowed
/// holder clock stretches the holder's window by `1 / (1 - slowdown)`
/// real seconds per counted second, and a sped-up granter clock shrinks
/// the granter's by `1 / (1 + speedup)`; the ratio of the two is the
/// minimum safe multiplier.
pub fn required_multiplier(max_slowdown: f64, max_speedup: f64) -> Result<f64, TimerFault> {
    if !(0.0..1.0).contains(&max_slowdown) {
        return Err(TimerFault::BadCheckConfig("max_slowdown must lie in [0, 1)"));
    }
    if !max_speedup.is_finite() || max_speedup < 0.0 {
        return Err(TimerFault::BadCheckConfig(
            "max_speedup must be finite and non-negative",
        ));
    }
    Ok((1.0 + max_speedup) / (1.0 - max_slowdown))
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TimerFault {
    #[error("counter went backwards without an interrupt: last {last}, observed {observed}")]
    CounterRegression { last: u64, observed: u64 },
    #[error("calibration needs nonzero tick and nanosecond spans, got {ticks} ticks / {ns} ns")]
    BadCalibration { ticks: u64, ns: u64 },
    #[error("invalid frequency-check configuration: {0}")]
    BadCheckConfig(&'static str),
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Replays a fixed script of counter reads and entropy timings.
    struct ScriptedHardware {
        reads: Vec<CounterRead>,
        entropy: Vec<u64>,
        next_read: usize,
        next_entropy: usize,
        ratio: TickRatio,
    }

    impl ScriptedHardware {
        fn new(reads: Vec<CounterRead>, entropy: Vec<u64>) -> Self {
            ScriptedHardware {
                reads,
                entropy,
                next_read: 0,
                next_entropy: 0,
                ratio: TickRatio::IDENTITY,
            }
        }

        fn reads(reads: Vec<CounterRead>) -> Self {
            Self::new(reads, Vec::new())
        }
    }

    impl HardwareView for ScriptedHardware {
        fn read_counter(&mut self) -> CounterRead {
            let read = self.reads[self.next_read];
            self.next_read += 1;
            read
        }

        fn entropy_op(&mut self, _ops: u32) -> u64 {
            let ticks = self.entropy[self.next_entropy];
            self.next_entropy += 1;
            ticks
        }

        fn tick_ratio(&self) -> TickRatio {
            self.ratio
        }
    }

    fn ok(ticks: u64) -> CounterRead {
        CounterRead {
            ticks,
            interrupted: false,
        }
    }

    fn hit(ticks: u64) -> CounterRead {
        CounterRead {
            ticks,
            interrupted: true,
        }
    }

    #[test]
    fn clean_intervals_accumulate() {
        let mut hw = ScriptedHardware::reads(vec![ok(100), ok(130), ok(190)]);
        let mut acct = EpochAccount::start(&mut hw);
        assert_eq!(acct.update(&mut hw).unwrap(), Advance::Advanced { ns: 30 });
        assert_eq!(acct.update(&mut hw).unwrap(), Advance::Advanced { ns: 60 });
        assert_eq!(acct.accumulated(), 90);
        assert_eq!(acct.epoch_number(), 1);
    }

    #[test]
    fn tainted_interval_is_discarded_and_epoch_ends() {
        let mut hw = ScriptedHardware::reads(vec![ok(100), hit(500), ok(520)]);
        let mut acct = EpochAccount::start(&mut hw);
        assert_eq!(acct.update(&mut hw).unwrap(), Advance::InterruptDetected);
        assert_eq!(acct.accumulated(), 0);
        assert_eq!(acct.epoch_number(), 2);
        // Re-anchored at 500: the next clean read credits only 20.
        assert_eq!(acct.update(&mut hw).unwrap(), Advance::Advanced { ns: 20 });
        assert_eq!(acct.accumulated(), 20);
    }

    #[test]
    fn consecutive_interrupts_end_one_epoch_each_detection() {
        let mut hw = ScriptedHardware::reads(vec![ok(0), hit(10), hit(20), ok(25)]);
        let mut acct = EpochAccount::start(&mut hw);
        assert_eq!(acct.update(&mut hw).unwrap(), Advance::InterruptDetected);
        assert_eq!(acct.update(&mut hw).unwrap(), Advance::InterruptDetected);
        assert_eq!(acct.epoch_number(), 3);
        assert_eq!(acct.update(&mut hw).unwrap(), Advance::Advanced { ns: 5 });
    }

    #[test]
    fn regression_without_interrupt_is_a_fault() {
        let mut hw = ScriptedHardware::reads(vec![ok(100), ok(40)]);
        let mut acct = EpochAccount::start(&mut hw);
        assert_eq!(
            acct.update(&mut hw).unwrap_err(),
            TimerFault::CounterRegression {
                last: 100,
                observed: 40
            }
        );
    }

    #[test]
    fn regression_with_interrupt_is_reanchored_not_faulted() {
        // The adversary rolled the counter back while we were preempted:
        // the flag is set, so the interval is discarded, not trusted.
        let mut hw = ScriptedHardware::reads(vec![ok(100), hit(40), ok(70)]);
        let mut acct = EpochAccount::start(&mut hw);
        assert_eq!(acct.update(&mut hw).unwrap(), Advance::InterruptDetected);
        assert_eq!(acct.update(&mut hw).unwrap(), Advance::Advanced { ns: 30 });
        assert_eq!(acct.accumulated(), 30);
    }

    #[test]
    fn unchecked_mode_trusts_deltas_and_clamps_regressions() {
        let mut hw = ScriptedHardware::reads(vec![ok(100), hit(500), ok(400)]);
        let mut acct = EpochAccount::start(&mut hw);
        assert_eq!(acct.update_unchecked(&mut hw), Advance::Advanced { ns: 400 });
        assert_eq!(acct.update_unchecked(&mut hw), Advance::Advanced { ns: 0 });
        assert_eq!(acct.accumulated(), 400);
        assert_eq!(acct.epoch_number(), 1);
    }

    #[test]
    fn ratio_conversion_survives_large_values() {
        let ratio = TickRatio::from_observation(3_000_000_000, 1_000_000_000).unwrap();
        assert_eq!(ratio, TickRatio { ns_num: 1, ns_den: 3 });
        assert_eq!(ratio.ticks_to_ns(u64::MAX), u64::MAX / 3);
        assert!(TickRatio::from_observation(0, 5).is_err());
    }

    #[test]
    fn in_band_measurement_passes() {
        let cfg = FreqCheckConfig::default();
        let mut hw = ScriptedHardware::new(vec![ok(0), ok(9000)], vec![8_500]);
        assert_eq!(verify_frequency(&mut hw, &cfg), FreqCheck::Pass);
    }

    #[test]
    fn out_of_band_measurement_fails() {
        let cfg = FreqCheckConfig::default();
        for ticks in [6_999, 10_501, 3_000, 60_000] {
            let mut hw = ScriptedHardware::new(vec![ok(0), ok(1)], vec![ticks]);
            assert_eq!(verify_frequency(&mut hw, &cfg), FreqCheck::Fail, "{ticks}");
        }
        for ticks in [7_000, 10_500] {
            let mut hw = ScriptedHardware::new(vec![ok(0), ok(1)], vec![ticks]);
            assert_eq!(verify_frequency(&mut hw, &cfg), FreqCheck::Pass, "{ticks}");
        }
    }

    #[test]
    fn tainted_measurement_retries_once_then_fails() {
        let cfg = FreqCheckConfig::default();
        // First attempt tainted, second clean and in band.
        let mut hw = ScriptedHardware::new(vec![ok(0), hit(1), ok(2), ok(3)], vec![8_000, 8_000]);
        assert_eq!(verify_frequency(&mut hw, &cfg), FreqCheck::Pass);
        // Both attempts tainted.
        let mut hw = ScriptedHardware::new(vec![ok(0), hit(1), ok(2), hit(3)], vec![8_000, 8_000]);
        assert_eq!(verify_frequency(&mut hw, &cfg), FreqCheck::Fail);
    }

    #[test]
    fn probe_reports_every_flag_its_reads_consume() {
        let cfg = FreqCheckConfig::default();
        // A flag pending at the warm-up read, another tainting the first
        // burst: two consumed, and the retried measurement still passes.
        let mut hw =
            ScriptedHardware::new(vec![hit(0), hit(1), ok(2), ok(3)], vec![8_000, 8_000]);
        let probe = probe_frequency(&mut hw, &cfg);
        assert_eq!(probe.verdict, FreqCheck::Pass);
        assert_eq!(probe.interruptions, 2);

        let mut hw = ScriptedHardware::new(vec![ok(0), ok(9_000)], vec![8_500]);
        assert_eq!(probe_frequency(&mut hw, &cfg).interruptions, 0);
    }

    #[test]
    fn noted_interruption_ends_the_epoch_and_reanchors() {
        // The counter rolled back during a preemption whose flag some other
        // reader consumed. Folding it in must end the epoch and re-anchor,
        // so the rollback is not mistaken for a hardware fault.
        let mut hw = ScriptedHardware::reads(vec![ok(1_000), ok(40), ok(65)]);
        let mut acct = EpochAccount::start(&mut hw);
        assert_eq!(acct.note_interruption(&mut hw), 0);
        assert_eq!(acct.epoch_number(), 2);
        assert_eq!(acct.update(&mut hw).unwrap(), Advance::Advanced { ns: 25 });
        assert_eq!(acct.accumulated(), 25);
    }

    #[test]
    fn noted_interruption_surfaces_a_flag_its_own_read_consumed() {
        let mut hw = ScriptedHardware::reads(vec![ok(0), hit(50), ok(60)]);
        let mut acct = EpochAccount::start(&mut hw);
        assert_eq!(acct.note_interruption(&mut hw), 1);
        assert_eq!(acct.note_interruption(&mut hw), 0);
        assert_eq!(acct.epoch_number(), 3);
    }

    #[test]
    fn median_of_repeats_rides_out_one_outlier() {
        let cfg = FreqCheckConfig {
            repeats: 3,
            ..FreqCheckConfig::default()
        };
        let reads = (0..6).map(ok).collect();
        let mut hw = ScriptedHardware::new(reads, vec![8_000, 50_000, 8_200]);
        assert_eq!(verify_frequency(&mut hw, &cfg), FreqCheck::Pass);
    }

    #[test]
    fn escape_bounds_match_band_over_latency() {
        let cfg = FreqCheckConfig::default();
        let (lo, hi) = escape_bounds(&cfg, 7_000, 10_500);
        assert!((lo - 2.0 / 3.0).abs() < 1e-12);
        assert!((hi - 1.5).abs() < 1e-12);
    }

    #[test]
    fn multiplier_for_symmetric_45_percent_error() {
        let m = required_multiplier(0.45, 0.45).unwrap();
        assert!((m - 2.6363636363636362).abs() < 1e-12);
    }

    #[test]
    fn multiplier_for_symmetric_50_percent_error_is_three() {
        assert_eq!(required_multiplier(0.5, 0.5).unwrap(), 3.0);
    }

    #[test]
    fn multiplier_rejects_nonsense() {
        assert!(required_multiplier(1.0, 0.5).is_err());
        assert!(required_multiplier(-0.1, 0.5).is_err());
        assert!(required_multiplier(0.5, -0.1).is_err());
        assert!(required_multiplier(0.5, f64::INFINITY).is_err());
    }

    #[test]
    fn detection_is_certain_below_escape_floor() {
        let cfg = FreqCheckConfig::default();
        let model = LatencyModel::default();
        for factor in [0.1, 0.3, 0.5, 2.0 / 3.0] {
            let p = detection_probability(&cfg, factor, &model, 20_000, 11);
            assert_eq!(p, 1.0, "factor {factor}");
        }
    }

    #[test]
    fn detection_is_zero_at_honest_rate() {
        let cfg = FreqCheckConfig::default();
        let model = LatencyModel::default();
        assert_eq!(detection_probability(&cfg, 1.0, &model, 20_000, 11), 0.0);
    }

    /// Closed-form detection probability for the uniform latency model:
    /// the check passes iff the true latency lands in the preimage of the
    /// accepted band under scaling by `f`.
    fn analytic_detection(cfg: &FreqCheckConfig, a: f64, b: f64, f: f64) -> f64 {
        let lo = cfg.lower_bound_ticks as f64 / f;
        let hi = cfg.upper_bound_ticks as f64 / f;
        let overlap = (b.min(hi) - a.max(lo)).max(0.0);
        1.0 - overlap / (b - a)
    }

    #[test]
    fn monte_carlo_matches_analytic_overlap() {
        let cfg = FreqCheckConfig::default();
        let model = LatencyModel::default();
        for factor in [0.7, 0.8, 0.9, 0.95, 1.05, 1.2, 1.4, 1.6] {
            let analytic = analytic_detection(&cfg, 7_000.0, 10_500.0, factor);
            let estimated = detection_probability(&cfg, factor, &model, 400_000, 17);
            assert!(
                (estimated - analytic).abs() < 0.004,
                "factor {factor}: estimated {estimated}, analytic {analytic}"
            );
        }
    }

    #[test]
    fn fixed_latency_model_detects_iff_scaled_out_of_band() {
        let cfg = FreqCheckConfig::default();
        let model = LatencyModel::Fixed { ticks: 8_000 };
        assert_eq!(detection_probability(&cfg, 1.0, &model, 100, 1), 0.0);
        assert_eq!(detection_probability(&cfg, 1.3, &model, 100, 1), 0.0); // 10400 in band
        assert_eq!(detection_probability(&cfg, 1.4, &model, 100, 1), 1.0); // 11200 out
        assert_eq!(detection_probability(&cfg, 0.8, &model, 100, 1), 1.0); // 6400 out
    }

    proptest! {
        /// Splitting a clean interval into sub-reads credits the same
        /// total as reading once at the end.
        #[test]
        fn interval_accounting_is_additive(cuts in proptest::collection::vec(1u64..1_000, 1..20)) {
            let mut ticks = 0;
            let mut reads = vec![ok(0)];
            for c in &cuts {
                ticks += c;
                reads.push(ok(ticks));
            }
            let mut hw = ScriptedHardware::reads(reads);
            let mut acct = EpochAccount::start(&mut hw);
            for _ in &cuts {
                acct.update(&mut hw).unwrap();
            }
            prop_assert_eq!(acct.accumulated(), ticks);

            let mut hw = ScriptedHardware::reads(vec![ok(0), ok(ticks)]);
            let mut acct_once = EpochAccount::start(&mut hw);
            acct_once.update(&mut hw).unwrap();
            prop_assert_eq!(acct_once.accumulated(), ticks);
        }

        /// Whatever the interleaving of interrupts, accumulated time never
        /// exceeds the true clean time and epochs count detections exactly.
        #[test]
        fn accumulation_is_a_lower_bound(
            steps in proptest::collection::vec((1u64..1_000, proptest::bool::ANY), 1..40)
        ) {
            let mut ticks = 0u64;
            let mut reads = vec![ok(0)];
            let mut clean_total = 0u64;
            let mut detections = 0u64;
            for (delta, interrupted) in &steps {
                ticks += delta;
                if *interrupted {
                    reads.push(hit(ticks));
                    detections += 1;
                } else {
                    reads.push(ok(ticks));
                    clean_total += delta;
                }
            }
            let mut hw = ScriptedHardware::reads(reads);
            let mut acct = EpochAccount::start(&mut hw);
            for _ in &steps {
                acct.update(&mut hw).unwrap();
            }
            prop_assert!(acct.accumulated() <= clean_total);
            prop_assert_eq!(acct.epoch_number(), 1 + detections);
        }

        /// If a check passes, the frequency factor must lie inside the
        /// escape band derived from the latency limits.
        #[test]
        fn passing_checks_bound_the_frequency(factor in 0.05f64..4.0, seed in 0u64..500) {
            let cfg = FreqCheckConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let latency = rand::Rng::gen_range(&mut rng, 7_000f64..10_500f64);
            let observed = (latency * factor) as u64;
            let mut hw = ScriptedHardware::new(vec![ok(0), ok(1)], vec![observed]);
            if verify_frequency(&mut hw, &cfg) == FreqCheck::Pass {
                let (lo, hi) = escape_bounds(&cfg, 7_000, 10_500);
                prop_assert!(factor >= lo - 1e-3 && factor <= hi + 1e-3,
                    "factor {} escaped outside [{}, {}]", factor, lo, hi);
            }
        }
    }
}
