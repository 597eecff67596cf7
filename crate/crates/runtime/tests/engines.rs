//! Engine behavior against scripted hardware and an in-memory message hub.
//!
//! The rig is single-threaded and fully deterministic: whenever the holder
//! parks between transport polls, its hardware hook advances the granter's
//! clock by the same amount and gives the granter one serving turn. Tests
//! script losses, delays, interruptions, and counter misbehavior by poking
//! the shared clock and hub handles.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;

use leaseguard_core::{
    AtomicSection, CommitOutcome, CounterRead, HardwareView, HolderPhase, HostId, LeaseConfig,
    ProtocolMessage, SectionToken, SubmitOutcome, TickRatio,
};
use leaseguard_runtime::{
    EngineError, EnginePolicy, EventKind, EventSink, GranterEngine, HolderEngine, HostHardware,
    LogEvent, RenewOutcome,
};
use leaseguard_wire::{Endpoint, WireError};

const GRANTER_HOST: HostId = 0;
const HOLDER_HOST: HostId = 1;
const OTHER_HOST: HostId = 2;
const LEASE: u64 = 77;

const TERM: u64 = 10_000_000; // 10ms
const POLL: u64 = 100_000; // 0.1ms between transport polls
const DELAY: u64 = 500_000; // assumed one-way bound; response window 1ms

fn config() -> LeaseConfig {
    LeaseConfig {
        lease_term: TERM,
        granter_multiplier: 2.0,
        drift: 0.0,
        renew_fraction: 0.2,
    }
}

fn policy() -> EnginePolicy {
    EnginePolicy {
        max_delivery_delay: DELAY,
        poll_interval: POLL,
        max_request_retries: 4,
        max_submit_retries: 4,
        ..EnginePolicy::default()
    }
}

// --- scripted clock ---------------------------------------------------------

struct ClockInner {
    ticks: u64,
    pending_interrupt: bool,
    entropy_ticks: u64,
}

impl Default for ClockInner {
    fn default() -> Self {
        // Entropy latency defaults to mid-band so epoch-end rate checks pass
        // unless a test deliberately detunes them.
        ClockInner {
            ticks: 0,
            pending_interrupt: false,
            entropy_ticks: 8_000,
        }
    }
}

#[derive(Clone, Default)]
struct BenchClock(Rc<RefCell<ClockInner>>);

impl BenchClock {
    fn advance(&self, ns: u64) {
        self.0.borrow_mut().ticks += ns;
    }

    fn regress(&self, ns: u64) {
        let mut inner = self.0.borrow_mut();
        inner.ticks = inner.ticks.saturating_sub(ns);
    }

    fn interrupt(&self) {
        self.0.borrow_mut().pending_interrupt = true;
    }

    fn set_entropy(&self, ticks: u64) {
        self.0.borrow_mut().entropy_ticks = ticks;
    }
}

struct BenchHw {
    clock: BenchClock,
    on_idle: Option<Box<dyn FnMut(u64)>>,
}

impl BenchHw {
    fn plain(clock: BenchClock) -> Self {
        BenchHw {
            clock,
            on_idle: None,
        }
    }

    fn with_idle_hook(clock: BenchClock, hook: Box<dyn FnMut(u64)>) -> Self {
        BenchHw {
            clock,
            on_idle: Some(hook),
        }
    }
}

impl HardwareView for BenchHw {
    fn read_counter(&mut self) -> CounterRead {
        let mut inner = self.clock.0.borrow_mut();
        let interrupted = std::mem::take(&mut inner.pending_interrupt);
        CounterRead {
            ticks: inner.ticks,
            interrupted,
        }
    }

    fn entropy_op(&mut self, _ops: u32) -> u64 {
        self.clock.0.borrow().entropy_ticks
    }

    fn tick_ratio(&self) -> TickRatio {
        TickRatio::IDENTITY
    }
}

impl HostHardware for BenchHw {
    fn idle(&mut self, ns: u64) {
        self.clock.advance(ns);
        if let Some(hook) = &mut self.on_idle {
            hook(ns);
        }
    }

    fn now(&mut self) -> u64 {
        self.clock.0.borrow().ticks
    }
}

// --- in-memory hub -----------------------------------------------------------

#[derive(Default)]
struct HubInner {
    to_granter: VecDeque<ProtocolMessage>,
    to_holder: BTreeMap<HostId, VecDeque<ProtocolMessage>>,
    drop_all_requests: bool,
    drop_next_request: bool,
    park_replies: bool,
    parked: VecDeque<ProtocolMessage>,
}

#[derive(Clone, Default)]
struct Hub(Rc<RefCell<HubInner>>);

impl Hub {
    fn holder_port(&self, host: HostId) -> HolderPort {
        HolderPort {
            hub: self.clone(),
            host,
        }
    }

    fn granter_port(&self) -> GranterPort {
        GranterPort { hub: self.clone() }
    }

    fn drop_next_request(&self) {
        self.0.borrow_mut().drop_next_request = true;
    }

    fn drop_all_requests(&self, on: bool) {
        self.0.borrow_mut().drop_all_requests = on;
    }

    fn park_replies(&self, on: bool) {
        self.0.borrow_mut().park_replies = on;
    }

    /// Delivers the oldest parked reply to its holder.
    fn release_parked(&self) {
        let mut inner = self.0.borrow_mut();
        if let Some(msg) = inner.parked.pop_front() {
            inner.to_holder.entry(msg.holder).or_default().push_back(msg);
        }
    }
}

struct HolderPort {
    hub: Hub,
    host: HostId,
}

impl Endpoint for HolderPort {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), WireError> {
        let mut inner = self.hub.0.borrow_mut();
        if inner.drop_next_request {
            inner.drop_next_request = false;
            return Ok(());
        }
        if inner.drop_all_requests {
            return Ok(());
        }
        inner.to_granter.push_back(*msg);
        Ok(())
    }

    fn poll(&mut self) -> Result<Option<ProtocolMessage>, WireError> {
        Ok(self
            .hub
            .0
            .borrow_mut()
            .to_holder
            .entry(self.host)
            .or_default()
            .pop_front())
    }
}

struct GranterPort {
    hub: Hub,
}

impl Endpoint for GranterPort {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), WireError> {
        let mut inner = self.hub.0.borrow_mut();
        if inner.park_replies {
            inner.parked.push_back(*msg);
        } else {
            inner
                .to_holder
                .entry(msg.holder)
                .or_default()
                .push_back(*msg);
        }
        Ok(())
    }

    fn poll(&mut self) -> Result<Option<ProtocolMessage>, WireError> {
        Ok(self.hub.0.borrow_mut().to_granter.pop_front())
    }
}

// --- section and log doubles -------------------------------------------------

#[derive(Clone, Default)]
struct ScriptSection {
    abort_next: Rc<RefCell<u32>>,
}

impl AtomicSection for ScriptSection {
    fn begin(&mut self) -> SectionToken {
        SectionToken(0)
    }

    fn commit(&mut self, _token: SectionToken) -> CommitOutcome {
        let mut remaining = self.abort_next.borrow_mut();
        if *remaining > 0 {
            *remaining -= 1;
            CommitOutcome::Aborted
        } else {
            CommitOutcome::Committed
        }
    }

    fn abort(&mut self, _token: SectionToken) {}
}

#[derive(Clone, Default)]
struct SharedLog(Rc<RefCell<Vec<LogEvent>>>);

impl EventSink for SharedLog {
    fn record(&mut self, event: LogEvent) {
        self.0.borrow_mut().push(event);
    }
}

impl SharedLog {
    fn has(&self, pred: impl Fn(&EventKind) -> bool) -> bool {
        self.0.borrow().iter().any(|e| pred(&e.kind))
    }

    fn count(&self, pred: impl Fn(&EventKind) -> bool) -> usize {
        self.0.borrow().iter().filter(|e| pred(&e.kind)).count()
    }
}

// --- rig ----------------------------------------------------------------------

struct Rig {
    hub: Hub,
    holder_clock: BenchClock,
    granter_clock: BenchClock,
    granter: Rc<RefCell<GranterEngine<BenchHw, GranterPort>>>,
    holder: HolderEngine<BenchHw, HolderPort, ScriptSection>,
    holder_log: SharedLog,
    granter_log: SharedLog,
    abort_next: Rc<RefCell<u32>>,
}

/// Builds holder + granter wired through the hub. `make_hook` sees the hub
/// and both clocks and returns a callback invoked with the global idle
/// number (1-based) on every holder park, before the granter's turn.
fn build_rig(
    policy_: EnginePolicy,
    make_hook: impl FnOnce(&Hub, &BenchClock, &BenchClock) -> Box<dyn FnMut(u64)>,
) -> Rig {
    let hub = Hub::default();
    let holder_clock = BenchClock::default();
    let granter_clock = BenchClock::default();
    let holder_log = SharedLog::default();
    let granter_log = SharedLog::default();
    let granter = Rc::new(RefCell::new(
        GranterEngine::new(
            GRANTER_HOST,
            config(),
            policy_.clone(),
            BenchHw::plain(granter_clock.clone()),
            hub.granter_port(),
            Box::new(granter_log.clone()),
        )
        .unwrap(),
    ));

    let mut hook = make_hook(&hub, &holder_clock, &granter_clock);
    let idles = Rc::new(RefCell::new(0u64));
    let serve_granter = granter.clone();
    let serve_clock = granter_clock.clone();
    let holder_hw = BenchHw::with_idle_hook(
        holder_clock.clone(),
        Box::new(move |ns| {
            let n = {
                let mut count = idles.borrow_mut();
                *count += 1;
                *count
            };
            hook(n);
            serve_clock.advance(ns);
            serve_granter.borrow_mut().serve_once().unwrap();
        }),
    );

    let section = ScriptSection::default();
    let abort_next = section.abort_next.clone();
    let holder = HolderEngine::new(
        HOLDER_HOST,
        LEASE,
        config(),
        policy_,
        holder_hw,
        hub.holder_port(HOLDER_HOST),
        section,
        Box::new(holder_log.clone()),
    )
    .unwrap();

    Rig {
        hub,
        holder_clock,
        granter_clock,
        granter,
        holder,
        holder_log,
        granter_log,
        abort_next,
    }
}

fn rig() -> Rig {
    build_rig(policy(), |_, _, _| Box::new(|_| {}))
}

// --- renewal paths -------------------------------------------------------------

#[test]
fn acquires_then_reports_active_then_extends() {
    let mut r = rig();

    assert!(matches!(
        r.holder.update_renew_lease().unwrap(),
        RenewOutcome::Renewed
    ));
    assert_eq!(r.holder.state().phase, HolderPhase::ValidLease);
    // One poll interval passed between send and the reply landing.
    assert_eq!(r.holder.state().expire_timer, TERM - POLL);
    assert_eq!(r.holder.state().epoch_number, 1);
    assert_eq!(r.holder.counters().requests_sent, 1);
    assert_eq!(r.granter.borrow().counters().grants_fresh, 1);
    assert_eq!(r.granter.borrow().active_grants(), 1);

    // Plenty of countdown left: nothing is sent.
    assert!(matches!(
        r.holder.update_renew_lease().unwrap(),
        RenewOutcome::Active
    ));
    assert_eq!(r.holder.counters().requests_sent, 1);

    // Burn down into the renewal window and extend.
    r.holder_clock.advance(8_000_000);
    assert!(matches!(
        r.holder.update_renew_lease().unwrap(),
        RenewOutcome::Renewed
    ));
    assert_eq!(r.holder.state().epoch_number, 1);
    assert_eq!(r.holder.state().expire_timer, TERM - POLL);
    assert_eq!(r.granter.borrow().counters().extensions, 1);
    assert!(r.holder_log.has(|k| matches!(
        k,
        EventKind::RequestSent { fresh: false, .. }
    )));
}

#[test]
fn lost_request_times_out_then_retry_succeeds() {
    let mut r = rig();
    r.holder.update_renew_lease().unwrap();

    r.holder_clock.advance(8_000_000);
    r.hub.drop_next_request();
    assert!(matches!(
        r.holder.update_renew_lease().unwrap(),
        RenewOutcome::Renewed
    ));
    assert_eq!(r.holder.counters().timeouts, 1);
    assert_eq!(r.holder.counters().retries, 1);
    assert_eq!(r.holder.counters().requests_sent, 3);
    assert!(r
        .holder_log
        .has(|k| matches!(k, EventKind::RequestTimeout { attempt: 0, .. })));
}

#[test]
fn request_budget_exhaustion_fails() {
    let mut r = rig();
    r.hub.drop_all_requests(true);

    assert!(matches!(
        r.holder.update_renew_lease().unwrap(),
        RenewOutcome::Failed
    ));
    // One initial attempt plus max_request_retries re-sends, all timing out.
    assert_eq!(r.holder.counters().requests_sent, 5);
    assert_eq!(r.holder.counters().timeouts, 5);
    assert_eq!(r.holder.state().phase, HolderPhase::Blocked);
}

#[test]
fn contended_lease_blocks_second_holder_until_expiry() {
    // Hand-built two-holder rig: both idle hooks give the granter a turn.
    let hub = Hub::default();
    let granter_clock = BenchClock::default();
    let granter = Rc::new(RefCell::new(
        GranterEngine::new(
            GRANTER_HOST,
            config(),
            policy(),
            BenchHw::plain(granter_clock.clone()),
            hub.granter_port(),
            Box::new(SharedLog::default()),
        )
        .unwrap(),
    ));

    let mut holders = Vec::new();
    let mut clocks = Vec::new();
    for host in [HOLDER_HOST, OTHER_HOST] {
        let clock = BenchClock::default();
        let g = granter.clone();
        let gc = granter_clock.clone();
        let hw = BenchHw::with_idle_hook(
            clock.clone(),
            Box::new(move |ns| {
                gc.advance(ns);
                g.borrow_mut().serve_once().unwrap();
            }),
        );
        holders.push(
            HolderEngine::new(
                host,
                LEASE,
                config(),
                policy(),
                hw,
                hub.holder_port(host),
                ScriptSection::default(),
                Box::new(SharedLog::default()),
            )
            .unwrap(),
        );
        clocks.push(clock);
    }
    let (mut first, mut second) = {
        let s = holders.pop().unwrap();
        (holders.pop().unwrap(), s)
    };

    assert!(matches!(
        first.update_renew_lease().unwrap(),
        RenewOutcome::Renewed
    ));
    assert!(matches!(
        second.update_renew_lease().unwrap(),
        RenewOutcome::Blocked
    ));
    assert_eq!(second.counters().requests_sent, 1);
    assert_eq!(granter.borrow().counters().rejections, 1);

    // Let the grant run out on the granter (and the countdown on the first
    // holder), then the second holder gets its turn.
    granter_clock.advance(25_000_000);
    clocks[0].advance(25_000_000);
    assert_eq!(granter.borrow_mut().update_lease_client().unwrap(), 1);
    assert_eq!(granter.borrow().active_grants(), 0);

    assert_eq!(first.age().unwrap(), HolderPhase::ValidLease);
    assert!(!first.lease_usable());
    assert_eq!(first.counters().local_expiries, 1);

    assert!(matches!(
        second.update_renew_lease().unwrap(),
        RenewOutcome::Renewed
    ));
    assert_eq!(granter.borrow().counters().grants_fresh, 2);
}

#[test]
fn interruption_mid_wait_reacquires_under_next_epoch() {
    let mut r = build_rig(policy(), |_, holder_clock, _| {
        let hc = holder_clock.clone();
        Box::new(move |n| {
            if n == 4 {
                hc.interrupt();
            }
        })
    });
    r.holder.update_renew_lease().unwrap();

    r.holder_clock.advance(8_000_000);
    r.hub.drop_next_request();
    assert!(matches!(
        r.holder.update_renew_lease().unwrap(),
        RenewOutcome::Renewed
    ));
    assert_eq!(r.holder.state().epoch_number, 2);
    assert_eq!(r.holder.counters().epochs_ended, 1);
    assert_eq!(r.holder.counters().timeouts, 0);
    assert_eq!(r.holder.counters().retries, 1);
    assert_eq!(r.holder.counters().requests_sent, 3);
    // The re-request after the epoch ended goes out as a fresh acquisition
    // and the granter treats it as an extension of the same holder's grant.
    assert_eq!(r.granter.borrow().counters().extensions, 1);
    assert!(r
        .holder_log
        .has(|k| matches!(k, EventKind::EpochEnded { epoch: 2 })));
}

#[test]
fn reply_to_a_timed_out_attempt_cannot_validate_the_new_countdown() {
    let mut r = build_rig(policy(), |hub, _, _| {
        let hub = hub.clone();
        Box::new(move |n| {
            if n == 13 || n == 15 {
                hub.release_parked();
            }
        })
    });
    r.holder.update_renew_lease().unwrap();

    r.holder_clock.advance(8_000_000);
    r.hub.park_replies(true);
    assert!(matches!(
        r.holder.update_renew_lease().unwrap(),
        RenewOutcome::Renewed
    ));
    // Attempt 0's reply (parked, then released during attempt 1's wait)
    // carries the old request timestamp and must be dropped; only attempt
    // 1's own reply validates the countdown armed at attempt 1's send.
    assert_eq!(r.holder.counters().timeouts, 1);
    assert_eq!(r.holder.counters().replies_ignored, 1);
    assert_eq!(r.holder.state().last_request_ts, 9_100_000);
    assert_eq!(r.holder.state().expire_timer, TERM - 4 * POLL);
    assert_eq!(r.holder.state().phase, HolderPhase::ValidLease);
    assert_eq!(r.granter.borrow().counters().extensions, 2);
}

// --- guarded submission ----------------------------------------------------------

#[test]
fn submission_releases_once_and_interruption_renews_then_retries() {
    let mut r = rig();
    r.holder.update_renew_lease().unwrap();
    let mut sink: Vec<Vec<u8>> = Vec::new();

    let outcome = r
        .holder
        .lease_protected_syscall(b"effect-1", &mut sink)
        .unwrap();
    assert_eq!(outcome, SubmitOutcome::Submitted);
    assert_eq!(sink.len(), 1);

    // An interruption lands before the next submission: the first attempt
    // must abort without releasing, then renew under epoch 2 and succeed.
    r.holder_clock.interrupt();
    let outcome = r
        .holder
        .lease_protected_syscall(b"effect-2", &mut sink)
        .unwrap();
    assert_eq!(outcome, SubmitOutcome::Submitted);
    assert_eq!(sink.len(), 2);
    assert_eq!(sink[1], b"effect-2");
    assert_eq!(r.holder.state().epoch_number, 2);
    assert_eq!(r.holder.counters().epochs_ended, 1);
    assert_eq!(r.holder.counters().submit_retries, 1);
    assert_eq!(r.holder.counters().effects_released, 2);
    assert_eq!(
        r.holder_log
            .count(|k| matches!(k, EventKind::EffectReleased { .. })),
        2
    );
}

#[test]
fn section_aborts_retry_within_budget_then_give_up() {
    let mut r = rig();
    r.holder.update_renew_lease().unwrap();
    let mut sink: Vec<Vec<u8>> = Vec::new();

    *r.abort_next.borrow_mut() = 2;
    let outcome = r
        .holder
        .lease_protected_syscall(b"bounced", &mut sink)
        .unwrap();
    assert_eq!(outcome, SubmitOutcome::Submitted);
    assert_eq!(sink.len(), 1);
    assert_eq!(r.holder.counters().submit_retries, 2);
    assert!(r.holder_log.has(|k| matches!(
        k,
        EventKind::SubmitResult {
            outcome: SubmitOutcome::Submitted,
            attempts: 3,
            ..
        }
    )));

    *r.abort_next.borrow_mut() = u32::MAX;
    let outcome = r
        .holder
        .lease_protected_syscall(b"never", &mut sink)
        .unwrap();
    assert_eq!(outcome, SubmitOutcome::Aborted);
    assert_eq!(sink.len(), 1);
    assert!(r.holder.lease_usable());
}

#[test]
fn detection_disabled_stays_blind_to_interruptions() {
    let mut r = build_rig(
        EnginePolicy {
            interrupt_detection: false,
            freq_check_on_epoch: false,
            ..policy()
        },
        |_, _, _| Box::new(|_| {}),
    );
    r.holder.update_renew_lease().unwrap();

    r.holder_clock.interrupt();
    r.holder_clock.advance(1_000_000);
    assert_eq!(r.holder.age().unwrap(), HolderPhase::ValidLease);
    assert_eq!(r.holder.state().epoch_number, 1);
    assert_eq!(r.holder.counters().epochs_ended, 0);
    // The interval spanning the interruption was credited as if clean.
    assert_eq!(r.holder.state().expire_timer, TERM - POLL - 1_000_000);

    let mut sink: Vec<Vec<u8>> = Vec::new();
    let outcome = r
        .holder
        .lease_protected_syscall(b"unguarded", &mut sink)
        .unwrap();
    assert_eq!(outcome, SubmitOutcome::Submitted);
    assert_eq!(sink.len(), 1);
}

// --- clock misbehavior ------------------------------------------------------------

#[test]
fn counter_regression_is_terminal() {
    let mut r = rig();
    r.holder.update_renew_lease().unwrap();

    r.holder_clock.regress(1_000);
    assert!(matches!(
        r.holder.age(),
        Err(EngineError::TimerFailed(_))
    ));
    // Sticky: later calls fail without touching the hardware again.
    assert!(matches!(
        r.holder.update_renew_lease(),
        Err(EngineError::TimerFailed(_))
    ));
    assert_eq!(
        r.holder_log
            .count(|k| matches!(k, EventKind::TimerFailed { .. })),
        1
    );
}

#[test]
fn rate_alarm_refuses_service_until_a_check_passes() {
    let mut r = rig();
    r.holder.update_renew_lease().unwrap();

    // Detune the counter rate, then force the epoch-end check to see it.
    r.holder_clock.set_entropy(5_000);
    r.holder_clock.interrupt();
    assert!(matches!(
        r.holder.update_renew_lease().unwrap(),
        RenewOutcome::Failed
    ));
    assert!(r.holder.clock_suspect());
    assert_eq!(r.holder.counters().freq_alarms, 1);
    assert_eq!(r.holder.counters().requests_sent, 1); // nothing new sent
    assert!(r.holder_log.has(|k| matches!(k, EventKind::FreqAlarm)));

    // Rate restored: the next pass re-verifies and proceeds.
    r.holder_clock.set_entropy(8_000);
    assert!(matches!(
        r.holder.update_renew_lease().unwrap(),
        RenewOutcome::Renewed
    ));
    assert!(!r.holder.clock_suspect());
    assert_eq!(r.holder.counters().freq_alarms, 1);
    assert_eq!(r.holder.state().epoch_number, 2);
    assert!(r.holder_log.has(|k| matches!(k, EventKind::FreqRecovered)));
}

#[test]
fn granter_event_log_reflects_grant_lifecycle() {
    let mut r = rig();
    r.holder.update_renew_lease().unwrap();
    assert!(r.granter_log.has(|k| matches!(
        k,
        EventKind::GrantInstalled {
            lease_id: LEASE,
            holder: HOLDER_HOST,
            ..
        }
    )));

    r.granter_clock.advance(25_000_000);
    assert_eq!(r.granter.borrow_mut().update_lease_client().unwrap(), 1);
    assert!(r.granter_log.has(|k| matches!(
        k,
        EventKind::GrantExpired {
            lease_id: LEASE,
            holder: HOLDER_HOST,
        }
    )));
    assert_eq!(r.granter.borrow().counters().expirations, 1);
}
