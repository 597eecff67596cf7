//! The world hosts run in: one true clock, per-host counters the adversary
//! may have skewed, a message fabric, and a turn-taking scheduler that lets
//! unmodified engine code run over simulated hardware.
//!
//! Every host runs its script on its own OS thread, but exactly one thread
//! executes at a time. A host keeps the baton until a hardware operation
//! advances its local clock; the baton then goes to the host with the
//! smallest local time (ties broken by position). The interleaving depends
//! only on the scenario and seed, never on OS scheduling, which is what
//! makes runs byte-identical.
//!
//! Preemption windows and clock mutations are fixed before the run starts.
//! A host's execution cursor simply skips its windows; the skipped span
//! surfaces through the sticky interrupt flag at its next counter read.
//! Mutations targeting a host that is not preempted at that instant are
//! refused and logged — the adversary only reaches the clock while it has
//! the host stopped.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;

use leaseguard_core::{
    AtomicSection, CommitOutcome, CounterRead, EffectSink, HardwareView, HostId, Nanos,
    ProtocolMessage, SectionToken, TickRatio,
};
use leaseguard_runtime::{
    Endpoint, EventSink, GranterEngine, HolderEngine, HostHardware, LogEvent, WireError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clock::{poisson_starts, ClockMutation, ClockTimeline, MutationKind, Windows};
use crate::scenario::{MsgRule, Scenario};
use crate::trace::{Trace, TraceBody, TraceEvent};
use crate::SimError;

/// Unwind payload a hardware operation throws once the run is over. Scripts
/// catch it (see [`run_until_horizon`]) to emit their end-of-run summaries.
pub struct HorizonReached;

/// Runs `f`, absorbing the end-of-run unwind. Returns whether the horizon
/// was hit (as opposed to `f` returning on its own).
pub fn run_until_horizon<F: FnOnce()>(f: F) -> bool {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(()) => false,
        Err(payload) if payload.is::<HorizonReached>() => true,
        Err(payload) => resume_unwind(payload),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Turn {
    Host(usize),
    Done,
}

struct HostCore {
    id: HostId,
    local_now: Nanos,
    windows: Windows,
    clock: ClockTimeline,
    last_flag_read: Nanos,
    finished: bool,
    inbox: BTreeMap<(Nanos, u64), ProtocolMessage>,
    entropy_rng: ChaCha8Rng,
    section_rng: ChaCha8Rng,
    suppress_flag: bool,
}

struct RuleState {
    rule: MsgRule,
    remaining: Option<u32>,
}

impl RuleState {
    fn fire_if_matching(&mut self, from: HostId, to: HostId, msg: &ProtocolMessage, now: Nanos) -> bool {
        if self.remaining == Some(0) {
            return false;
        }
        let r = &self.rule;
        let hit = r.from.map_or(true, |f| f == from)
            && r.to.map_or(true, |t| t == to)
            && r.kind.map_or(true, |k| k == msg.kind)
            && now >= r.after_ns;
        if hit {
            if let Some(n) = &mut self.remaining {
                *n -= 1;
            }
        }
        hit
    }
}

struct WorldCore {
    horizon: Nanos,
    turn: Turn,
    hosts: Vec<HostCore>,
    trace: Vec<TraceEvent>,
    seq: u64,
    net_seq: u64,
    net_rng: ChaCha8Rng,
    base_delay: Nanos,
    jitter_mean: Nanos,
    delay_cap: Option<Nanos>,
    drop_rules: Vec<RuleState>,
    delay_rules: Vec<RuleState>,
    gen_drop_p: f64,
    gen_delay_p: f64,
    gen_extra_delay: Nanos,
    read_cost: Nanos,
    entropy_min: Nanos,
    entropy_max: Nanos,
    section_cost: Nanos,
    spurious_abort_p: f64,
    errors: Vec<String>,
}

impl WorldCore {
    fn idx_of(&self, host: HostId) -> Option<usize> {
        self.hosts.iter().position(|h| h.id == host)
    }

    fn emit(&mut self, t: Nanos, body: TraceBody) {
        let seq = self.seq;
        self.seq += 1;
        self.trace.push(TraceEvent { t, seq, body });
    }

    /// Unfinished host with the smallest (local time, position).
    fn runnable_min(&self) -> Option<usize> {
        self.hosts
            .iter()
            .enumerate()
            .filter(|(_, h)| !h.finished)
            .min_by_key(|(i, h)| (h.local_now, *i))
            .map(|(i, _)| i)
    }

    /// Consumes `cost` nanoseconds of execution, skipping preemptions.
    fn advance_execution(&mut self, idx: usize, cost: Nanos) {
        let h = &mut self.hosts[idx];
        let mut t = h.local_now;
        let mut rem = cost;
        loop {
            if let Some((_, end)) = h.windows.covering(t) {
                t = end;
                continue;
            }
            if rem == 0 {
                break;
            }
            let run = match h.windows.next_start_after(t) {
                Some(s) => rem.min(s - t),
                None => rem,
            };
            t += run;
            rem -= run;
        }
        h.local_now = t;
    }

    /// Parks until `target` true time; a preemption covering the wake point
    /// delays it to the window's end.
    fn sleep_until(&mut self, idx: usize, target: Nanos) {
        let h = &mut self.hosts[idx];
        let mut t = target.max(h.local_now);
        while let Some((_, end)) = h.windows.covering(t) {
            t = end;
        }
        h.local_now = t;
    }

    fn route_message(&mut self, from: HostId, to: HostId, msg: &ProtocolMessage) {
        let now = self.hosts[self.idx_of(from).expect("sender exists")].local_now;
        let mut dropped = false;
        for rule in &mut self.drop_rules {
            if rule.fire_if_matching(from, to, msg, now) {
                dropped = true;
                break;
            }
        }
        if !dropped && self.gen_drop_p > 0.0 {
            dropped = self.net_rng.gen::<f64>() < self.gen_drop_p;
        }
        let mut extra = 0;
        for rule in &mut self.delay_rules {
            if rule.fire_if_matching(from, to, msg, now) {
                extra += rule.rule.extra_ns;
            }
        }
        if self.gen_delay_p > 0.0 && self.net_rng.gen::<f64>() < self.gen_delay_p {
            extra += self.gen_extra_delay;
        }
        let jitter = if self.jitter_mean > 0 {
            let u: f64 = self.net_rng.gen();
            (-(1.0 - u).ln() * self.jitter_mean as f64) as Nanos
        } else {
            0
        };
        let mut delay = self.base_delay + jitter + extra;
        if let Some(cap) = self.delay_cap {
            delay = delay.min(cap);
        }
        let deliver_at = now + delay;
        let target = self.idx_of(to);
        let deliverable = !dropped && target.is_some();
        self.emit(
            now,
            TraceBody::MsgSent {
                from,
                to,
                kind: msg.kind,
                lease_id: msg.lease_id,
                epoch: msg.epoch_number,
                req_ts: msg.timestamp,
                deliver_at: deliverable.then_some(deliver_at),
            },
        );
        if deliverable {
            let seq = self.net_seq;
            self.net_seq += 1;
            self.hosts[target.expect("checked")].inbox.insert((deliver_at, seq), *msg);
        }
    }

    fn poll_message(&mut self, idx: usize) -> Option<ProtocolMessage> {
        let now = self.hosts[idx].local_now;
        let key = *self.hosts[idx].inbox.keys().next()?;
        if key.0 > now {
            return None;
        }
        let msg = self.hosts[idx].inbox.remove(&key).expect("key just seen");
        self.emit(
            now,
            TraceBody::MsgDelivered {
                to: self.hosts[idx].id,
                kind: msg.kind,
                lease_id: msg.lease_id,
                epoch: msg.epoch_number,
                req_ts: msg.timestamp,
            },
        );
        Some(msg)
    }
}

struct Shared {
    world: Mutex<WorldCore>,
    cv: Condvar,
}

/// A host's connection to the world. Cloning is cheap; all clones of one
/// host share its timeline. Only valid during that host's turn, which is
/// any time its script or engine code is running.
#[derive(Clone)]
pub struct SimHandle {
    shared: Arc<Shared>,
    idx: usize,
    host: HostId,
}

impl SimHandle {
    fn lock_turn(&self) -> MutexGuard<'_, WorldCore> {
        let g = self.shared.world.lock().expect("world lock");
        debug_assert!(
            matches!(g.turn, Turn::Host(i) if i == self.idx),
            "hardware access outside host {}'s turn",
            self.host
        );
        g
    }

    fn with_world<T>(&self, f: impl FnOnce(&mut WorldCore, usize) -> T) -> T {
        let mut g = self.lock_turn();
        f(&mut g, self.idx)
    }

    /// Hands the baton to whichever host is now furthest behind, and blocks
    /// until it comes back.
    fn yield_from(&self, mut g: MutexGuard<'_, WorldCore>) {
        let next = g.runnable_min().expect("the current host is runnable");
        if next != self.idx {
            g.turn = Turn::Host(next);
            self.shared.cv.notify_all();
            while !matches!(g.turn, Turn::Host(i) if i == self.idx) {
                g = self.shared.cv.wait(g).expect("world lock");
            }
        }
    }

    /// Blocks until the world first grants this host the baton.
    fn await_first_turn(&self) {
        let mut g = self.shared.world.lock().expect("world lock");
        while !matches!(g.turn, Turn::Host(i) if i == self.idx) {
            g = self.shared.cv.wait(g).expect("world lock");
        }
    }

    fn unwind_if_over<'a>(&self, g: MutexGuard<'a, WorldCore>) -> MutexGuard<'a, WorldCore> {
        if g.hosts[self.idx].local_now >= g.horizon {
            drop(g);
            resume_unwind(Box::new(HorizonReached));
        }
        g
    }

    fn op_advance(&self, cost: Nanos) {
        let g = self.lock_turn();
        let mut g = self.unwind_if_over(g);
        g.advance_execution(self.idx, cost);
        self.yield_from(g);
    }

    fn op_sleep(&self, ns: Nanos) {
        let g = self.lock_turn();
        let mut g = self.unwind_if_over(g);
        let target = g.hosts[self.idx].local_now.saturating_add(ns);
        g.sleep_until(self.idx, target);
        self.yield_from(g);
    }

    pub fn host(&self) -> HostId {
        self.host
    }

    /// True simulation time at this host's execution cursor.
    pub fn true_now(&self) -> Nanos {
        self.with_world(|w, idx| w.hosts[idx].local_now)
    }
}

// ---------------------------------------------------------------------------
// Hardware, endpoint, section and log backends over a SimHandle.

pub struct SimHardware {
    h: SimHandle,
}

impl HardwareView for SimHardware {
    fn read_counter(&mut self) -> CounterRead {
        self.h.op_advance(self.h.with_world(|w, _| w.read_cost));
        self.h.with_world(|w, idx| {
            let host = &mut w.hosts[idx];
            let now = host.local_now;
            let ticks = host.clock.value(now);
            let preempted = host.windows.preempted_between(host.last_flag_read, now);
            host.last_flag_read = now;
            CounterRead {
                ticks,
                interrupted: preempted && !host.suppress_flag,
            }
        })
    }

    fn entropy_op(&mut self, _ops: u32) -> u64 {
        let (duration, start_ticks) = self.h.with_world(|w, idx| {
            let (min, max) = (w.entropy_min, w.entropy_max);
            let host = &mut w.hosts[idx];
            let duration = host.entropy_rng.gen_range(min..max);
            (duration, host.clock.value(host.local_now))
        });
        self.h.op_advance(duration);
        let end_ticks = self
            .h
            .with_world(|w, idx| w.hosts[idx].clock.value(w.hosts[idx].local_now));
        end_ticks.saturating_sub(start_ticks)
    }

    fn tick_ratio(&self) -> TickRatio {
        TickRatio::IDENTITY
    }
}

impl HostHardware for SimHardware {
    fn idle(&mut self, ns: Nanos) {
        self.h.op_sleep(ns);
    }

    fn now(&mut self) -> Nanos {
        self.h
            .with_world(|w, idx| w.hosts[idx].clock.value(w.hosts[idx].local_now))
    }
}

enum Route {
    /// Requests go to a fixed peer (the holder's view of the granter).
    To(HostId),
    /// Replies go to whichever holder the message names.
    ByHolder,
}

pub struct SimEndpoint {
    h: SimHandle,
    route: Route,
}

impl Endpoint for SimEndpoint {
    fn send(&mut self, msg: &ProtocolMessage) -> Result<(), WireError> {
        let to = match self.route {
            Route::To(peer) => peer,
            Route::ByHolder => msg.holder,
        };
        let from = self.h.host();
        self.h.with_world(|w, _| w.route_message(from, to, msg));
        Ok(())
    }

    fn poll(&mut self) -> Result<Option<ProtocolMessage>, WireError> {
        Ok(self.h.with_world(|w, idx| w.poll_message(idx)))
    }
}

struct OpenSection {
    token: u64,
    begin_t: Nanos,
    hint_t: Option<Nanos>,
}

/// Atomic sections abort when a preemption lands between `begin` and the
/// end of the vulnerable span (the early-commit hint, when given), or — with
/// the configured probability — spuriously, the way transactional hardware
/// backs off under contention.
pub struct SimSection {
    h: SimHandle,
    open: Option<OpenSection>,
    next_token: u64,
}

impl AtomicSection for SimSection {
    fn begin(&mut self) -> SectionToken {
        let cost = self.h.with_world(|w, _| w.section_cost);
        if cost > 0 {
            self.h.op_advance(cost);
        }
        let begin_t = self.h.true_now();
        self.next_token += 1;
        let token = self.next_token;
        self.open = Some(OpenSection {
            token,
            begin_t,
            hint_t: None,
        });
        SectionToken(token)
    }

    fn commit_early_hint(&mut self, token: &SectionToken) {
        let now = self.h.true_now();
        if let Some(open) = &mut self.open {
            if open.token == token.0 {
                open.hint_t = Some(now);
            }
        }
    }

    fn commit(&mut self, token: SectionToken) -> CommitOutcome {
        let cost = self.h.with_world(|w, _| w.section_cost);
        if cost > 0 {
            self.h.op_advance(cost);
        }
        let open = self.open.take().expect("commit without begin");
        debug_assert_eq!(open.token, token.0, "token from another section");
        let vulnerable_until = open.hint_t.unwrap_or_else(|| self.h.true_now());
        self.h.with_world(|w, idx| {
            let host = &mut w.hosts[idx];
            let preempted = host.windows.preempted_between(open.begin_t, vulnerable_until);
            let spurious =
                w.spurious_abort_p > 0.0 && host.section_rng.gen::<f64>() < w.spurious_abort_p;
            if preempted || spurious {
                CommitOutcome::Aborted
            } else {
                CommitOutcome::Committed
            }
        })
    }

    fn abort(&mut self, token: SectionToken) {
        if let Some(open) = self.open.take() {
            debug_assert_eq!(open.token, token.0, "token from another section");
        }
    }
}

/// Captures engine logs into the trace, re-stamped with true time. The
/// host's own (possibly skewed) stamp is preserved alongside.
pub struct SimSink {
    h: SimHandle,
}

impl EventSink for SimSink {
    fn record(&mut self, event: LogEvent) {
        self.h.with_world(|w, idx| {
            let t = w.hosts[idx].local_now;
            w.emit(
                t,
                TraceBody::Engine {
                    host: event.host,
                    host_time: event.time,
                    kind: event.kind,
                },
            );
        });
    }
}

// ---------------------------------------------------------------------------
// Scripts and the builder.

/// What a host script gets to work with.
pub struct HostCtx {
    handle: SimHandle,
    pub scenario: Arc<Scenario>,
}

impl HostCtx {
    pub fn host(&self) -> HostId {
        self.handle.host()
    }

    pub fn hardware(&self) -> SimHardware {
        SimHardware {
            h: self.handle.clone(),
        }
    }

    /// Endpoint that sends requests to `peer` (a holder's uplink).
    pub fn endpoint_to(&self, peer: HostId) -> SimEndpoint {
        SimEndpoint {
            h: self.handle.clone(),
            route: Route::To(peer),
        }
    }

    /// Endpoint that routes each reply to the holder it names.
    pub fn serving_endpoint(&self) -> SimEndpoint {
        SimEndpoint {
            h: self.handle.clone(),
            route: Route::ByHolder,
        }
    }

    pub fn section(&self) -> SimSection {
        SimSection {
            h: self.handle.clone(),
            open: None,
            next_token: 0,
        }
    }

    pub fn sink(&self) -> Box<dyn EventSink> {
        Box::new(SimSink {
            h: self.handle.clone(),
        })
    }

    pub fn true_now(&self) -> Nanos {
        self.handle.true_now()
    }

    pub fn idle(&self, ns: Nanos) {
        self.handle.op_sleep(ns);
    }

    pub fn horizon_ns(&self) -> Nanos {
        self.handle.with_world(|w, _| w.horizon)
    }

    /// Appends an entry at this host's current true time. Scripts use this
    /// for their end-of-run summaries.
    pub fn emit(&self, body: TraceBody) {
        self.handle.with_world(|w, idx| {
            let t = w.hosts[idx].local_now;
            w.emit(t, body);
        });
    }
}

pub type HostScript = Box<dyn FnOnce(HostCtx) + Send + 'static>;

pub struct WorldBuilder {
    scenario: Arc<Scenario>,
    seed: u64,
    scripts: BTreeMap<HostId, HostScript>,
}

impl WorldBuilder {
    pub fn new(scenario: Scenario, seed: u64) -> Result<WorldBuilder, SimError> {
        scenario.validate()?;
        Ok(WorldBuilder {
            scenario: Arc::new(scenario),
            seed,
            scripts: BTreeMap::new(),
        })
    }

    pub fn script(mut self, host: HostId, script: HostScript) -> Self {
        self.scripts.insert(host, script);
        self
    }

    pub fn run(mut self) -> Result<Trace, SimError> {
        let scenario = self.scenario.clone();
        let hosts = scenario.all_hosts();
        for h in &hosts {
            if !self.scripts.contains_key(h) {
                return Err(SimError::BadScenario(format!("host {h} has no script")));
            }
        }
        if self.scripts.len() != hosts.len() {
            return Err(SimError::BadScenario(
                "scripts name hosts outside the world".into(),
            ));
        }

        let (core, static_events) = build_core(&scenario, self.seed);
        let horizon = core.horizon;
        let shared = Arc::new(Shared {
            world: Mutex::new(core),
            cv: Condvar::new(),
        });

        let mut join_handles = Vec::with_capacity(hosts.len());
        for (idx, host) in hosts.iter().copied().enumerate() {
            let script = self.scripts.remove(&host).expect("checked above");
            let handle = SimHandle {
                shared: shared.clone(),
                idx,
                host,
            };
            let ctx = HostCtx {
                handle,
                scenario: scenario.clone(),
            };
            let shared = shared.clone();
            join_handles.push(
                thread::Builder::new()
                    .name(format!("sim-host-{host}"))
                    .spawn(move || host_thread(shared, ctx, script))
                    .expect("spawn host thread"),
            );
        }

        {
            let mut g = shared.world.lock().expect("world lock");
            while g.turn != Turn::Done {
                g = shared.cv.wait(g).expect("world lock");
            }
        }
        for jh in join_handles {
            jh.join().map_err(|_| {
                SimError::HostPanic("a host thread died without reporting".into())
            })?;
        }

        let mut core = Arc::try_unwrap(shared)
            .unwrap_or_else(|_| panic!("all host threads joined"))
            .world
            .into_inner()
            .unwrap_or_else(|poisoned| poisoned.into_inner());
        if !core.errors.is_empty() {
            return Err(SimError::HostPanic(core.errors.join("; ")));
        }

        // Fold in the pre-materialized adversary record: windows, applied
        // clock mutations, refused mutations, and per-host preemption
        // totals. These sort after runtime entries at the same instant, and
        // window markers go first so a mutation at a window's opening
        // instant reads as happening inside it.
        let mut static_all = Vec::new();
        for host in &core.hosts {
            for (s, e) in host.windows.iter() {
                if s >= horizon {
                    break;
                }
                static_all.push((s, TraceBody::WindowStart { host: host.id, until: e }));
                if e < horizon {
                    static_all.push((e, TraceBody::WindowEnd { host: host.id }));
                }
            }
            let (total_ns, count) = host.windows.clipped_total(horizon);
            static_all.push((
                horizon,
                TraceBody::WindowTotal {
                    host: host.id,
                    total_ns,
                    count,
                },
            ));
        }
        static_all.extend(static_events);
        let base_seq = core.seq;
        let mut events = std::mem::take(&mut core.trace);
        events.extend(static_all.into_iter().enumerate().map(|(i, (t, body))| {
            TraceEvent {
                t,
                seq: base_seq + i as u64,
                body,
            }
        }));
        events.sort_by_key(|e| (e.t, e.seq));
        for (i, ev) in events.iter_mut().enumerate() {
            ev.seq = i as u64;
        }

        Ok(Trace {
            seed: self.seed,
            horizon_ns: horizon,
            granter: scenario.world.granter_host,
            events,
        })
    }
}

fn host_thread(shared: Arc<Shared>, ctx: HostCtx, script: HostScript) {
    let idx = ctx.handle.idx;
    let host = ctx.handle.host;
    ctx.handle.await_first_turn();
    let result = catch_unwind(AssertUnwindSafe(|| script(ctx)));
    let error = match result {
        Ok(()) => None,
        Err(payload) if payload.is::<HorizonReached>() => None,
        Err(payload) => Some(panic_message(&payload)),
    };
    let mut g = shared
        .world
        .lock()
        .unwrap_or_else(|poisoned| poisoned.into_inner());
    if let Some(e) = error {
        g.errors.push(format!("host {host}: {e}"));
    }
    g.hosts[idx].finished = true;
    g.turn = match g.runnable_min() {
        Some(next) => Turn::Host(next),
        None => Turn::Done,
    };
    shared.cv.notify_all();
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "opaque panic payload".to_string()
    }
}

/// Seed-stream offsets; each purpose gets an independent deterministic
/// stream so adding draws to one never shifts another.
const STREAM_WINDOWS: u64 = 0x100;
const STREAM_CLOCK_ATTACKS: u64 = 0x200;
const STREAM_NETWORK: u64 = 0x300;
const STREAM_ENTROPY: u64 = 0x400;
const STREAM_SECTIONS: u64 = 0x500;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn build_core(scenario: &Scenario, seed: u64) -> (WorldCore, Vec<(Nanos, TraceBody)>) {
    let adv = &scenario.adversary;
    let horizon = scenario.world.horizon_ns;
    let mut static_events: Vec<(Nanos, TraceBody)> = Vec::new();
    let mut hosts = Vec::new();

    for host in scenario.all_hosts() {
        // Preemptions: scheduled ones plus a Poisson stream if this host is
        // targeted.
        let mut spans: Vec<(Nanos, Nanos)> = adv
            .interrupts
            .iter()
            .filter(|i| i.host == host)
            .map(|i| (i.at_ns, i.at_ns + i.duration_ns))
            .collect();
        if adv.interrupt_rate_hz > 0.0 && adv.interrupt_hosts.contains(&host) {
            let mut rng = stream_rng(seed, STREAM_WINDOWS + host as u64);
            for start in poisson_starts(adv.interrupt_rate_hz, horizon, &mut rng) {
                spans.push((start, start + adv.window_ns));
            }
        }
        let windows = Windows::from_raw(spans);

        // Clock mutations: explicit ones that land inside a window apply;
        // the rest are refused. Generated attacks piggyback on window
        // starts, so they are contained by construction.
        let mut mutations: Vec<ClockMutation> = Vec::new();
        for sf in adv.set_freq.iter().filter(|a| a.host == host) {
            if windows.covering(sf.at_ns).is_some() {
                mutations.push(ClockMutation {
                    t: sf.at_ns,
                    kind: MutationKind::Freq(sf.factor),
                });
            } else {
                static_events.push((
                    sf.at_ns,
                    TraceBody::ActionRejected {
                        host,
                        action: "set_freq".into(),
                    },
                ));
            }
        }
        for sc in adv.set_counter.iter().filter(|a| a.host == host) {
            if windows.covering(sc.at_ns).is_some() {
                mutations.push(ClockMutation {
                    t: sc.at_ns,
                    kind: MutationKind::Counter(sc.value_ns),
                });
            } else {
                static_events.push((
                    sc.at_ns,
                    TraceBody::ActionRejected {
                        host,
                        action: "set_counter".into(),
                    },
                ));
            }
        }
        if adv.interrupt_hosts.contains(&host)
            && (adv.retune_probability > 0.0 || adv.rollback_probability > 0.0)
        {
            let mut rng = stream_rng(seed, STREAM_CLOCK_ATTACKS + host as u64);
            for (start, _) in windows.iter() {
                if start >= horizon {
                    break;
                }
                if adv.retune_probability > 0.0 && rng.gen::<f64>() < adv.retune_probability {
                    let factor = 1.0 - adv.freq_drift
                        + rng.gen::<f64>() * 2.0 * adv.freq_drift;
                    mutations.push(ClockMutation {
                        t: start,
                        kind: MutationKind::Freq(factor),
                    });
                }
                if adv.rollback_probability > 0.0 && rng.gen::<f64>() < adv.rollback_probability {
                    let back = rng.gen_range(0..=adv.rollback_max_ns);
                    mutations.push(ClockMutation {
                        t: start,
                        kind: MutationKind::CounterBack(back),
                    });
                }
            }
        }
        mutations.sort_by_key(|m| m.t);
        let clock = ClockTimeline::build(&mutations);
        for m in &mutations {
            let body = match m.kind {
                MutationKind::Freq(factor) => TraceBody::FreqSet { host, factor },
                MutationKind::Counter(_) | MutationKind::CounterBack(_) => TraceBody::CounterSet {
                    host,
                    value: clock.value(m.t),
                },
            };
            static_events.push((m.t, body));
        }

        hosts.push(HostCore {
            id: host,
            local_now: 0,
            windows,
            clock,
            last_flag_read: 0,
            finished: false,
            inbox: BTreeMap::new(),
            entropy_rng: stream_rng(seed, STREAM_ENTROPY + host as u64),
            section_rng: stream_rng(seed, STREAM_SECTIONS + host as u64),
            suppress_flag: scenario.mutation.suppress_interrupt_flag,
        });
    }

    let to_rule_state = |rules: &[MsgRule]| {
        rules
            .iter()
            .map(|r| RuleState {
                rule: r.clone(),
                remaining: r.count,
            })
            .collect()
    };

    let core = WorldCore {
        horizon,
        turn: Turn::Host(0),
        hosts,
        trace: Vec::new(),
        seq: 0,
        net_seq: 0,
        net_rng: stream_rng(seed, STREAM_NETWORK),
        base_delay: scenario.network.base_delay_ns,
        jitter_mean: scenario.network.jitter_mean_ns,
        delay_cap: scenario.network.delay_cap_ns,
        drop_rules: to_rule_state(&adv.drop_msg),
        delay_rules: to_rule_state(&adv.delay_msg),
        gen_drop_p: adv.drop_probability,
        gen_delay_p: adv.delay_probability,
        gen_extra_delay: adv.extra_delay_ns,
        read_cost: scenario.hardware.read_cost_ns,
        entropy_min: scenario.hardware.entropy_min_ns,
        entropy_max: scenario.hardware.entropy_max_ns,
        section_cost: scenario.hardware.section_op_cost_ns,
        spurious_abort_p: scenario.hardware.spurious_abort_probability,
        errors: Vec::new(),
    };
    (core, static_events)
}

// ---------------------------------------------------------------------------
// Standard scripts: a serving granter and a renewing, submitting holder.

/// Runs the scenario with the standard scripts: the granter serves until
/// the horizon; every holder keeps its lease renewed and, if the workload
/// says so, performs guarded submissions.
pub fn run(scenario: &Scenario, seed: u64) -> Result<Trace, SimError> {
    let mut builder = WorldBuilder::new(scenario.clone(), seed)?;
    builder = builder.script(
        scenario.world.granter_host,
        Box::new(|ctx: HostCtx| granter_script(ctx)),
    );
    for holder in scenario.world.holders.clone() {
        builder = builder.script(holder, Box::new(move |ctx: HostCtx| holder_script(ctx)));
    }
    builder.run()
}

fn granter_script(ctx: HostCtx) {
    let scenario = ctx.scenario.clone();
    let mut engine = GranterEngine::new(
        ctx.host(),
        scenario.lease_config(),
        scenario.policy(),
        ctx.hardware(),
        ctx.serving_endpoint(),
        ctx.sink(),
    )
    .expect("scenario was validated");
    run_until_horizon(|| {
        if engine.serve_for(Nanos::MAX).is_err() {
            // Counter fault latched: hold position, keep existing grants
            // frozen, and let the run play out.
            loop {
                ctx.idle(scenario.engine.poll_interval_ns);
            }
        }
    });
    ctx.emit(TraceBody::GranterSummary {
        host: ctx.host(),
        counters: *engine.counters(),
        accounted_ns: engine.account().accumulated(),
        active_grants: engine.active_grants() as u64,
        timer_fault: engine.timer_faulted(),
    });
}

struct CountSink(u64);

impl EffectSink for CountSink {
    fn release(&mut self, _payload: &[u8]) {
        self.0 += 1;
    }
}

fn holder_script(ctx: HostCtx) {
    let scenario = ctx.scenario.clone();
    let host = ctx.host();
    let mut engine = HolderEngine::new(
        host,
        scenario.lease_id_of(host),
        scenario.lease_config(),
        scenario.policy(),
        ctx.hardware(),
        ctx.endpoint_to(scenario.world.granter_host),
        ctx.section(),
        ctx.sink(),
    )
    .expect("scenario was validated");
    let submit_every = scenario.workload.submit_interval_ns;
    let pause = scenario.workload.update_interval_ns.max(1);
    let payload = vec![0u8; scenario.workload.payload_bytes];
    let mut effects = CountSink(0);
    let mut next_submit = submit_every;
    run_until_horizon(|| {
        'run: loop {
            if engine.update_renew_lease().is_err() {
                break 'run;
            }
            if submit_every > 0 && ctx.true_now() >= next_submit && engine.lease_usable() {
                if engine.lease_protected_syscall(&payload, &mut effects).is_err() {
                    break 'run;
                }
                next_submit = ctx.true_now() + submit_every;
            }
            ctx.idle(pause);
        }
        // Counter fault latched: the lease client is done for good.
        loop {
            ctx.idle(pause);
        }
    });
    ctx.emit(TraceBody::HolderSummary {
        host,
        counters: *engine.counters(),
        accounted_ns: engine.account().accumulated(),
        epoch: engine.account().epoch_number(),
        usable_at_end: engine.lease_usable(),
        timer_fault: engine.timer_faulted(),
    });
}
