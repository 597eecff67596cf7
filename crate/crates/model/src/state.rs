//! The finite protocol world the checker enumerates.
//!
//! This is a deliberately small abstraction of a granter, a handful of
//! holders, and the network between them. Time is a single integer `now`
//! that only the `Tick` action advances; everything else is instantaneous.
//! Countdown timers are kept in hundredths of a tick ([`SCALE`]) so that a
//! clock running at, say, 50% or 150% of nominal rate still decrements by
//! a whole number each tick. The network is a set of messages with no
//! order: a message sits in the set until some enabled action consumes it,
//! so delay and reordering fall out of the enumeration rather than needing
//! their own machinery. Replies that can never be accepted any more (their
//! holder has moved to a later epoch or a later request) are swept out, and
//! a sticky [`ModelState::request_seen`] bit remembers that a request ever
//! existed; both keep the state space from distinguishing worlds that only
//! differ in dead mail.
//!
//! Preemption is modeled directly: any host can be interrupted once it has
//! run unmolested for [`ModelConfig::uninterrupted_min`] ticks, and while a
//! holder is interrupted an attacker may retune its clock rate by
//! [`ModelConfig::freq_drift_pct`]. A resumed holder knows only that it was
//! interrupted: its epoch counter advances, its lease countdown is
//! discarded, and it must re-request.
//!
//! The invariant of interest is [`valid_lease`]: a holder that believes its
//! lease is valid with time left on the countdown must be covered by a
//! grant record on the granter. [`LivenessGoal`] captures the two bounded
//! eventually-properties (requests get granted, fresh grants take effect).
//!
//! The horizon has two readings. For safety it is a wall: `Tick` stops and
//! the search is simply truncated there. For the eventually-properties a
//! wall would prove too much — with no time left, the only enabled actions
//! are the useful ones, and every schedule delivers whether fairness asks
//! for it or not. So liveness runs with [`ModelConfig::idle_at_horizon`]:
//! time keeps stuttering at the horizon and a withheld delivery or an
//! unresumed host really can stay withheld forever.
//!
//! States are enumerated by the hundreds of millions, so the struct fields
//! are deliberately narrow ([`ModelConfig::validate`] guarantees every
//! value fits) and the message set is a small sorted vector.

use std::fmt;

use leaseguard_core::{HolderPhase, MessageKind};
use serde::{Deserialize, Serialize};

/// Timer granularity: countdown units per tick at nominal clock rate.
/// Frequencies are expressed as units-per-tick, so `SCALE` is a clock
/// running at exactly nominal rate.
pub const SCALE: u32 = 100;

/// Sentinel for a countdown that has never been armed.
pub const INF: u16 = u16::MAX;

/// Instance parameters. Everything is in ticks (or percent, where noted);
/// the defaults describe the smallest instance worth checking: one holder,
/// a five-tick lease, a twelve-tick horizon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub holders: u8,
    /// Nominal lease term, in ticks.
    pub lease_time: u32,
    /// How many nominal terms the granter keeps a record alive.
    pub multiplier: u32,
    /// Clock-rate error both sides budget for when arming countdowns, in
    /// percent. The holder arms short by this much, the granter long.
    pub drift_pct: u32,
    /// How far the attacker can retune an interrupted holder's clock, in
    /// percent of nominal rate.
    pub freq_drift_pct: u32,
    /// Horizon: `now` never exceeds this. With [`ModelConfig::idle_at_horizon`]
    /// unset, `Tick` is simply disabled once `now` reaches it.
    pub max_now: u32,
    /// Delivery budget assumed by the eventually-properties: they only
    /// claim anything when at least this many ticks remain.
    pub msg_delay_max: u32,
    /// An interrupted host resumes within this many ticks (enforced only
    /// under [`Fairness::bound_interrupts`]).
    pub interrupted_max: u32,
    /// Once resumed (or at start), a host runs at least this many ticks
    /// before it can be interrupted again. This is a hard guard, not a
    /// fairness assumption: without it, epochs grow without bound.
    pub uninterrupted_min: u32,
    /// Whether the clock-retune action is available at all.
    pub attacker: bool,
    /// What reaching the horizon means. Unset (the default), time stops:
    /// right for safety, where the horizon merely truncates the search.
    /// Set, `Tick` stays enabled forever with `now` pinned at the horizon
    /// (countdowns keep burning, no new preemption starts), so infinite
    /// schedules exist and an eventually-property can only be discharged
    /// by fairness, never by running out of calendar. Liveness checking
    /// forces this on.
    pub idle_at_horizon: bool,
    /// Exploration budget; exceeding it is an error, not a verdict.
    pub max_states: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            holders: 1,
            lease_time: 5,
            multiplier: 1,
            drift_pct: 0,
            freq_drift_pct: 50,
            max_now: 12,
            msg_delay_max: 2,
            interrupted_max: 2,
            uninterrupted_min: 3,
            attacker: false,
            idle_at_horizon: false,
            max_states: 10_000_000,
        }
    }
}

impl ModelConfig {
    /// Rejects parameter combinations that would make the state space
    /// degenerate (no holders, zero-length leases), unbounded in practice
    /// (long horizons explode combinatorially), or too large for the
    /// packed state representation.
    pub fn validate(&self) -> Result<(), String> {
        if self.holders == 0 || self.holders > 4 {
            return Err(format!("holders must be 1..=4, got {}", self.holders));
        }
        if self.lease_time == 0 {
            return Err("lease_time must be at least one tick".into());
        }
        if self.multiplier == 0 {
            return Err("multiplier must be at least 1".into());
        }
        if self.drift_pct >= SCALE {
            return Err(format!("drift_pct must be below {SCALE}"));
        }
        if self.freq_drift_pct >= SCALE {
            return Err(format!("freq_drift_pct must be below {SCALE}"));
        }
        if self.max_now == 0 || self.max_now > 30 {
            return Err(format!("max_now must be 1..=30, got {}", self.max_now));
        }
        if self.msg_delay_max == 0 || self.msg_delay_max > self.max_now {
            return Err("msg_delay_max must be in 1..=max_now".into());
        }
        if self.interrupted_max == 0 || self.interrupted_max > self.max_now {
            return Err("interrupted_max must be in 1..=max_now".into());
        }
        if self.uninterrupted_min == 0 || self.uninterrupted_min > self.max_now {
            return Err("uninterrupted_min must be in 1..=max_now".into());
        }
        if self.granter_armed_raw() >= u32::from(INF) {
            return Err(format!(
                "multiplier * lease_time too large: grant countdown {} must stay below {INF}",
                self.granter_armed_raw()
            ));
        }
        if self.max_states == 0 {
            return Err("max_states must be positive".into());
        }
        Ok(())
    }

    /// Countdown a holder arms when it sends a request: the nominal term
    /// shortened by the drift budget.
    pub fn holder_armed(&self) -> u16 {
        (self.lease_time * (SCALE - self.drift_pct)) as u16
    }

    fn granter_armed_raw(&self) -> u32 {
        self.multiplier * self.lease_time * (SCALE + self.drift_pct)
    }

    /// Countdown the granter arms when it installs or extends a grant: the
    /// nominal term times the safety multiplier, lengthened by the drift
    /// budget.
    pub fn granter_armed(&self) -> u16 {
        self.granter_armed_raw() as u16
    }

    /// Clock rates a holder can be running at. Nominal always; the two
    /// extremes only when an attacker is configured.
    pub fn frequencies(&self) -> Vec<u8> {
        if self.attacker && self.freq_drift_pct > 0 {
            vec![
                (SCALE - self.freq_drift_pct) as u8,
                SCALE as u8,
                (SCALE + self.freq_drift_pct) as u8,
            ]
        } else {
            vec![SCALE as u8]
        }
    }
}

/// Which schedules the explorer rules out. Safety checking uses
/// [`Fairness::NONE`] (every interleaving); the eventually-properties are
/// only meaningful on schedules where the environment keeps its bounds, so
/// liveness checking defaults to all three.
///
/// Each field suppresses `Tick` while some obligation is pending: time
/// cannot pass until the obligation is met.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fairness {
    /// Consumable messages are consumed before time advances.
    pub bound_delivery: bool,
    /// Interrupted hosts resume within [`ModelConfig::interrupted_max`]
    /// ticks.
    pub bound_interrupts: bool,
    /// Hosts do not sit on enabled protocol work across a tick: a holder
    /// with no lease requests one, a holder whose countdown has run out
    /// renews, and the granter drops a grant whose countdown has run out.
    pub eager_protocol: bool,
}

impl Fairness {
    pub const NONE: Fairness = Fairness {
        bound_delivery: false,
        bound_interrupts: false,
        eager_protocol: false,
    };
}

impl Default for Fairness {
    fn default() -> Self {
        Fairness {
            bound_delivery: true,
            bound_interrupts: true,
            eager_protocol: true,
        }
    }
}

/// One message in flight. Replies mirror the `epoch` and `req_ts` of the
/// request they answer; requests have `req_ts` equal to their send time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Msg {
    pub kind: MessageKind,
    pub holder: u8,
    pub epoch: u8,
    pub req_ts: u8,
}

/// Per-holder variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HolderVars {
    pub phase: HolderPhase,
    pub epoch: u8,
    /// Lease countdown in [`SCALE`]ths of a tick; [`INF`] until first armed.
    pub expire_timer: u16,
    /// While running: ticks until this host may be interrupted. While
    /// interrupted: ticks until it must resume (under fairness).
    pub epoch_timer: u8,
    /// Clock rate in countdown units per tick; [`SCALE`] is nominal.
    pub frequency: u8,
    /// Send time of the most recent request; replies must mirror it.
    pub last_req_ts: u8,
}

/// The grant record the granter keeps while a lease is out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GrantRecord {
    pub holder: u8,
    pub epoch: u8,
    pub req_ts: u8,
}

/// Granter variables. The granter has no epoch counter: resuming from an
/// interrupt does not invalidate its records, it only pauses the countdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GranterVars {
    /// False while preempted. The grant countdown only runs while true.
    pub running: bool,
    pub grant: Option<GrantRecord>,
    /// Remaining life of the current grant, in [`SCALE`]ths of a tick.
    pub expire_timer: u16,
    /// Same dual role as [`HolderVars::epoch_timer`].
    pub epoch_timer: u8,
}

/// One joint state of granter, holders, and network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelState {
    pub now: u8,
    /// True once any request has ever been sent. Requests are removed from
    /// [`ModelState::msgs`] when processed, so this bit is what the
    /// request-liveness antecedent looks at.
    pub request_seen: bool,
    pub granter: GranterVars,
    /// Messages not yet consumed, kept sorted so equal sets compare equal.
    /// Requests leave when the granter answers them, replies when their
    /// holder accepts them or can never accept them again.
    pub msgs: Vec<Msg>,
    pub holders: Vec<HolderVars>,
}

/// A transition, named by what it does. `Tick` is the only action that
/// advances time; all others are instantaneous steps of one host, the
/// network, or the attacker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Tick,
    RequestFresh { holder: u8 },
    RequestExtend { holder: u8 },
    DeliverReply { holder: u8, msg: Msg },
    ProcessRequest { msg: Msg },
    ExpireGrant,
    InterruptHolder { holder: u8 },
    ResumeHolder { holder: u8 },
    InterruptGranter,
    ResumeGranter,
    RetuneClock { holder: u8, frequency: u8 },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Tick => write!(f, "tick"),
            Action::RequestFresh { holder } => {
                write!(f, "holder {holder} sends a fresh request")
            }
            Action::RequestExtend { holder } => {
                write!(f, "holder {holder} sends an extension request")
            }
            Action::DeliverReply { holder, msg } => write!(
                f,
                "holder {holder} receives {:?} (epoch {}, req {})",
                msg.kind, msg.epoch, msg.req_ts
            ),
            Action::ProcessRequest { msg } => write!(
                f,
                "granter processes the request from holder {} (epoch {}, req {})",
                msg.holder, msg.epoch, msg.req_ts
            ),
            Action::ExpireGrant => write!(f, "the grant record expires"),
            Action::InterruptHolder { holder } => write!(f, "holder {holder} is preempted"),
            Action::ResumeHolder { holder } => write!(f, "holder {holder} resumes"),
            Action::InterruptGranter => write!(f, "the granter is preempted"),
            Action::ResumeGranter => write!(f, "the granter resumes"),
            Action::RetuneClock { holder, frequency } => {
                write!(f, "holder {holder}'s clock is retuned to {frequency}%")
            }
        }
    }
}

impl ModelState {
    /// The initial state: time zero, empty network, every host running
    /// with its minimum-undisturbed budget, no lease anywhere.
    pub fn init(cfg: &ModelConfig) -> ModelState {
        ModelState {
            now: 0,
            request_seen: false,
            msgs: Vec::new(),
            holders: (0..cfg.holders)
                .map(|_| HolderVars {
                    phase: HolderPhase::Created,
                    epoch: 1,
                    expire_timer: INF,
                    epoch_timer: cfg.uninterrupted_min as u8,
                    frequency: SCALE as u8,
                    last_req_ts: 0,
                })
                .collect(),
            granter: GranterVars {
                running: true,
                grant: None,
                expire_timer: 0,
                epoch_timer: cfg.uninterrupted_min as u8,
            },
        }
    }

    fn insert_msg(&mut self, m: Msg) {
        if let Err(i) = self.msgs.binary_search(&m) {
            self.msgs.insert(i, m);
        }
    }

    fn remove_msg(&mut self, m: &Msg) {
        if let Ok(i) = self.msgs.binary_search(m) {
            self.msgs.remove(i);
        }
    }

    /// Whether a message could be consumed right now: requests need the
    /// granter awake, replies need their holder waiting on exactly them.
    fn consumable(&self, m: &Msg) -> bool {
        match m.kind {
            MessageKind::ReqLease => self.granter.running,
            MessageKind::Granted | MessageKind::NotGranted => {
                let h = &self.holders[m.holder as usize];
                h.phase == HolderPhase::Pending
                    && h.epoch == m.epoch
                    && h.last_req_ts == m.req_ts
            }
        }
    }

    /// Removes replies their holder can never accept again. A reply needs
    /// the holder's `(epoch, last_req_ts)` to equal its own pair, and that
    /// pair only ever grows, so anything strictly below it is dead mail.
    /// Collapsing such states keeps the exploration from telling worlds
    /// apart by garbage.
    fn sweep_dead_replies(&mut self) {
        let marks: Vec<(u8, u8)> = self
            .holders
            .iter()
            .map(|h| (h.epoch, h.last_req_ts))
            .collect();
        self.msgs.retain(|m| {
            m.kind == MessageKind::ReqLease
                || (m.epoch, m.req_ts) >= marks[m.holder as usize]
        });
    }

    fn expire_grant_enabled(&self) -> bool {
        self.granter.running && self.granter.grant.is_some() && self.granter.expire_timer == 0
    }

    fn at_horizon(&self, cfg: &ModelConfig) -> bool {
        u32::from(self.now) >= cfg.max_now
    }

    /// Whether time may advance. Beyond the horizon check, each fairness
    /// bound turns an obligation into a tick blocker.
    fn tick_enabled(&self, cfg: &ModelConfig, fairness: Fairness) -> bool {
        if self.at_horizon(cfg) && !cfg.idle_at_horizon {
            return false;
        }
        if fairness.bound_delivery && self.msgs.iter().any(|m| self.consumable(m)) {
            return false;
        }
        if fairness.bound_interrupts {
            let holder_stuck = self
                .holders
                .iter()
                .any(|h| h.phase == HolderPhase::Interrupted && h.epoch_timer == 0);
            let granter_stuck = !self.granter.running && self.granter.epoch_timer == 0;
            if holder_stuck || granter_stuck {
                return false;
            }
        }
        if fairness.eager_protocol {
            let wants_lease = self.holders.iter().any(|h| {
                matches!(h.phase, HolderPhase::Created | HolderPhase::Blocked)
                    || (h.phase == HolderPhase::ValidLease && h.expire_timer == 0)
            });
            if wants_lease || self.expire_grant_enabled() {
                return false;
            }
        }
        true
    }

    fn tick(&self, cfg: &ModelConfig) -> ModelState {
        let mut next = self.clone();
        if !self.at_horizon(cfg) {
            next.now += 1;
        }
        for h in &mut next.holders {
            if h.phase != HolderPhase::Interrupted && h.expire_timer != INF {
                h.expire_timer = h.expire_timer.saturating_sub(u16::from(h.frequency));
            }
            h.epoch_timer = h.epoch_timer.saturating_sub(1);
        }
        if next.granter.running {
            next.granter.expire_timer = next.granter.expire_timer.saturating_sub(SCALE as u16);
        }
        next.granter.epoch_timer = next.granter.epoch_timer.saturating_sub(1);
        next
    }

    fn send_request(&self, cfg: &ModelConfig, holder: u8) -> ModelState {
        let mut next = self.clone();
        next.request_seen = true;
        let h = &mut next.holders[holder as usize];
        h.phase = HolderPhase::Pending;
        h.expire_timer = cfg.holder_armed();
        h.last_req_ts = self.now;
        let epoch = h.epoch;
        next.insert_msg(Msg {
            kind: MessageKind::ReqLease,
            holder,
            epoch,
            req_ts: self.now,
        });
        next.sweep_dead_replies();
        next
    }

    fn deliver_reply(&self, holder: u8, m: Msg) -> ModelState {
        let mut next = self.clone();
        next.remove_msg(&m);
        let h = &mut next.holders[holder as usize];
        h.phase = if m.kind == MessageKind::Granted && h.expire_timer > 0 {
            HolderPhase::ValidLease
        } else {
            HolderPhase::Blocked
        };
        next
    }

    fn process_request(&self, cfg: &ModelConfig, m: Msg) -> ModelState {
        let mut next = self.clone();
        next.remove_msg(&m);
        let granted = match next.granter.grant {
            None => true,
            Some(r) => r.holder == m.holder && (m.epoch, m.req_ts) >= (r.epoch, r.req_ts),
        };
        if granted {
            next.granter.grant = Some(GrantRecord {
                holder: m.holder,
                epoch: m.epoch,
                req_ts: m.req_ts,
            });
            next.granter.expire_timer = cfg.granter_armed();
        }
        next.insert_msg(Msg {
            kind: if granted {
                MessageKind::Granted
            } else {
                MessageKind::NotGranted
            },
            holder: m.holder,
            epoch: m.epoch,
            req_ts: m.req_ts,
        });
        next.sweep_dead_replies();
        next
    }

    /// Enumerates every enabled transition, in a fixed order so exploration
    /// (and therefore counterexample selection) is deterministic.
    pub fn successors(&self, cfg: &ModelConfig, fairness: Fairness) -> Vec<(Action, ModelState)> {
        let mut out = Vec::new();

        if self.tick_enabled(cfg, fairness) {
            out.push((Action::Tick, self.tick(cfg)));
        }

        // Once time idles at the horizon, no *new* preemption starts; this
        // keeps epoch counters bounded. Resumes (and retunes) still drain.
        let may_interrupt = !cfg.idle_at_horizon || !self.at_horizon(cfg);

        for (i, h) in self.holders.iter().enumerate() {
            let holder = i as u8;
            match h.phase {
                HolderPhase::Created | HolderPhase::Blocked => {
                    out.push((
                        Action::RequestFresh { holder },
                        self.send_request(cfg, holder),
                    ));
                }
                HolderPhase::ValidLease => {
                    out.push((
                        Action::RequestExtend { holder },
                        self.send_request(cfg, holder),
                    ));
                }
                _ => {}
            }

            for m in &self.msgs {
                if m.kind != MessageKind::ReqLease && m.holder == holder && self.consumable(m) {
                    out.push((
                        Action::DeliverReply { holder, msg: *m },
                        self.deliver_reply(holder, *m),
                    ));
                }
            }

            if may_interrupt && h.phase != HolderPhase::Interrupted && h.epoch_timer == 0 {
                let mut next = self.clone();
                let hv = &mut next.holders[i];
                hv.phase = HolderPhase::Interrupted;
                hv.epoch_timer = cfg.interrupted_max as u8;
                out.push((Action::InterruptHolder { holder }, next));
            }

            if h.phase == HolderPhase::Interrupted {
                let mut next = self.clone();
                let hv = &mut next.holders[i];
                hv.phase = HolderPhase::Blocked;
                hv.epoch += 1;
                hv.expire_timer = 0;
                hv.epoch_timer = cfg.uninterrupted_min as u8;
                next.sweep_dead_replies();
                out.push((Action::ResumeHolder { holder }, next));

                for frequency in cfg.frequencies() {
                    if frequency != h.frequency {
                        let mut next = self.clone();
                        next.holders[i].frequency = frequency;
                        out.push((Action::RetuneClock { holder, frequency }, next));
                    }
                }
            }
        }

        for m in &self.msgs {
            if m.kind == MessageKind::ReqLease && self.consumable(m) {
                out.push((Action::ProcessRequest { msg: *m }, self.process_request(cfg, *m)));
            }
        }

        if self.expire_grant_enabled() {
            let mut next = self.clone();
            next.granter.grant = None;
            out.push((Action::ExpireGrant, next));
        }

        if may_interrupt && self.granter.running && self.granter.epoch_timer == 0 {
            let mut next = self.clone();
            next.granter.running = false;
            next.granter.epoch_timer = cfg.interrupted_max as u8;
            out.push((Action::InterruptGranter, next));
        }

        if !self.granter.running {
            let mut next = self.clone();
            next.granter.running = true;
            next.granter.epoch_timer = cfg.uninterrupted_min as u8;
            out.push((Action::ResumeGranter, next));
        }

        out
    }

    /// One-line rendering for counterexample listings.
    pub fn digest(&self) -> String {
        let mut s = format!("now={}", self.now);
        for (i, h) in self.holders.iter().enumerate() {
            let x = if h.expire_timer == INF {
                "-".to_string()
            } else {
                h.expire_timer.to_string()
            };
            s.push_str(&format!(
                " | h{i} {:?} e{} x{} f{} et{}",
                h.phase, h.epoch, x, h.frequency, h.epoch_timer
            ));
        }
        match self.granter.grant {
            Some(r) => s.push_str(&format!(
                " | grant h{} e{} t{} gx{}",
                r.holder, r.epoch, r.req_ts, self.granter.expire_timer
            )),
            None => s.push_str(" | grant none"),
        }
        s.push_str(&format!(
            " {} get{} | {} msgs",
            if self.granter.running { "run" } else { "int" },
            self.granter.epoch_timer,
            self.msgs.len()
        ));
        s
    }
}

/// The safety invariant: a holder that believes it has a live lease is
/// covered by a grant record naming it.
pub fn valid_lease(s: &ModelState) -> bool {
    s.holders.iter().enumerate().all(|(i, h)| {
        if h.phase == HolderPhase::ValidLease && h.expire_timer != 0 {
            matches!(s.granter.grant, Some(r) if r.holder == i as u8)
        } else {
            true
        }
    })
}

/// Structural sanity of a reachable state. A failure here is a bug in the
/// transition relation, not a protocol violation, so the explorer treats
/// it as an internal error.
pub fn type_ok(s: &ModelState, cfg: &ModelConfig) -> Result<(), String> {
    if u32::from(s.now) > cfg.max_now {
        return Err(format!("now={} beyond horizon {}", s.now, cfg.max_now));
    }
    if s.holders.len() != cfg.holders as usize {
        return Err(format!(
            "{} holders in state, {} configured",
            s.holders.len(),
            cfg.holders
        ));
    }
    let epoch_cap = (1 + cfg.max_now) as u8;
    let epoch_timer_cap = cfg.interrupted_max.max(cfg.uninterrupted_min) as u8;
    for (i, h) in s.holders.iter().enumerate() {
        if h.epoch == 0 || h.epoch > epoch_cap {
            return Err(format!("holder {i} epoch {} out of 1..={epoch_cap}", h.epoch));
        }
        if h.expire_timer != INF && h.expire_timer > cfg.holder_armed() {
            return Err(format!(
                "holder {i} countdown {} above armed value {}",
                h.expire_timer,
                cfg.holder_armed()
            ));
        }
        if h.epoch_timer > epoch_timer_cap {
            return Err(format!(
                "holder {i} epoch timer {} above {epoch_timer_cap}",
                h.epoch_timer
            ));
        }
        if !cfg.frequencies().contains(&h.frequency) {
            return Err(format!("holder {i} frequency {} not reachable", h.frequency));
        }
        if h.last_req_ts > s.now {
            return Err(format!("holder {i} request timestamp in the future"));
        }
    }
    if s.granter.expire_timer > cfg.granter_armed() {
        return Err(format!(
            "grant countdown {} above armed value {}",
            s.granter.expire_timer,
            cfg.granter_armed()
        ));
    }
    if s.granter.epoch_timer > epoch_timer_cap {
        return Err(format!(
            "granter epoch timer {} above {epoch_timer_cap}",
            s.granter.epoch_timer
        ));
    }
    if let Some(r) = s.granter.grant {
        if r.holder as usize >= s.holders.len() {
            return Err(format!("grant names holder {} which does not exist", r.holder));
        }
        if r.epoch == 0 || r.epoch > epoch_cap || r.req_ts > s.now {
            return Err("grant record carries impossible metadata".into());
        }
    }
    let mut prev: Option<Msg> = None;
    for m in &s.msgs {
        if prev.is_some_and(|p| p >= *m) {
            return Err("message set is not sorted and deduplicated".into());
        }
        prev = Some(*m);
        if m.holder as usize >= s.holders.len() {
            return Err(format!("message names holder {} which does not exist", m.holder));
        }
        if m.epoch == 0 || m.epoch > epoch_cap {
            return Err(format!("message epoch {} out of 1..={epoch_cap}", m.epoch));
        }
        if m.req_ts > s.now {
            return Err("message stamped in the future".into());
        }
        if m.kind == MessageKind::ReqLease && !s.request_seen {
            return Err("a request exists but request_seen is unset".into());
        }
    }
    Ok(())
}

/// The two bounded eventually-properties, each of the shape
/// "antecedent state ⇒ the consequent holds somewhere on every fair
/// continuation".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LivenessGoal {
    /// A request has been sent, there is still time to deliver one, and
    /// the granter will stay awake long enough: a grant record must
    /// appear.
    RequestGranted,
    /// A grant was just (re-)armed for a holder that is still in the
    /// matching epoch and will stay undisturbed: some holder must come to
    /// believe it has a valid lease.
    GrantTakesEffect,
}

impl LivenessGoal {
    pub fn antecedent(&self, s: &ModelState, cfg: &ModelConfig) -> bool {
        let remaining = cfg.max_now - u32::from(s.now);
        match self {
            LivenessGoal::RequestGranted => {
                s.request_seen
                    && remaining >= cfg.msg_delay_max
                    && u32::from(s.granter.epoch_timer) > remaining
            }
            LivenessGoal::GrantTakesEffect => match s.granter.grant {
                Some(r) => {
                    let h = &s.holders[r.holder as usize];
                    s.granter.expire_timer == cfg.granter_armed()
                        && remaining >= cfg.msg_delay_max
                        && h.epoch == r.epoch
                        && u32::from(h.epoch_timer) > remaining
                }
                None => false,
            },
        }
    }

    pub fn consequent(&self, s: &ModelState) -> bool {
        match self {
            LivenessGoal::RequestGranted => s.granter.grant.is_some(),
            LivenessGoal::GrantTakesEffect => s
                .holders
                .iter()
                .any(|h| h.phase == HolderPhase::ValidLease),
        }
    }
}
