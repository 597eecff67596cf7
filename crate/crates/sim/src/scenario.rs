//! Scenario files: everything a run needs besides the seed.
//!
//! A scenario is a TOML document of flat sections. Every field has a
//! default, so an empty document is a valid (honest, single-holder) world.
//! Unknown keys are rejected to catch typos early.
//!
//! ```toml
//! [world]
//! horizon_ns    = 1_000_000_000   # run length in true nanoseconds
//! seed          = 0               # default seed; run() takes an override
//! granter_host  = 0
//! holders       = [1]
//!
//! [lease]
//! term_ns        = 10_000_000
//! multiplier     = 3.0            # granter holds grants term × multiplier
//! drift          = 0.0            # holder shortens its countdown by this
//! renew_fraction = 0.2
//! shared_lease   = true           # all holders contend for `lease_id`
//! lease_id       = 1
//!
//! [engine]
//! poll_interval_ns      = 100_000
//! max_delivery_delay_ns = 1_000_000
//! max_request_retries   = 16
//! max_submit_retries    = 16
//! interrupt_detection   = true
//! freq_check_on_epoch   = true
//!
//! [hardware]
//! read_cost_ns               = 30
//! entropy_min_ns             = 7_100   # true burst duration, drawn uniformly
//! entropy_max_ns             = 10_400  # inside the verifier band at rate 1.0
//! section_op_cost_ns         = 0
//! spurious_abort_probability = 0.0
//!
//! [network]
//! base_delay_ns  = 50_000
//! jitter_mean_ns = 50_000          # exponential tail on top of the base
//! # delay_cap_ns = 1_000_000       # set when checking liveness bounds
//!
//! [workload]
//! submit_interval_ns = 0           # 0 disables guarded submissions
//! update_interval_ns = 1_000_000   # holder loop cadence between lease ops
//! payload_bytes      = 32
//!
//! [adversary]
//! interrupt_hosts      = []        # targets of generated interrupts
//! interrupt_rate_hz    = 0.0       # Poisson arrival rate per target
//! window_ns            = 20_300    # preemption length per interrupt
//! retune_probability   = 0.0       # chance a window also retunes the clock
//! freq_drift           = 0.0       # retune factors drawn in [1-d, 1+d]
//! rollback_probability = 0.0       # chance a window rolls the counter back
//! rollback_max_ns      = 0
//! drop_probability     = 0.0       # per message
//! delay_probability    = 0.0       # per message
//! extra_delay_ns       = 0
//!
//! [[adversary.interrupts]]        # explicit preemptions, merged with the
//! host        = 1                  # generated ones
//! at_ns       = 5_000_000
//! duration_ns = 20_300
//!
//! [[adversary.set_freq]]          # rejected unless the host is interrupted
//! host   = 1                       # at that instant; factor must stay in
//! at_ns  = 5_000_100               # [1 - freq_drift, 1 + freq_drift]
//! factor = 0.5
//!
//! [[adversary.set_counter]]
//! host     = 1
//! at_ns    = 5_000_200
//! value_ns = 0
//!
//! [[adversary.delay_msg]]         # match fields are optional; a missing
//! from     = 0                     # field matches anything
//! kind     = "Granted"
//! after_ns = 0
//! count    = 1
//! extra_ns = 30_000_000
//!
//! [[adversary.drop_msg]]
//! to    = 0
//! kind  = "ReqLease"
//! count = 2
//!
//! [mutation]
//! suppress_interrupt_flag = false  # harness self-check: hide preemptions
//! ```

use leaseguard_core::{HostId, LeaseConfig, LeaseId, MessageKind, Nanos};
use leaseguard_runtime::{lease_id_for, EnginePolicy};
use serde::{Deserialize, Serialize};

use crate::SimError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub world: WorldSection,
    pub lease: LeaseSection,
    pub engine: EngineSection,
    pub hardware: HardwareSection,
    pub network: NetworkSection,
    pub workload: WorkloadSection,
    pub adversary: AdversarySection,
    pub mutation: MutationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    pub horizon_ns: Nanos,
    pub seed: u64,
    pub granter_host: HostId,
    pub holders: Vec<HostId>,
}

impl Default for WorldSection {
    fn default() -> Self {
        WorldSection {
            horizon_ns: 1_000_000_000,
            seed: 0,
            granter_host: 0,
            holders: vec![1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeaseSection {
    pub term_ns: Nanos,
    pub multiplier: f64,
    pub drift: f64,
    pub renew_fraction: f64,
    /// All holders contend for one lease id; otherwise each holder gets its
    /// own id derived from its host id.
    pub shared_lease: bool,
    pub lease_id: LeaseId,
}

impl Default for LeaseSection {
    fn default() -> Self {
        LeaseSection {
            term_ns: 10_000_000,
            multiplier: 3.0,
            drift: 0.0,
            renew_fraction: 0.2,
            shared_lease: true,
            lease_id: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineSection {
    pub poll_interval_ns: Nanos,
    pub max_delivery_delay_ns: Nanos,
    pub max_request_retries: u32,
    pub max_submit_retries: u32,
    pub interrupt_detection: bool,
    pub freq_check_on_epoch: bool,
}

impl Default for EngineSection {
    fn default() -> Self {
        EngineSection {
            poll_interval_ns: 100_000,
            max_delivery_delay_ns: 1_000_000,
            max_request_retries: 16,
            max_submit_retries: 16,
            interrupt_detection: true,
            freq_check_on_epoch: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardwareSection {
    /// Execution time consumed by one counter read.
    pub read_cost_ns: Nanos,
    /// True duration of one entropy burst, drawn uniformly from this range.
    /// The defaults sit strictly inside the rate verifier's accepted band so
    /// an unskewed clock never trips it.
    pub entropy_min_ns: Nanos,
    pub entropy_max_ns: Nanos,
    pub section_op_cost_ns: Nanos,
    /// Chance that a commit aborts for no reason, modeling transactional
    /// back-off under contention.
    pub spurious_abort_probability: f64,
}

impl Default for HardwareSection {
    fn default() -> Self {
        HardwareSection {
            read_cost_ns: 30,
            entropy_min_ns: 7_100,
            entropy_max_ns: 10_400,
            section_op_cost_ns: 0,
            spurious_abort_probability: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub base_delay_ns: Nanos,
    /// Mean of the exponential jitter added to every delivery.
    pub jitter_mean_ns: Nanos,
    /// Hard ceiling on total delivery delay. Set this when a run is meant
    /// to respect the delay bound the engines are configured with.
    pub delay_cap_ns: Option<Nanos>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            base_delay_ns: 50_000,
            jitter_mean_ns: 50_000,
            delay_cap_ns: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSection {
    /// Holder performs one guarded submission per interval; 0 disables.
    pub submit_interval_ns: Nanos,
    /// How long the holder sleeps between lease upkeep passes.
    pub update_interval_ns: Nanos,
    pub payload_bytes: usize,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        WorkloadSection {
            submit_interval_ns: 0,
            update_interval_ns: 1_000_000,
            payload_bytes: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversarySection {
    /// Hosts targeted by the generated interrupt stream.
    pub interrupt_hosts: Vec<HostId>,
    /// Poisson arrival rate of generated interrupts, per target host.
    pub interrupt_rate_hz: f64,
    /// Length of each generated preemption.
    pub window_ns: Nanos,
    /// Per generated window: chance of also retuning the counter rate to a
    /// factor drawn uniformly from [1 - freq_drift, 1 + freq_drift].
    pub retune_probability: f64,
    pub freq_drift: f64,
    /// Per generated window: chance of writing the counter back by up to
    /// `rollback_max_ns`.
    pub rollback_probability: f64,
    pub rollback_max_ns: Nanos,
    /// Per-message interference probabilities.
    pub drop_probability: f64,
    pub delay_probability: f64,
    pub extra_delay_ns: Nanos,
    pub interrupts: Vec<ScheduledInterrupt>,
    pub set_freq: Vec<ScheduledFreq>,
    pub set_counter: Vec<ScheduledCounter>,
    pub delay_msg: Vec<MsgRule>,
    pub drop_msg: Vec<MsgRule>,
}

impl Default for AdversarySection {
    fn default() -> Self {
        AdversarySection {
            interrupt_hosts: Vec::new(),
            interrupt_rate_hz: 0.0,
            window_ns: 20_300,
            retune_probability: 0.0,
            freq_drift: 0.0,
            rollback_probability: 0.0,
            rollback_max_ns: 0,
            drop_probability: 0.0,
            delay_probability: 0.0,
            extra_delay_ns: 0,
            interrupts: Vec::new(),
            set_freq: Vec::new(),
            set_counter: Vec::new(),
            delay_msg: Vec::new(),
            drop_msg: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledInterrupt {
    pub host: HostId,
    pub at_ns: Nanos,
    pub duration_ns: Nanos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledFreq {
    pub host: HostId,
    pub at_ns: Nanos,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledCounter {
    pub host: HostId,
    pub at_ns: Nanos,
    pub value_ns: Nanos,
}

/// Matches messages in flight. Absent fields match anything; `count` limits
/// how many messages the rule fires on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MsgRule {
    pub from: Option<HostId>,
    pub to: Option<HostId>,
    pub kind: Option<MessageKind>,
    pub after_ns: Nanos,
    pub count: Option<u32>,
    pub extra_ns: Nanos,
}

impl Default for MsgRule {
    fn default() -> Self {
        MsgRule {
            from: None,
            to: None,
            kind: None,
            after_ns: 0,
            count: None,
            extra_ns: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MutationSection {
    /// Makes holder hardware lie about preemptions, so epochs never end.
    /// Exists so the conformance and trace checkers can prove they catch a
    /// broken implementation; never useful otherwise.
    pub suppress_interrupt_flag: bool,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario, SimError> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| SimError::BadScenario(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::BadScenario(msg));
        if self.world.horizon_ns == 0 {
            return bad("world.horizon_ns must be positive".into());
        }
        if self.world.holders.is_empty() {
            return bad("world.holders must name at least one host".into());
        }
        let mut hosts = self.world.holders.clone();
        hosts.push(self.world.granter_host);
        hosts.sort_unstable();
        hosts.dedup();
        if hosts.len() != self.world.holders.len() + 1 {
            return bad("hosts must be distinct and holders must not include the granter".into());
        }
        self.lease_config().validate().map_err(|e| {
            SimError::BadScenario(format!("lease section rejected: {e}"))
        })?;
        self.policy()
            .validate()
            .map_err(|e| SimError::BadScenario(format!("engine section rejected: {e}")))?;
        if self.hardware.entropy_min_ns == 0
            || self.hardware.entropy_min_ns >= self.hardware.entropy_max_ns
        {
            return bad("hardware.entropy bounds must satisfy 0 < min < max".into());
        }
        for (name, p) in [
            ("hardware.spurious_abort_probability", self.hardware.spurious_abort_probability),
            ("adversary.retune_probability", self.adversary.retune_probability),
            ("adversary.rollback_probability", self.adversary.rollback_probability),
            ("adversary.drop_probability", self.adversary.drop_probability),
            ("adversary.delay_probability", self.adversary.delay_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.adversary.interrupt_rate_hz < 0.0 || !self.adversary.interrupt_rate_hz.is_finite()
        {
            return bad("adversary.interrupt_rate_hz must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&self.adversary.freq_drift) {
            return bad("adversary.freq_drift must lie in [0, 1)".into());
        }
        let lo = 1.0 - self.adversary.freq_drift;
        let hi = 1.0 + self.adversary.freq_drift;
        for sf in &self.adversary.set_freq {
            if !(lo..=hi).contains(&sf.factor) {
                return bad(format!(
                    "set_freq factor {} for host {} outside the declared rate budget [{lo}, {hi}]",
                    sf.factor, sf.host
                ));
            }
        }
        let known = |h: HostId| h == self.world.granter_host || self.world.holders.contains(&h);
        for h in self
            .adversary
            .interrupt_hosts
            .iter()
            .chain(self.adversary.interrupts.iter().map(|i| &i.host))
            .chain(self.adversary.set_freq.iter().map(|i| &i.host))
            .chain(self.adversary.set_counter.iter().map(|i| &i.host))
        {
            if !known(*h) {
                return bad(format!("adversary action targets unknown host {h}"));
            }
        }
        if self.adversary.interrupt_rate_hz > 0.0 && self.adversary.window_ns == 0 {
            return bad("adversary.window_ns must be positive when interrupts are generated".into());
        }
        if self.adversary.interrupts.iter().any(|i| i.duration_ns == 0) {
            return bad("scheduled interrupts must have positive duration".into());
        }
        Ok(())
    }

    pub fn lease_config(&self) -> LeaseConfig {
        LeaseConfig {
            lease_term: self.lease.term_ns,
            granter_multiplier: self.lease.multiplier,
            drift: self.lease.drift,
            renew_fraction: self.lease.renew_fraction,
        }
    }

    pub fn policy(&self) -> EnginePolicy {
        EnginePolicy {
            max_delivery_delay: self.engine.max_delivery_delay_ns,
            poll_interval: self.engine.poll_interval_ns,
            max_request_retries: self.engine.max_request_retries,
            max_submit_retries: self.engine.max_submit_retries,
            interrupt_detection: self.engine.interrupt_detection,
            freq_check_on_epoch: self.engine.freq_check_on_epoch,
            freq_check: Default::default(),
        }
    }

    /// The lease id a given holder competes for.
    pub fn lease_id_of(&self, holder: HostId) -> LeaseId {
        if self.lease.shared_lease {
            self.lease.lease_id
        } else {
            lease_id_for(holder, 0)
        }
    }

    /// Granter first, then holders: every host in the world.
    pub fn all_hosts(&self) -> Vec<HostId> {
        let mut hosts = vec![self.world.granter_host];
        hosts.extend(&self.world.holders);
        hosts
    }
}
