//! End-to-end worlds: the standard granter/holder scripts run under
//! scripted schedulers, clocks, and networks, and every finished trace is
//! replayed through the safety checker.

use leaseguard_sim::{
    check_trace, metrics, run, MsgRule, Scenario, ScheduledCounter, ScheduledFreq,
    ScheduledInterrupt, TraceBody, Verdict,
};

/// One granter, one holder, guarded submissions every half millisecond.
fn busy_world() -> Scenario {
    let mut s = Scenario::default();
    s.workload.submit_interval_ns = 500_000;
    s
}

fn verdicts(scenario: &Scenario, seeds: std::ops::Range<u64>) -> Vec<Verdict> {
    seeds
        .map(|seed| check_trace(&run(scenario, seed).unwrap()))
        .collect()
}

#[test]
fn an_untouched_world_renews_submits_and_stays_safe() {
    let trace = run(&busy_world(), 7).unwrap();
    assert_eq!(check_trace(&trace), Verdict::Safe);

    let report = metrics(&trace);
    let holder = report.holder(1).unwrap();
    assert!(holder.renewals > 50, "renewals: {}", holder.renewals);
    assert_eq!(holder.lost_leases, 0);
    assert_eq!(holder.freq_alarms, 0);
    assert_eq!(holder.timeouts, 0);
    assert_eq!(holder.epochs_ended, 0);
    // The script submits at most once per update pause.
    assert!(holder.effects_released > 900, "{}", holder.effects_released);
    assert_eq!(holder.submits, holder.effects_released);
    assert!(!holder.timer_fault);
    assert!(
        holder.under_accounting < 0.01,
        "clock credited too little: {}",
        holder.under_accounting
    );
    assert_eq!(report.granter.expirations, 0);
    assert_eq!(report.messages_dropped, 0);
    assert_eq!(report.granter.active_grants_at_end, 1);
}

#[test]
fn reruns_of_the_same_seed_are_bit_identical() {
    let mut s = busy_world();
    s.adversary.interrupt_hosts = vec![1];
    s.adversary.interrupt_rate_hz = 200.0;
    s.adversary.retune_probability = 0.3;
    s.adversary.freq_drift = 0.4;
    s.adversary.rollback_probability = 0.2;
    s.adversary.rollback_max_ns = 500_000;
    s.adversary.drop_probability = 0.01;
    s.adversary.delay_probability = 0.05;
    s.adversary.extra_delay_ns = 200_000;

    let a = run(&s, 42).unwrap().to_jsonl();
    let b = run(&s, 42).unwrap().to_jsonl();
    assert_eq!(a, b, "same seed, same world, different bytes");

    let c = run(&s, 43).unwrap().to_jsonl();
    assert_ne!(a, c, "different seeds should not replay the same world");
}

#[test]
fn clock_writes_outside_preemption_windows_bounce_off() {
    let mut s = busy_world();
    // No interrupt windows exist, so neither write can land.
    s.adversary.freq_drift = 0.5;
    s.adversary.set_freq = vec![ScheduledFreq {
        host: 1,
        at_ns: 5_000_000,
        factor: 0.5,
    }];
    s.adversary.set_counter = vec![ScheduledCounter {
        host: 1,
        at_ns: 9_000_000,
        value_ns: 0,
    }];

    let trace = run(&s, 3).unwrap();
    let rejected: Vec<&str> = trace
        .events
        .iter()
        .filter_map(|e| match &e.body {
            TraceBody::ActionRejected { action, .. } => Some(action.as_str()),
            _ => None,
        })
        .collect();
    assert_eq!(rejected, ["set_freq", "set_counter"]);

    assert_eq!(check_trace(&trace), Verdict::Safe);
    let holder = metrics(&trace).holder(1).unwrap().clone();
    assert_eq!(holder.freq_alarms, 0);
    assert_eq!(holder.lost_leases, 0);
    assert!(holder.renewals > 50);
}

#[test]
fn a_counter_rollback_during_preemption_is_absorbed_by_renewal() {
    let mut s = busy_world();
    s.adversary.interrupts = vec![ScheduledInterrupt {
        host: 1,
        at_ns: 5_000_000,
        duration_ns: 500_000,
    }];
    // Rewind the holder's counter by about four milliseconds while it is
    // off the CPU.
    s.adversary.set_counter = vec![ScheduledCounter {
        host: 1,
        at_ns: 5_200_000,
        value_ns: 1_000_000,
    }];

    let trace = run(&s, 11).unwrap();
    assert_eq!(check_trace(&trace), Verdict::Safe);

    let holder = metrics(&trace).holder(1).unwrap().clone();
    assert_eq!(holder.epochs_ended, 1, "the tainted interval must end the epoch");
    assert!(!holder.timer_fault, "a flagged rollback is not a fault");
    assert_eq!(holder.freq_alarms, 0, "the rate was never changed");
    assert!(holder.renewals > 50, "the holder must recover and keep renewing");
    assert!(holder.usable_at_end);
}

#[test]
fn suppressing_the_interrupt_flag_turns_the_rollback_into_a_fault() {
    let mut s = busy_world();
    s.adversary.interrupts = vec![ScheduledInterrupt {
        host: 1,
        at_ns: 5_000_000,
        duration_ns: 500_000,
    }];
    s.adversary.set_counter = vec![ScheduledCounter {
        host: 1,
        at_ns: 5_200_000,
        value_ns: 1_000_000,
    }];
    s.mutation.suppress_interrupt_flag = true;

    // The counter now regresses with no interrupt to explain it, which
    // conforming hardware cannot produce: the holder must refuse to keep
    // running on such a clock rather than silently re-anchor.
    let trace = run(&s, 11).unwrap();
    let holder = metrics(&trace).holder(1).unwrap().clone();
    assert!(holder.timer_fault, "regression without a flag must latch a fault");
    assert_eq!(holder.epochs_ended, 0, "the taint was hidden, so no epoch ended");
    assert!(
        !holder.usable_at_end,
        "a faulted holder must not keep a usable lease"
    );
}

#[test]
fn dropped_requests_cost_timeouts_but_the_lease_recovers() {
    let mut s = busy_world();
    s.adversary.drop_msg = vec![MsgRule {
        from: Some(1),
        to: None,
        kind: None,
        after_ns: 0,
        count: Some(2),
        extra_ns: 0,
    }];

    let trace = run(&s, 19).unwrap();
    assert_eq!(check_trace(&trace), Verdict::Safe);

    let report = metrics(&trace);
    assert_eq!(report.messages_dropped, 2);
    let holder = report.holder(1).unwrap();
    assert!(holder.timeouts >= 2, "timeouts: {}", holder.timeouts);
    assert!(holder.retries >= 2, "retries: {}", holder.retries);
    assert!(holder.renewals > 50, "renewals: {}", holder.renewals);
    assert_eq!(holder.lost_leases, 0);
}

#[test]
fn preemption_totals_match_the_scheduled_windows() {
    let mut s = busy_world();
    s.adversary.interrupts = vec![
        ScheduledInterrupt {
            host: 1,
            at_ns: 100_000_000,
            duration_ns: 300_000,
        },
        ScheduledInterrupt {
            host: 1,
            at_ns: 400_000_000,
            duration_ns: 200_000,
        },
    ];

    let trace = run(&s, 23).unwrap();
    assert_eq!(check_trace(&trace), Verdict::Safe);

    let mut starts = Vec::new();
    let mut ends = Vec::new();
    let mut total = None;
    for e in &trace.events {
        match &e.body {
            TraceBody::WindowStart { host: 1, until } => starts.push((e.t, *until)),
            TraceBody::WindowEnd { host: 1 } => ends.push(e.t),
            TraceBody::WindowTotal {
                host: 1,
                total_ns,
                count,
            } => total = Some((*total_ns, *count)),
            _ => {}
        }
    }
    assert_eq!(
        starts,
        [(100_000_000, 100_300_000), (400_000_000, 400_200_000)]
    );
    assert_eq!(ends, [100_300_000, 400_200_000]);
    assert_eq!(total, Some((500_000, 2)));

    let holder = metrics(&trace).holder(1).unwrap().clone();
    assert_eq!(holder.preempted_ns, 500_000);
    assert_eq!(holder.preemption_count, 2);
    assert_eq!(holder.epochs_ended, 2, "each window taints one interval");
    assert!(holder.renewals > 50);
    assert!(
        holder.under_accounting < 0.01,
        "under-accounting: {}",
        holder.under_accounting
    );
}

#[test]
fn a_bare_multiplier_breaks_under_rate_attacks_where_a_padded_one_holds() {
    let mut attack = busy_world();
    attack.adversary.interrupt_hosts = vec![1];
    attack.adversary.interrupt_rate_hz = 50.0;
    attack.adversary.retune_probability = 1.0;
    attack.adversary.freq_drift = 0.5;

    // Granter holds grants exactly as long as holders count them: any
    // slow-clock factor the rate check cannot see stretches the holder's
    // countdown past the granter's record.
    let mut bare = attack.clone();
    bare.lease.multiplier = 1.0;
    let broken = verdicts(&bare, 0..6)
        .iter()
        .filter(|v| !v.is_safe())
        .count();
    assert!(
        broken >= 3,
        "a multiplier of 1 should break under +/-50% rate attacks, broke {broken}/6"
    );

    // Padding the granter's record by the worst stretch the check leaves
    // open keeps every one of the same worlds safe.
    let mut padded = attack;
    padded.lease.multiplier = 3.0;
    for (seed, v) in verdicts(&padded, 0..6).iter().enumerate() {
        assert_eq!(*v, Verdict::Safe, "seed {seed} violated under multiplier 3");
    }
}

#[test]
fn undefended_timekeeping_leaks_effects_under_stale_grants() {
    let mut s = busy_world();
    s.workload.submit_interval_ns = 1_000_000;
    s.adversary.interrupt_hosts = vec![1];
    s.adversary.interrupt_rate_hz = 2_000.0;
    s.adversary.rollback_probability = 1.0;
    s.adversary.rollback_max_ns = 3_000_000;

    // With detection on, every rollback taints its interval and the holder
    // renews before acting: all seeds stay safe.
    let mut defended = s.clone();
    defended.engine.interrupt_detection = true;
    for (seed, v) in verdicts(&defended, 0..6).iter().enumerate() {
        assert_eq!(*v, Verdict::Safe, "seed {seed} violated despite detection");
    }

    // With detection off, the countdown stalls while real time passes; the
    // granter's record lapses and some guarded submission lands after it.
    s.engine.interrupt_detection = false;
    let leaked = verdicts(&s, 0..6).iter().filter(|v| !v.is_safe()).count();
    assert!(
        leaked >= 3,
        "undefended runs should release stale effects, leaked {leaked}/6"
    );
}

#[test]
fn traces_round_trip_through_jsonl_files() {
    let trace = run(&busy_world(), 5).unwrap();
    let text = trace.to_jsonl();
    let back = leaseguard_sim::Trace::read_jsonl(text.as_bytes()).unwrap();
    assert_eq!(back.seed, trace.seed);
    assert_eq!(back.horizon_ns, trace.horizon_ns);
    assert_eq!(back.events.len(), trace.events.len());
    assert_eq!(check_trace(&back), Verdict::Safe);
}
