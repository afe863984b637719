use super::*;
use crate::distributions::ServiceDistribution;
use crate::policies::PolicySpec;
use crate::traffic::{generate_poisson_schedule, DelayModel, TrafficConfig};

fn schedule(rate: f64, horizon: f64, seed: u64) -> ArrivalSchedule {
    generate_poisson_schedule(&TrafficConfig {
        rate,
        delay_model: DelayModel::Zero,
        horizon,
        seed,
    })
    .unwrap()
}

fn opts() -> RunOptions {
    RunOptions {
        record_events: true,
        check_invariants: true,
        ..RunOptions::default()
    }
}

#[test]
fn single_packet_constant_service() {
    let cfg = SystemConfig::new(1, 1).unwrap();
    let sched = ArrivalSchedule::from_pairs(&[(0.0, 0.0)]).unwrap();
    let dist = ServiceDistribution::constant(2.0).unwrap();
    for name in ["np-MAF-LGFS", "np-MASIF-LGFS", "np-RAND-FCFS"] {
        let policy: PolicySpec = name.parse().unwrap();
        let tr = run_with(&cfg, &sched, &dist, &policy, 5.0, 1, opts()).unwrap();
        assert_eq!(tr.packets[0].delivery_time, Some(2.0));
        assert_eq!(tr.delta[0].value_at(2.0).unwrap(), 2.0);
        assert_eq!(tr.delta[0].value_at(4.0).unwrap(), 4.0);
    }
}

#[test]
fn first_deliveries_reset_to_elapsed_time() {
    let cfg = SystemConfig::new(2, 1).unwrap();
    let sched = ArrivalSchedule::from_pairs(&[(0.0, 0.0)]).unwrap();
    let dist = ServiceDistribution::exponential(1.0).unwrap();
    let tr = run_with(&cfg, &sched, &dist, &PolicySpec::prmp_maf_lgfs(), 100.0, 3, opts()).unwrap();
    for p in &tr.packets {
        let d = p.delivery_time.expect("delivered well before the horizon");
        let v = tr.delta[p.flow].value_at(d).unwrap();
        assert!((v - d).abs() < 1e-12);
    }
}

#[test]
fn preemptive_maf_beats_rand_fcfs_on_max_age() {
    let cfg = SystemConfig::new(3, 1).unwrap();
    let horizon = 1e4;
    let sched = schedule(1.0, horizon, 11);
    let dist = ServiceDistribution::exponential(1.0).unwrap();
    let avg_max = |tr: &SimTrace| {
        // Time-average of max_n Δ_n on a fine grid.
        let steps = 200_000;
        let h = horizon / steps as f64;
        (0..steps)
            .map(|k| {
                let t = (k as f64 + 0.5) * h;
                tr.ages_at(t).into_iter().fold(f64::MIN, f64::max)
            })
            .sum::<f64>()
            / steps as f64
    };
    let maf = run(&cfg, &sched, &dist, &PolicySpec::prmp_maf_lgfs(), horizon, 5).unwrap();
    let rand = run(&cfg, &sched, &dist, &"np-RAND-FCFS".parse().unwrap(), horizon, 5).unwrap();
    let (a, b) = (avg_max(&maf), avg_max(&rand));
    assert!(a.is_finite() && a < b, "MAF {a} vs RAND-FCFS {b}");
}

#[test]
fn rejects_bad_configs() {
    let cfg = SystemConfig::new(2, 1).unwrap();
    let sched = ArrivalSchedule::from_pairs(&[(0.0, 0.0)]).unwrap();
    let constant = ServiceDistribution::constant(1.0).unwrap();
    let exp = ServiceDistribution::exponential(1.0).unwrap();
    let prmp = PolicySpec::prmp_maf_lgfs();
    assert!(run(&cfg, &sched, &constant, &prmp, 10.0, 0).is_err());
    let unchecked = RunOptions {
        allow_unchecked: true,
        ..RunOptions::default()
    };
    assert!(run_with(&cfg, &sched, &constant, &prmp, 10.0, 0, unchecked).is_ok());
    assert!(run(&cfg, &sched, &exp, &prmp, 0.0, 0).is_err());
    assert!(run(&cfg, &sched, &exp, &prmp, -1.0, 0).is_err());
    let shared = RunOptions {
        completion: CompletionMode::SharedEpochs { seed: 1 },
        ..RunOptions::default()
    };
    let two = SystemConfig::new(2, 2).unwrap();
    assert!(run_with(&two, &sched, &exp, &prmp, 10.0, 0, shared).is_err());
    let np = PolicySpec::np_masif_lgfs();
    assert!(run_with(&cfg, &sched, &constant, &np, 10.0, 0, shared).is_err());
}

#[test]
fn decision_epoch_with_empty_queue_assigns_nothing() {
    let cfg = SystemConfig::new(2, 2).unwrap();
    let sched = ArrivalSchedule::from_pairs(&[(1.0, 1.0)]).unwrap();
    let dist = ServiceDistribution::exponential(1.0).unwrap();
    let mut sim =
        Simulator::new(&cfg, &sched, &dist, &PolicySpec::prmp_maf_lgfs(), 5.0, 0, opts()).unwrap();
    assert!(sim.on_decision_epoch().is_empty());
}

#[test]
fn nonpreemptive_busy_servers_ignore_arrivals() {
    let cfg = SystemConfig::new(2, 1).unwrap();
    let sched = ArrivalSchedule::from_pairs(&[(0.0, 0.0), (0.5, 0.5)]).unwrap();
    let dist = ServiceDistribution::constant(1.0).unwrap();
    let mut sim =
        Simulator::new(&cfg, &sched, &dist, &PolicySpec::np_masif_lgfs(), 5.0, 0, opts()).unwrap();
    sim.process_events_at(0.0);
    let busy = sim.state().in_service(0);
    assert!(busy.is_some());
    assert_eq!(sim.next_event_time(), Some(0.5));
    sim.process_events_at(0.5);
    assert_eq!(sim.state().in_service(0), busy);
    assert!(sim.on_decision_epoch().is_empty());
}

#[test]
fn preempts_for_fresher_packet_of_max_age_flow() {
    // Flow 0 is delivered at t=1 (S=0.9) so flow 1 holds the maximum age. A
    // flow-0 packet is then in service when a fresher generation arrives.
    let cfg = SystemConfig::new(2, 1).unwrap();
    let sched = ArrivalSchedule::from_pairs(&[(0.0, 0.0), (2.0, 2.0)]).unwrap();
    let dist = ServiceDistribution::exponential(1.0).unwrap();
    let mut sim =
        Simulator::new(&cfg, &sched, &dist, &PolicySpec::prmp_maf_lgfs(), 50.0, 0, opts()).unwrap();
    sim.state.advance_clock(1.0);
    sim.state.set_delivered_stamp(0, 0.9);
    sim.state.advance_clock(2.0);
    sim.state.enqueue(Packet::new(0, 1, 0.0, 0.0));
    let pid0 = sim.state.packets().len() - 1;
    sim.start(0, pid0);
    // Next pending event is the arrival at t=2.
    while sim.next_event_time() != Some(2.0) {
        let t = sim.next_event_time().unwrap();
        assert!(t <= 2.0);
        sim.events.pop();
    }
    let (_, kind) = sim.events.pop().unwrap();
    sim.handle(kind);
    let actions = sim.on_decision_epoch();
    assert_eq!(actions.len(), 1);
    match actions[0] {
        Action::Preempt(d) => {
            assert_eq!(d.displaced, pid0);
            let p = sim.state().packet(d.replacement);
            assert_eq!((p.flow, p.gen_time), (1, 2.0));
        }
        other => panic!("expected preemption, got {other:?}"),
    }
    assert_eq!(sim.state().queue_len(), 2);
}

#[test]
fn invariants_hold_across_policies() {
    let dist = ServiceDistribution::exponential(1.0).unwrap();
    for (n, m) in [(3, 1), (4, 2), (5, 3)] {
        let cfg = SystemConfig::new(n, m).unwrap();
        let sched = schedule(1.2 * m as f64 / n as f64, 500.0, n as u64);
        for name in [
            "prmp-MAF-LGFS",
            "np-MAF-LGFS",
            "np-MASIF-LGFS",
            "prmp-MASIF-LGFS",
            "np-RAND-FCFS",
            "prmp-RAND-LGFS+rtb",
            "np-MAF-FCFS+idle=0.3",
        ] {
            let policy: PolicySpec = name.parse().unwrap();
            let tr = run_with(&cfg, &sched, &dist, &policy, 500.0, 9, opts()).unwrap();
            assert!(tr.check_xi_below_delta().is_ok(), "{name}");
            let delivered = tr.delivered_count();
            assert_eq!(
                delivered + tr.waiting_at_end + tr.in_service_at_end,
                tr.packets.len(),
                "{name}"
            );
            for p in &tr.packets {
                assert!(p.is_consistent(), "{name}: {p:?}");
            }
            for proc in tr.delta.iter().chain(&tr.xi) {
                for seg in proc.segments(0.0, 500.0).unwrap() {
                    assert!(seg.len >= 0.0 && seg.value >= 0.0);
                }
            }
        }
    }
}

#[test]
fn unit_slope_between_events() {
    let cfg = SystemConfig::new(3, 2).unwrap();
    let sched = schedule(1.0, 200.0, 2);
    let dist = ServiceDistribution::exponential(1.5).unwrap();
    let tr = run(&cfg, &sched, &dist, &PolicySpec::prmp_maf_lgfs(), 200.0, 4).unwrap();
    let times = &tr.event_times;
    for w in times.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a < 1e-9 {
            continue;
        }
        let (t0, t1) = (a + (b - a) * 0.25, a + (b - a) * 0.75);
        for f in 0..3 {
            for proc in [&tr.delta[f], &tr.xi[f]] {
                let slope = (proc.value_at(t1).unwrap() - proc.value_at(t0).unwrap()) / (t1 - t0);
                assert!((slope - 1.0).abs() < 1e-6, "slope {slope} on ({a}, {b})");
            }
        }
    }
}

#[test]
fn deterministic_event_log() {
    let cfg = SystemConfig::new(4, 2).unwrap();
    let sched = schedule(0.8, 300.0, 7);
    let dist = ServiceDistribution::erlang(2, 2.0).unwrap();
    let policy: PolicySpec = "np-RAND-LGFS+rtb".parse().unwrap();
    let a = run_with(&cfg, &sched, &dist, &policy, 300.0, 21, opts()).unwrap();
    let b = run_with(&cfg, &sched, &dist, &policy, 300.0, 21, opts()).unwrap();
    assert_eq!(a.events, b.events);
    assert!(!a.events.is_empty());
    let c = run_with(&cfg, &sched, &dist, &policy, 300.0, 22, opts()).unwrap();
    assert_ne!(a.events, c.events);
}

#[test]
fn shared_epochs_only_complete_busy_server() {
    let cfg = SystemConfig::new(2, 1).unwrap();
    let sched = schedule(0.3, 200.0, 1);
    let dist = ServiceDistribution::exponential(1.0).unwrap();
    let o = RunOptions {
        completion: CompletionMode::SharedEpochs { seed: 99 },
        ..opts()
    };
    let tr = run_with(&cfg, &sched, &dist, &PolicySpec::prmp_maf_lgfs(), 200.0, 0, o).unwrap();
    let epochs: Vec<f64> = tr
        .events
        .iter()
        .filter_map(|e| match e {
            EventRecord::Epoch { time } => Some(*time),
            _ => None,
        })
        .collect();
    for d in tr.delivery_times() {
        assert!(epochs.contains(&d));
    }
    // Same epoch seed gives the same epochs regardless of the policy.
    let tr2 = run_with(&cfg, &sched, &dist, &PolicySpec::np_masif_lgfs(), 200.0, 5, o).unwrap();
    let epochs2: Vec<f64> = tr2
        .events
        .iter()
        .filter_map(|e| match e {
            EventRecord::Epoch { time } => Some(*time),
            _ => None,
        })
        .collect();
    assert_eq!(epochs, epochs2);
}

#[test]
fn trace_exports() {
    let cfg = SystemConfig::new(2, 1).unwrap();
    let sched = schedule(0.5, 20.0, 1);
    let dist = ServiceDistribution::exponential(1.0).unwrap();
    let tr = run_with(&cfg, &sched, &dist, &PolicySpec::prmp_maf_lgfs(), 20.0, 0, opts()).unwrap();
    let mut json = Vec::new();
    tr.write_json(&mut json).unwrap();
    let back: SimTrace = serde_json::from_slice(&json).unwrap();
    assert_eq!(back.events, tr.events);
    let mut csv = Vec::new();
    tr.write_breakpoints_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("process,flow,time,value\n"));
    assert!(text.contains("\nxi,1,"));
}
