//! Paired-policy runs on common randomness and the trace predicates they
//! make checkable: sorted-age dominance, weak work-efficiency, the Ξ lower
//! bound, and the per-jump comparison step.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::ServiceDistribution;
use crate::engine::{
    CompletionMode, CouplingMode, CouplingTag, RunOptions, Sampling, SimTrace, Simulator,
};
use crate::error::{config_err, Error, Result};
use crate::metrics::{empirical_st_order, sorted_dominates, time_average_of, PenaltyFunction, StOrderReport};
use crate::policies::{FlowRule, PacketRule, PolicySpec};
use crate::rng::{derive_seed, name_hash, stream, Stream};
use crate::stats::{ks_two_sample, mean, KsResult};
use crate::traffic::{generate_poisson_schedule, DelayModel, TrafficConfig};
use crate::types::{ArrivalSchedule, SystemConfig, Time};

/// Violations listed in a report before truncation.
const MAX_LISTED: usize = 50;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoupledRunConfig {
    pub system: SystemConfig,
    pub schedule: ArrivalSchedule,
    pub service: ServiceDistribution,
    pub policies: Vec<PolicySpec>,
    pub mode: CouplingMode,
    pub horizon: Time,
    pub seed: u64,
    #[serde(default)]
    pub allow_unchecked: bool,
}

impl CoupledRunConfig {
    fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return config_err("coupled run needs at least one policy");
        }
        match self.mode {
            CouplingMode::SharedEpochs => {
                if self.system.num_servers != 1 {
                    return config_err("shared_epochs coupling requires a single server");
                }
                if !self.service.is_exponential() {
                    return config_err("shared_epochs coupling requires exponential service");
                }
            }
            CouplingMode::IndependentDraws => {}
            CouplingMode::WorkEfficiency => {
                if self.policies.len() != 2 {
                    return config_err("work_efficiency coupling takes exactly two policies (P, π)");
                }
                if self.policies.iter().any(PolicySpec::is_preemptive) {
                    return config_err("work_efficiency coupling requires non-preemptive policies");
                }
                if !self.policies[0].is_work_conserving() {
                    return config_err("work_efficiency coupling requires a work-conserving P");
                }
                if !self.service.is_nbu() {
                    return config_err("work_efficiency coupling requires NBU service");
                }
            }
        }
        Ok(())
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            allow_unchecked: self.allow_unchecked,
            ..RunOptions::default()
        }
    }

    fn policy_seed(&self, index: usize, policy: &PolicySpec) -> u64 {
        derive_seed(self.seed, &[name_hash(&policy.to_string()), index as u64])
    }
}

/// Runs every policy of `c` on the shared schedule and completion randomness.
///
/// `shared_epochs`: one Poisson(μ) epoch stream drives all policies.
/// `independent_draws`: each policy samples its own service times.
/// `work_efficiency`: `policies[0]` (P) and `policies[1]` (π) advance in
/// lockstep; at each π service start, while P's queue is non-empty, one busy
/// P server not yet tied to a π service has its residual re-drawn from π's
/// uniform, so it finishes no later than that π service.
pub fn run_coupled(c: &CoupledRunConfig) -> Result<Vec<SimTrace>> {
    c.validate()?;
    let tag = CouplingTag {
        id: c.seed,
        mode: c.mode,
    };
    match c.mode {
        CouplingMode::SharedEpochs | CouplingMode::IndependentDraws => {
            let completion = if c.mode == CouplingMode::SharedEpochs {
                CompletionMode::SharedEpochs {
                    seed: derive_seed(c.seed, &[u64::MAX]),
                }
            } else {
                CompletionMode::Sampled
            };
            c.policies
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let opts = RunOptions {
                        completion,
                        ..c.options()
                    };
                    let mut sim =
                        Simulator::new(&c.system, &c.schedule, &c.service, p, c.horizon, c.policy_seed(i, p), opts)?;
                    sim.set_coupling(tag);
                    sim.run_to_horizon();
                    Ok(sim.finish())
                })
                .collect()
        }
        CouplingMode::WorkEfficiency => {
            let (pp, pi) = (&c.policies[0], &c.policies[1]);
            let mut p_sim =
                Simulator::new(&c.system, &c.schedule, &c.service, pp, c.horizon, c.policy_seed(0, pp), c.options())?;
            let pi_opts = RunOptions {
                sampling: Sampling::InverseTransform,
                ..c.options()
            };
            let mut pi_sim =
                Simulator::new(&c.system, &c.schedule, &c.service, pi, c.horizon, c.policy_seed(1, pi), pi_opts)?;
            p_sim.set_coupling(tag);
            pi_sim.set_coupling(tag);
            loop {
                let t = match (p_sim.next_event_time(), pi_sim.next_event_time()) {
                    (None, None) => break,
                    (a, b) => a.into_iter().chain(b).fold(f64::INFINITY, f64::min),
                };
                if p_sim.next_event_time() == Some(t) {
                    p_sim.process_events_at(t);
                }
                if pi_sim.next_event_time() == Some(t) {
                    pi_sim.process_events_at(t);
                }
                p_sim.take_starts();
                for s in pi_sim.take_starts() {
                    if p_sim.state().queue_len() == 0 {
                        break;
                    }
                    let (u, x) = (s.uniform.expect("inverse transform"), s.service_time.expect("sampled"));
                    p_sim.couple_residual(t, u, x);
                }
            }
            Ok(vec![p_sim.finish(), pi_sim.finish()])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceViolation {
    pub time: Time,
    /// 1-based rank in decreasing order.
    pub rank: usize,
    pub p_value: f64,
    pub pi_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub policy_p: String,
    pub policy_pi: String,
    pub checkpoints: usize,
    pub violation_count: usize,
    /// The first violations, in time order.
    pub violations: Vec<DominanceViolation>,
    pub ok: bool,
}

fn require_same_coupling(a: &SimTrace, b: &SimTrace, mode: Option<CouplingMode>) -> Result<()> {
    let (Some(ta), Some(tb)) = (a.coupling, b.coupling) else {
        return Err(Error::Incomparable("traces were not produced by a coupled run".into()));
    };
    if ta != tb {
        return Err(Error::Incomparable("traces come from different coupled runs".into()));
    }
    if let Some(m) = mode {
        if ta.mode != m {
            return Err(Error::Incomparable(format!("expected {m:?} coupling, found {:?}", ta.mode)));
        }
    }
    if a.schedule_fingerprint != b.schedule_fingerprint {
        return Err(Error::Incomparable("arrival schedules differ".into()));
    }
    if a.num_flows != b.num_flows {
        return Err(Error::Incomparable("flow counts differ".into()));
    }
    Ok(())
}

/// Checks that the sorted age vector of `p` is dominated by that of `pi` at
/// every event instant of either trace. Both grow at unit rate between
/// events, so this covers every t.
pub fn check_samplepath_dominance(p: &SimTrace, pi: &SimTrace) -> Result<DominanceReport> {
    require_same_coupling(p, pi, Some(CouplingMode::SharedEpochs))?;
    let mut times: Vec<Time> = p.event_times.iter().chain(&pi.event_times).copied().collect();
    times.push(0.0);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let desc = |mut v: Vec<f64>| {
        v.sort_by(|a, b| b.total_cmp(a));
        v
    };
    let mut violations = Vec::new();
    let mut count = 0;
    for &t in &times {
        let (a, b) = (desc(p.ages_at(t)), desc(pi.ages_at(t)));
        for (rank, (x, y)) in a.iter().zip(&b).enumerate() {
            if x > y {
                count += 1;
                if violations.len() < MAX_LISTED {
                    violations.push(DominanceViolation {
                        time: t,
                        rank: rank + 1,
                        p_value: *x,
                        pi_value: *y,
                    });
                }
            }
        }
    }
    Ok(DominanceReport {
        policy_p: p.policy.clone(),
        policy_pi: pi.policy.clone(),
        checkpoints: times.len(),
        violation_count: count,
        violations,
        ok: count == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkEfficiencyCounterexample {
    pub flow: usize,
    pub seq: u64,
    pub tau: Time,
    pub nu: Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkEfficiencyReport {
    pub policy_p: String,
    pub policy_pi: String,
    /// Services of π over which P's queue stayed non-empty.
    pub constrained_services: usize,
    pub counterexample_count: usize,
    pub counterexamples: Vec<WorkEfficiencyCounterexample>,
    pub ok: bool,
}

fn parse_policy(trace: &SimTrace) -> Result<PolicySpec> {
    trace
        .policy
        .parse()
        .map_err(|_| Error::Incomparable(format!("unrecognized policy {}", trace.policy)))
}

/// For every service interval [τ, ν] of `pi` during which `p`'s queue is
/// non-empty throughout, checks that `p` starts some packet within [τ, ν].
pub fn check_weak_work_efficiency(p: &SimTrace, pi: &SimTrace) -> Result<WorkEfficiencyReport> {
    if p.schedule_fingerprint != pi.schedule_fingerprint {
        return Err(Error::Incomparable("arrival schedules differ".into()));
    }
    for tr in [p, pi] {
        if parse_policy(tr)?.is_preemptive() {
            return Err(Error::Incomparable(format!("{} is preemptive", tr.policy)));
        }
    }
    let starts = p.service_starts();
    let mut constrained = 0;
    let mut count = 0;
    let mut listed = Vec::new();
    for pkt in &pi.packets {
        let (Some(tau), Some(nu)) = (pkt.service_start, pkt.delivery_time) else {
            continue;
        };
        let busy_at_start = p.queue_len_at(tau) > 0;
        let lo = p.queue_log.partition_point(|&(t, _)| t <= tau);
        let hi = p.queue_log.partition_point(|&(t, _)| t < nu);
        let stays_busy = busy_at_start && p.queue_log[lo..hi].iter().all(|&(_, q)| q > 0);
        if !stays_busy {
            continue;
        }
        constrained += 1;
        let i = starts.partition_point(|&s| s < tau);
        if starts.get(i).is_none_or(|&s| s > nu) {
            count += 1;
            if listed.len() < MAX_LISTED {
                listed.push(WorkEfficiencyCounterexample {
                    flow: pkt.flow,
                    seq: pkt.seq,
                    tau,
                    nu,
                });
            }
        }
    }
    listed.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    Ok(WorkEfficiencyReport {
        policy_p: p.policy.clone(),
        policy_pi: pi.policy.clone(),
        constrained_services: constrained,
        counterexample_count: count,
        counterexamples: listed,
        ok: count == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiBoundReport {
    pub policy_pi: String,
    pub penalty: String,
    pub seeds: usize,
    /// Mean over seeds of the time-average p∘Ξ under np-MASIF-LGFS.
    pub mean_xi_masif: f64,
    /// Mean over seeds of the time-average p∘Δ under π.
    pub mean_delta_pi: f64,
    pub st_order: StOrderReport,
    pub ok: bool,
}

/// Compares per-seed time averages of p∘Ξ under np-MASIF-LGFS (`masif[k]`)
/// with p∘Δ under π (`pi[k]`), paired by seed, over `[t0, t1]`.
pub fn check_xi_lower_bound(
    masif: &[SimTrace],
    pi: &[SimTrace],
    penalty: &PenaltyFunction,
    t0: Time,
    t1: Time,
) -> Result<XiBoundReport> {
    if masif.len() != pi.len() {
        return Err(Error::LengthMismatch(masif.len(), pi.len()));
    }
    if masif.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut xs = Vec::with_capacity(masif.len());
    let mut ys = Vec::with_capacity(pi.len());
    for (m, c) in masif.iter().zip(pi) {
        let mp = parse_policy(m)?;
        if mp.flow_rule != FlowRule::Masif || mp.packet_rule != PacketRule::Lgfs || mp.is_preemptive() {
            return Err(Error::Incomparable(format!("{} is not np-MASIF-LGFS", m.policy)));
        }
        if parse_policy(c)?.is_preemptive() {
            return Err(Error::Incomparable(format!(
                "comparator {} is preemptive, outside the non-preemptive class",
                c.policy
            )));
        }
        if m.schedule_fingerprint != c.schedule_fingerprint {
            return Err(Error::Incomparable("paired traces use different schedules".into()));
        }
        xs.push(time_average_of(&m.xi, penalty, t0, t1)?);
        ys.push(time_average_of(&c.delta, penalty, t0, t1)?);
    }
    xi_bound_from_samples(&pi[0].policy, penalty, &xs, &ys)
}

/// The Ξ lower-bound comparison on precomputed per-seed time averages.
pub fn xi_bound_from_samples(
    policy_pi: &str,
    penalty: &PenaltyFunction,
    xi_masif: &[f64],
    delta_pi: &[f64],
) -> Result<XiBoundReport> {
    let st = empirical_st_order(xi_masif, delta_pi, None)?;
    Ok(XiBoundReport {
        policy_pi: policy_pi.to_string(),
        penalty: penalty.label(),
        seeds: xi_masif.len(),
        mean_xi_masif: mean(xi_masif),
        mean_delta_pi: mean(delta_pi),
        ok: st.ok,
        st_order: st,
    })
}

/// A freshness-stamp change that did not reach the newest arrived generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetViolation {
    pub flow: usize,
    pub time: Time,
    pub stamp: Time,
    pub newest: Time,
}

/// Which stamp a reset check inspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetTarget {
    /// Deliveries (Δ), for preemptive MAF-LGFS on one server.
    Delivered,
    /// Service starts (Ξ), for non-preemptive MASIF-LGFS.
    Served,
}

/// Checks that every stamp change lands on W(t), the newest generation
/// arrived by t, so the reset flow's value drops to t − W(t), the smallest
/// possible. Assumes synchronized arrivals.
pub fn check_reset_property(trace: &SimTrace, target: ResetTarget) -> Vec<ResetViolation> {
    let mut arrivals: Vec<(Time, Time)> = trace
        .packets
        .iter()
        .filter(|p| p.flow == 0)
        .map(|p| (p.arrival_time, p.gen_time))
        .collect();
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut newest = Vec::with_capacity(arrivals.len());
    let mut m = f64::NEG_INFINITY;
    for &(a, s) in &arrivals {
        m = m.max(s);
        newest.push((a, m));
    }
    let w_at = |t: Time| {
        let i = newest.partition_point(|&(a, _)| a <= t);
        if i == 0 {
            f64::NEG_INFINITY
        } else {
            newest[i - 1].1
        }
    };
    let hist = match target {
        ResetTarget::Delivered => &trace.delivered_stamps,
        ResetTarget::Served => &trace.served_stamps,
    };
    let mut out = Vec::new();
    for (flow, h) in hist.iter().enumerate() {
        for &(t, stamp) in h.changes().iter().skip(1) {
            let w = w_at(t);
            if stamp != w {
                out.push(ResetViolation {
                    flow,
                    time: t,
                    stamp,
                    newest: w,
                });
            }
        }
    }
    out
}

/// The preemptive MAF-LGFS jump: the largest coordinate drops to `floor`.
pub fn maf_lgfs_jump(ages: &[f64], floor: f64) -> Vec<f64> {
    let mut out = ages.to_vec();
    if let Some(i) = (0..ages.len()).max_by(|&a, &b| ages[a].total_cmp(&ages[b])) {
        out[i] = floor;
    }
    out
}

/// A comparator jump: coordinate `k` drops to `value` (floor <= value <= current).
pub fn comparator_jump(ages: &[f64], k: usize, value: f64) -> Vec<f64> {
    let mut out = ages.to_vec();
    debug_assert!(value <= ages[k]);
    out[k] = value;
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpOracleReport {
    pub num_flows: usize,
    pub cases: usize,
    pub jump_checks: usize,
    pub failures: usize,
    pub negative_cases: usize,
    pub negative_failures: usize,
    /// All positive checks hold and the negative control fails somewhere.
    pub ok: bool,
}

/// Randomized check of the per-delivery comparison step.
///
/// Each case draws a comparator vector π and a vector P whose sorted form is
/// dominated by π's, all at or above the floor t − W(t) = 0. Every comparator
/// jump (each coordinate, to the floor, to its current value and to a random
/// value between) is paired with the MAF-LGFS jump and sorted dominance is
/// re-checked. The negative control draws P violating the hypothesis.
pub fn jump_oracle(num_flows: usize, cases: usize, seed: u64) -> Result<JumpOracleReport> {
    if num_flows == 0 {
        return config_err("num_flows must be >= 1");
    }
    let mut rng = stream(seed, Stream::TieBreak);
    let floor = 0.0;
    let draw = |rng: &mut crate::rng::SimRng| -> Vec<f64> {
        (0..num_flows)
            .map(|_| if rng.random_bool(0.1) { floor } else { rng.random_range(0.0..10.0) })
            .collect()
    };
    let check = |rng: &mut crate::rng::SimRng, p: &[f64], pi: &[f64]| -> Result<(usize, usize)> {
        let p_post = maf_lgfs_jump(p, floor);
        let (mut checks, mut fails) = (0, 0);
        for k in 0..num_flows {
            for v in [floor, pi[k], rng.random_range(floor..=pi[k])] {
                checks += 1;
                if !sorted_dominates(&p_post, &comparator_jump(pi, k, v))? {
                    fails += 1;
                }
            }
        }
        Ok((checks, fails))
    };

    let (mut jump_checks, mut failures) = (0, 0);
    for _ in 0..cases {
        let pi = draw(&mut rng);
        let mut desc = pi.clone();
        desc.sort_by(|a, b| b.total_cmp(a));
        let mut p: Vec<f64> = desc
            .iter()
            .map(|&y| match rng.random_range(0..10) {
                0 => y,
                1 => floor,
                _ => floor + rng.random::<f64>() * (y - floor),
            })
            .collect();
        p.shuffle(&mut rng);
        debug_assert!(sorted_dominates(&p, &pi)?);
        let (c, f) = check(&mut rng, &p, &pi)?;
        jump_checks += c;
        failures += f;
    }

    let (mut negative_cases, mut negative_failures) = (0, 0);
    while negative_cases < cases {
        let (p, pi) = (draw(&mut rng), draw(&mut rng));
        if sorted_dominates(&p, &pi)? {
            continue;
        }
        negative_cases += 1;
        negative_failures += check(&mut rng, &p, &pi)?.1;
    }
    Ok(JumpOracleReport {
        num_flows,
        cases,
        jump_checks,
        failures,
        negative_cases,
        negative_failures,
        ok: failures == 0 && negative_failures > 0,
    })
}

/// Setting for comparing a policy's law under shared epochs and independent draws.
#[derive(Debug, Clone)]
pub struct MarginalCheck {
    pub num_flows: usize,
    pub rate: f64,
    pub delay_model: DelayModel,
    pub service: ServiceDistribution,
    pub policy: PolicySpec,
    pub horizon: Time,
    pub seeds: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalReport {
    pub shared_mean: f64,
    pub independent_mean: f64,
    pub age_ks_statistic: f64,
    pub age_ks_p_value: f64,
    pub deliveries_ks_statistic: f64,
    pub deliveries_ks_p_value: f64,
    pub xi_above_delta_runs: usize,
}

impl MarginalReport {
    pub fn passes(&self, alpha: f64) -> bool {
        self.age_ks_p_value > alpha && self.deliveries_ks_p_value > alpha
    }
}

/// Time-average average age and delivery counts under both completion
/// modes, on disjoint seed sets, compared by two-sample KS tests.
pub fn marginal_check(m: &MarginalCheck) -> Result<MarginalReport> {
    use rayon::prelude::*;
    let system = SystemConfig::new(m.num_flows, 1)?;
    let one = |mode: CouplingMode, k: usize| -> Result<(f64, f64, bool)> {
        let seed = derive_seed(m.base_seed, &[mode as u64, k as u64]);
        let schedule = generate_poisson_schedule(&TrafficConfig {
            rate: m.rate,
            delay_model: m.delay_model.clone(),
            horizon: m.horizon,
            seed,
        })?;
        let c = CoupledRunConfig {
            system,
            schedule,
            service: m.service,
            policies: vec![m.policy],
            mode,
            horizon: m.horizon,
            seed,
            allow_unchecked: false,
        };
        let tr = run_coupled(&c)?.remove(0);
        let avg = time_average_of(&tr.delta, &PenaltyFunction::avg(), 0.0, m.horizon)?;
        Ok((avg, tr.delivered_count() as f64, tr.check_xi_below_delta().is_err()))
    };
    let collect = |mode: CouplingMode| -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let runs: Vec<(f64, f64, bool)> = (0..m.seeds)
            .into_par_iter()
            .map(|k| one(mode, k))
            .collect::<Result<_>>()?;
        let bad = runs.iter().filter(|r| r.2).count();
        let (a, d) = runs.into_iter().map(|r| (r.0, r.1)).unzip();
        Ok((a, d, bad))
    };
    let (sa, sd, sbad) = collect(CouplingMode::SharedEpochs)?;
    let (ia, id, ibad) = collect(CouplingMode::IndependentDraws)?;
    let ka: KsResult = ks_two_sample(&sa, &ia);
    let kd = ks_two_sample(&sd, &id);
    Ok(MarginalReport {
        shared_mean: mean(&sa),
        independent_mean: mean(&ia),
        age_ks_statistic: ka.statistic,
        age_ks_p_value: ka.p_value,
        deliveries_ks_statistic: kd.statistic,
        deliveries_ks_p_value: kd.p_value,
        xi_above_delta_runs: sbad + ibad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule(rate: f64, horizon: f64, seed: u64, delay: DelayModel) -> ArrivalSchedule {
        generate_poisson_schedule(&TrafficConfig {
            rate,
            delay_model: delay,
            horizon,
            seed,
        })
        .unwrap()
    }

    fn shared(policies: &[&str], seed: u64) -> Vec<SimTrace> {
        let c = CoupledRunConfig {
            system: SystemConfig::new(3, 1).unwrap(),
            schedule: schedule(1.0 / 3.0, 500.0, seed, DelayModel::BernoulliHalf),
            service: ServiceDistribution::exponential(1.0).unwrap(),
            policies: policies.iter().map(|p| p.parse().unwrap()).collect(),
            mode: CouplingMode::SharedEpochs,
            horizon: 500.0,
            seed,
            allow_unchecked: false,
        };
        run_coupled(&c).unwrap()
    }

    #[test]
    fn shared_epochs_synchronize_busy_deliveries() {
        // Two work-conserving policies with equal arrivals have equal
        // packets-in-system, hence identical delivery instants.
        let tr = shared(&["prmp-MAF-LGFS", "np-RAND-FCFS"], 3);
        assert_eq!(tr[0].delivery_times(), tr[1].delivery_times());
    }

    #[test]
    fn idle_policy_skips_epochs() {
        let tr = shared(&["prmp-MAF-LGFS", "np-MAF-LGFS+idle=0.5"], 4);
        let a = tr[0].delivery_times();
        let b = tr[1].delivery_times();
        // Every delivery of either policy sits on a shared epoch; the idling
        // one misses some that the other uses.
        assert_ne!(a, b);
        let epochs: std::collections::BTreeSet<u64> =
            a.iter().chain(&b).map(|t| t.to_bits()).collect();
        assert!(epochs.len() >= a.len().max(b.len()));
    }

    #[test]
    fn shared_epochs_preconditions() {
        let mut c = CoupledRunConfig {
            system: SystemConfig::new(3, 2).unwrap(),
            schedule: schedule(0.5, 50.0, 1, DelayModel::Zero),
            service: ServiceDistribution::exponential(1.0).unwrap(),
            policies: vec![PolicySpec::prmp_maf_lgfs()],
            mode: CouplingMode::SharedEpochs,
            horizon: 50.0,
            seed: 1,
            allow_unchecked: false,
        };
        assert!(run_coupled(&c).is_err());
        c.system = SystemConfig::new(3, 1).unwrap();
        c.service = ServiceDistribution::constant(1.0).unwrap();
        c.allow_unchecked = true;
        assert!(run_coupled(&c).is_err());
    }

    #[test]
    fn dominance_holds_against_comparators() {
        for seed in 0..5 {
            let tr = shared(&["prmp-MAF-LGFS", "np-MAF-FCFS", "prmp-RAND-LGFS", "np-RAND-FCFS", "np-MAF-LGFS"], seed);
            for other in &tr[1..] {
                let r = check_samplepath_dominance(&tr[0], other).unwrap();
                assert!(r.ok, "{r:?}");
            }
            let same = check_samplepath_dominance(&tr[0], &tr[0]).unwrap();
            assert!(same.ok);
        }
    }

    #[test]
    fn dominance_checker_finds_swapped_roles() {
        let found: usize = (0..5)
            .map(|seed| {
                let tr = shared(&["prmp-RAND-LGFS", "prmp-MAF-LGFS"], seed);
                check_samplepath_dominance(&tr[0], &tr[1]).unwrap().violation_count
            })
            .sum();
        assert!(found > 0);
    }

    #[test]
    fn dominance_requires_coupled_traces() {
        let cfg = SystemConfig::new(2, 1).unwrap();
        let s = schedule(0.5, 50.0, 1, DelayModel::Zero);
        let d = ServiceDistribution::exponential(1.0).unwrap();
        let a = crate::engine::run(&cfg, &s, &d, &PolicySpec::prmp_maf_lgfs(), 50.0, 1).unwrap();
        assert!(matches!(check_samplepath_dominance(&a, &a), Err(Error::Incomparable(_))));
        let c = CoupledRunConfig {
            system: cfg,
            schedule: s,
            service: d,
            policies: vec![PolicySpec::prmp_maf_lgfs(), "np-RAND-FCFS".parse().unwrap()],
            mode: CouplingMode::IndependentDraws,
            horizon: 50.0,
            seed: 2,
            allow_unchecked: false,
        };
        let tr = run_coupled(&c).unwrap();
        assert!(check_samplepath_dominance(&tr[0], &tr[1]).is_err());
    }

    #[test]
    fn maf_lgfs_resets_to_newest_generation() {
        for seed in 0..5 {
            let tr = shared(&["prmp-MAF-LGFS"], seed);
            assert!(check_reset_property(&tr[0], ResetTarget::Delivered).is_empty());
        }
        // FCFS delivers stale packets, so it must show violations.
        let tr = shared(&["np-RAND-FCFS"], 0);
        assert!(!check_reset_property(&tr[0], ResetTarget::Delivered).is_empty());
    }

    #[test]
    fn masif_lgfs_resets_served_age() {
        let d = ServiceDistribution::shifted_exponential(1.0 / 3.0, 1.5).unwrap();
        let cfg = SystemConfig::new(6, 2).unwrap();
        for seed in 0..5 {
            let s = schedule(0.3, 300.0, seed, DelayModel::BernoulliHalf);
            let tr = crate::engine::run(&cfg, &s, &d, &PolicySpec::np_masif_lgfs(), 300.0, seed).unwrap();
            assert!(check_reset_property(&tr, ResetTarget::Served).is_empty());
        }
    }

    fn work_eff(p: &str, pi: &str, seed: u64) -> Vec<SimTrace> {
        let c = CoupledRunConfig {
            system: SystemConfig::new(5, 3).unwrap(),
            schedule: schedule(0.6, 400.0, seed, DelayModel::BernoulliHalf),
            service: ServiceDistribution::shifted_exponential(1.0 / 3.0, 1.5).unwrap(),
            policies: vec![p.parse().unwrap(), pi.parse().unwrap()],
            mode: CouplingMode::WorkEfficiency,
            horizon: 400.0,
            seed,
            allow_unchecked: false,
        };
        run_coupled(&c).unwrap()
    }

    #[test]
    fn work_efficiency_under_residual_coupling() {
        for seed in 0..5 {
            let tr = work_eff("np-MASIF-LGFS", "np-RAND-FCFS", seed);
            let r = check_weak_work_efficiency(&tr[0], &tr[1]).unwrap();
            assert!(r.ok, "{r:?}");
            assert!(r.constrained_services > 0);
        }
    }

    #[test]
    fn work_efficiency_trivial_cases() {
        let tr = work_eff("np-MASIF-LGFS", "np-MAF-LGFS", 1);
        assert!(check_weak_work_efficiency(&tr[1], &tr[1]).unwrap().ok);
        // With a lightly loaded P the queue is mostly empty: vacuous.
        let cfg = SystemConfig::new(1, 1).unwrap();
        let s = ArrivalSchedule::from_pairs(&[(0.0, 0.0)]).unwrap();
        let d = ServiceDistribution::constant(1.0).unwrap();
        let a = crate::engine::run(&cfg, &s, &d, &PolicySpec::np_masif_lgfs(), 5.0, 0).unwrap();
        let r = check_weak_work_efficiency(&a, &a).unwrap();
        assert!(r.ok && r.constrained_services == 0);
    }

    #[test]
    fn work_efficiency_rejects_mismatched_inputs() {
        let tr = work_eff("np-MASIF-LGFS", "np-RAND-FCFS", 1);
        let other = work_eff("np-MASIF-LGFS", "np-RAND-FCFS", 2);
        assert!(check_weak_work_efficiency(&tr[0], &other[1]).is_err());
        let prmp = shared(&["prmp-MAF-LGFS"], 1);
        assert!(check_weak_work_efficiency(&prmp[0], &prmp[0]).is_err());
    }

    #[test]
    fn xi_bound_statistical_check() {
        let d = ServiceDistribution::shifted_exponential(1.0 / 3.0, 1.5).unwrap();
        let cfg = SystemConfig::new(6, 2).unwrap();
        let (mut m, mut r, mut own) = (Vec::new(), Vec::new(), Vec::new());
        for seed in 0..30 {
            let s = schedule(0.3, 300.0, seed, DelayModel::Zero);
            m.push(crate::engine::run(&cfg, &s, &d, &PolicySpec::np_masif_lgfs(), 300.0, seed).unwrap());
            own.push(m.last().unwrap().clone());
            r.push(crate::engine::run(&cfg, &s, &d, &"np-RAND-FCFS".parse().unwrap(), 300.0, seed).unwrap());
        }
        let p = PenaltyFunction::avg();
        let rep = check_xi_lower_bound(&m, &r, &p, 30.0, 300.0).unwrap();
        assert!(rep.ok && rep.mean_xi_masif < rep.mean_delta_pi, "{rep:?}");
        let rep = check_xi_lower_bound(&m, &own, &p, 30.0, 300.0).unwrap();
        assert!(rep.ok && rep.st_order.max_ccdf_violation == 0.0);
        let s = schedule(0.3, 300.0, 0, DelayModel::Zero);
        let prmp = crate::engine::run(&cfg, &s, &ServiceDistribution::exponential(1.0).unwrap(), &PolicySpec::prmp_maf_lgfs(), 300.0, 0).unwrap();
        assert!(check_xi_lower_bound(&m[..1], &[prmp], &p, 30.0, 300.0).is_err());
    }

    #[test]
    fn jump_step_examples() {
        assert_eq!(maf_lgfs_jump(&[3.0, 7.0, 5.0], 1.0), vec![3.0, 1.0, 5.0]);
        assert_eq!(comparator_jump(&[3.0, 7.0, 5.0], 2, 2.0), vec![3.0, 7.0, 2.0]);
    }

    #[test]
    fn jump_oracle_small() {
        for n in 2..=4 {
            let r = jump_oracle(n, 2000, n as u64).unwrap();
            assert!(r.ok, "{r:?}");
            assert_eq!(r.jump_checks, 2000 * n * 3);
        }
    }
}
