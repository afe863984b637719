//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use aoisim::coupling::{jump_oracle, marginal_check, run_coupled, xi_bound_from_samples, CoupledRunConfig, MarginalCheck};
use aoisim::distributions::{shipped_distributions, verify_nbu, ServiceDistribution};
use aoisim::engine::CouplingMode;
use aoisim::experiment::{run_experiment, verify, ExperimentConfig, ExperimentResults, VerifyKind};
use aoisim::metrics::{check_psym, shipped_penalties, PenaltyFunction};
use aoisim::stats::summarize;
use aoisim::traffic::{generate_poisson_schedule, rate_for_intensity, DelayModel, TrafficConfig};
use aoisim::types::SystemConfig;

struct Outcome {
    id: usize,
    name: &'static str,
    ok: bool,
    detail: String,
}

/// Traces checked for Ξ ≤ Δ across all criteria, and how many failed.
#[derive(Default)]
struct XiTally {
    traces: usize,
    failures: usize,
}

impl XiTally {
    fn add(&mut self, traces: usize, failures: usize) {
        self.traces += traces;
        self.failures += failures;
    }
}

fn config(json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json_str(json).expect("acceptance config parses")
}

fn maf_lgfs_dominance(xi: &mut XiTally) -> Outcome {
    let cfg = config(
        r#"{
            "system": {"num_flows": 3, "num_servers": 1},
            "traffic": {"rho": [0.5, 1.0, 1.5], "delay_model": {"kind": "bernoulli_half"}, "horizon": 10000},
            "service": {"kind": "exponential", "rate": 1},
            "policies": ["prmp-MAF-LGFS", "np-MAF-FCFS", "prmp-RAND-LGFS", "np-RAND-FCFS", "np-MAF-LGFS"],
            "replications": 100,
            "base_seed": 1001,
            "verify": {"jump_cases": 1000}
        }"#,
    );
    let r = verify(VerifyKind::Dominance, &cfg).expect("dominance run");
    let comps = r.details["comparators"].as_array().expect("comparators");
    let mut violations = 0;
    let mut checkpoints = 0;
    let mut pairs = 0;
    for c in comps {
        violations += c["violation_count"].as_u64().unwrap_or(u64::MAX);
        checkpoints += c["checkpoints"].as_u64().unwrap_or(0);
        pairs += c["pairs"].as_u64().unwrap_or(0);
    }
    let runs = 3 * 100 * cfg.policies.len();
    xi.add(runs, if r.details["xi_below_delta"] == true { 0 } else { 1 });
    Outcome {
        id: 1,
        name: "sample-path dominance of prmp-MAF-LGFS",
        ok: r.ok && violations == 0 && pairs == 4 * 300,
        detail: format!("{pairs} coupled pairs, {checkpoints} checkpoints, {violations} violations"),
    }
}

fn jump_step_oracle() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in 2..=4 {
        let r = jump_oracle(n, 100_000, 20 + n as u64).expect("jump oracle");
        ok &= r.ok && r.failures == 0 && r.negative_failures > 0;
        parts.push(format!(
            "N={n}: {} checks, {} failures, negative control {} failures over {} cases",
            r.jump_checks, r.failures, r.negative_failures, r.negative_cases
        ));
    }
    Outcome {
        id: 2,
        name: "per-jump dominance oracle",
        ok,
        detail: parts.join("; "),
    }
}

fn multi_server_results() -> ExperimentResults {
    run_experiment(&config(
        r#"{
            "system": {"num_flows": 50, "num_servers": 3},
            "traffic": {"rho": [0.3, 0.6, 0.9, 1.2], "delay_model": {"kind": "bernoulli_half"}, "horizon": 10000},
            "service": {"kind": "shifted_exponential", "shift": 0.3333333333333333, "rate": 1.5},
            "policies": ["np-MASIF-LGFS", "np-MAF-LGFS", "np-RAND-LGFS", "np-RAND-FCFS"],
            "penalty": {"kind": "avg"},
            "replications": 200,
            "base_seed": 4004
        }"#,
    ))
    .expect("multi-server sweep")
}

fn single_server_results() -> ExperimentResults {
    run_experiment(&config(
        r#"{
            "system": {"num_flows": 3, "num_servers": 1},
            "traffic": {"rho": [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4], "delay_model": {"kind": "bernoulli_half"}, "horizon": 10000},
            "service": {"kind": "exponential", "rate": 1},
            "policies": ["prmp-MAF-LGFS", "np-MAF-FCFS", "prmp-RAND-LGFS", "np-RAND-FCFS"],
            "penalty": {"kind": "max"},
            "replications": 200,
            "base_seed": 3003
        }"#,
    ))
    .expect("single-server sweep")
}

fn tally_xi(results: &ExperimentResults, xi: &mut XiTally) {
    for c in &results.cells {
        xi.add(c.runs.len(), c.xi_violations());
    }
}

fn gap_bound(multi: &ExperimentResults) -> Outcome {
    let masif = "np-MASIF-LGFS";
    let mut ok = true;
    let mut parts = Vec::new();
    for rho in multi.grid() {
        let cell = multi.cell(masif, rho).expect("MASIF cell");
        let lbs = cell.lower_bound_values().expect("lower bounds");
        let gaps: Vec<f64> = cell.values().iter().zip(&lbs).map(|(d, x)| d - x).collect();
        let s = summarize(&gaps);
        let pass = s.mean <= 1.0 + s.ci_half;
        ok &= pass;
        parts.push(format!("rho={rho}: gap {:.4} +/- {:.4}", s.mean, s.ci_half));
    }
    Outcome {
        id: 4,
        name: "gap between age and its served-information bound at most E[X]",
        ok,
        detail: parts.join("; "),
    }
}

fn lower_bound_ordering(multi: &ExperimentResults) -> Outcome {
    let masif = "np-MASIF-LGFS";
    let mut ok = true;
    let mut parts = Vec::new();
    for rho in multi.grid() {
        let xs = multi.cell(masif, rho).and_then(|c| c.lower_bound_values()).expect("lower bounds");
        for pi in ["np-MAF-LGFS", "np-RAND-LGFS", "np-RAND-FCFS"] {
            let cell = multi.cell(pi, rho).expect("comparator cell");
            let r = xi_bound_from_samples(pi, &PenaltyFunction::avg(), &xs, &cell.values()).expect("st order");
            ok &= r.ok;
            if !r.ok || pi == "np-MAF-LGFS" {
                parts.push(format!(
                    "rho={rho} vs {pi}: max ccdf excess {:.4} (eps {:.4})",
                    r.st_order.max_ccdf_violation, r.st_order.epsilon
                ));
            }
        }
    }
    Outcome {
        id: 5,
        name: "served-information bound stochastically below non-preemptive comparators",
        ok,
        detail: parts.join("; "),
    }
}

fn curve_orderings(single: &ExperimentResults, multi: &ExperimentResults) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let best = "prmp-MAF-LGFS";
    for rho in single.grid() {
        let b = single.cell(best, rho).expect("cell").summary;
        let others: Vec<_> = single.cells.iter().filter(|c| c.rho == rho && c.policy != best).collect();
        let lowest = others.iter().all(|c| b.mean < c.summary.mean);
        let worst = others
            .iter()
            .max_by(|a, c| a.summary.mean.total_cmp(&c.summary.mean))
            .expect("comparators");
        let separated = rho < 1.0 || b.disjoint_from(&worst.summary);
        ok &= lowest && separated;
        if !(lowest && separated) || rho >= 1.0 {
            parts.push(format!(
                "N=3 rho={rho}: {:.3}+/-{:.3} vs worst {} {:.3}+/-{:.3}",
                b.mean, b.ci_half, worst.policy, worst.summary.mean, worst.summary.ci_half
            ));
        }
    }
    for rho in multi.grid() {
        let m = multi.cell("np-MASIF-LGFS", rho).expect("cell").summary;
        let f = multi.cell("np-MAF-LGFS", rho).expect("cell").summary;
        let pass = m.mean <= f.mean && (rho < 0.9 || (m.disjoint_from(&f) && m.upper() < f.lower()));
        ok &= pass;
        parts.push(format!(
            "N=50 rho={rho}: MASIF {:.3}+/-{:.3} vs MAF {:.3}+/-{:.3}",
            m.mean, m.ci_half, f.mean, f.ci_half
        ));
    }
    Outcome {
        id: 6,
        name: "policy curve orderings",
        ok,
        detail: parts.join("; "),
    }
}

fn nbu() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for d in shipped_distributions() {
        let r = verify_nbu(&d, 0.01, 10.0 * d.mean()).expect("nbu grid");
        let mut pass = r.ok && r.max_violation <= 1e-12;
        if d.is_exponential() {
            pass &= r.max_abs_gap <= 1e-15;
        }
        ok &= pass;
        parts.push(format!(
            "{:?}: max violation {:.2e}, max |gap| {:.2e}",
            d.kind(),
            r.max_violation,
            r.max_abs_gap
        ));
    }
    Outcome {
        id: 7,
        name: "NBU property of shipped service distributions",
        ok,
        detail: parts.join("; "),
    }
}

fn penalty_class() -> Outcome {
    let mut ok = true;
    let mut failures = 0;
    let kinds = shipped_penalties();
    for (i, k) in kinds.iter().enumerate() {
        let r = check_psym(k, 6, 10_000, 800 + i as u64).expect("psym");
        ok &= r.ok;
        failures += r.symmetry_failures + r.monotonicity_failures + r.dominance_failures;
    }
    Outcome {
        id: 8,
        name: "symmetric non-decreasing penalty class",
        ok,
        detail: format!("{} kinds x 10000 trials, {failures} failures", kinds.len()),
    }
}

fn determinism_and_marginals(xi: &mut XiTally) -> Outcome {
    let small = config(
        r#"{
            "system": {"num_flows": 4, "num_servers": 2},
            "traffic": {"rho": [0.7, 1.1], "delay_model": {"kind": "bernoulli_half"}, "horizon": 2000},
            "service": {"kind": "erlang", "shape": 2, "rate": 2},
            "policies": ["np-MASIF-LGFS", "np-MAF-LGFS", "np-RAND-FCFS+rtb"],
            "penalty": {"kind": "mean_square"},
            "replications": 20,
            "base_seed": 9
        }"#,
    );
    let csv = |r: &ExperimentResults| {
        let mut buf = Vec::new();
        r.write_csv(&mut buf).expect("csv");
        buf
    };
    let (a, b) = (run_experiment(&small).expect("run"), run_experiment(&small).expect("rerun"));
    tally_xi(&a, xi);
    tally_xi(&b, xi);
    let csv_same = csv(&a) == csv(&b);

    let coupled = CoupledRunConfig {
        system: SystemConfig::new(3, 1).expect("system"),
        schedule: generate_poisson_schedule(&TrafficConfig {
            rate: 0.3,
            delay_model: DelayModel::BernoulliHalf,
            horizon: 2000.0,
            seed: 5,
        })
        .expect("schedule"),
        service: ServiceDistribution::exponential(1.0).expect("service"),
        policies: vec!["prmp-MAF-LGFS".parse().expect("policy"), "np-RAND-FCFS".parse().expect("policy")],
        mode: CouplingMode::SharedEpochs,
        horizon: 2000.0,
        seed: 5,
        allow_unchecked: false,
    };
    let json = |c: &CoupledRunConfig| {
        let traces = run_coupled(c).expect("coupled run");
        let bad = traces.iter().filter(|t| t.check_xi_below_delta().is_err()).count();
        let bytes: Vec<Vec<u8>> = traces
            .iter()
            .map(|t| {
                let mut buf = Vec::new();
                t.write_json(&mut buf).expect("json");
                buf
            })
            .collect();
        (bytes, bad)
    };
    let ((ta, bad_a), (tb, bad_b)) = (json(&coupled), json(&coupled));
    xi.add(4, bad_a + bad_b);
    let traces_same = ta == tb;

    let m = marginal_check(&MarginalCheck {
        num_flows: 3,
        rate: rate_for_intensity(1.0, 3, 1, 1.0).expect("rate"),
        delay_model: DelayModel::BernoulliHalf,
        service: ServiceDistribution::exponential(1.0).expect("service"),
        policy: "prmp-MAF-LGFS".parse().expect("policy"),
        horizon: 1000.0,
        seeds: 10_000,
        base_seed: 99,
    })
    .expect("marginal check");
    xi.add(20_000, m.xi_above_delta_runs);
    Outcome {
        id: 9,
        name: "determinism and shared-epoch marginal equivalence",
        ok: csv_same && traces_same && m.passes(0.01),
        detail: format!(
            "csv identical {csv_same}, traces identical {traces_same}; age KS D={:.4} p={:.3}, deliveries KS D={:.4} p={:.3}",
            m.age_ks_statistic, m.age_ks_p_value, m.deliveries_ks_statistic, m.deliveries_ks_p_value
        ),
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut xi = XiTally::default();
    let mut outcomes = Vec::new();
    let step = |o: Outcome, outcomes: &mut Vec<Outcome>| {
        eprintln!("[{:>6.1}s] criterion {} finished", start.elapsed().as_secs_f64(), o.id);
        outcomes.push(o);
    };

    step(maf_lgfs_dominance(&mut xi), &mut outcomes);
    step(jump_step_oracle(), &mut outcomes);
    let multi = multi_server_results();
    tally_xi(&multi, &mut xi);
    step(gap_bound(&multi), &mut outcomes);
    step(lower_bound_ordering(&multi), &mut outcomes);
    let single = single_server_results();
    tally_xi(&single, &mut xi);
    step(curve_orderings(&single, &multi), &mut outcomes);
    step(nbu(), &mut outcomes);
    step(penalty_class(), &mut outcomes);
    step(determinism_and_marginals(&mut xi), &mut outcomes);
    step(
        Outcome {
            id: 3,
            name: "served-information age never exceeds age",
            ok: xi.failures == 0 && xi.traces > 0,
            detail: format!("{} traces checked, {} with a violation", xi.traces, xi.failures),
        },
        &mut outcomes,
    );

    outcomes.sort_by_key(|o| o.id);
    let mut all = true;
    println!();
    for o in &outcomes {
        all &= o.ok;
        println!("criterion {}: {} {} ({})", o.id, if o.ok { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s",
        outcomes.iter().filter(|o| o.ok).count(),
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
