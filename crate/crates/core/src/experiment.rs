//! Parameter sweeps, replication summaries and the verification checks.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::coupling::{
    check_samplepath_dominance, check_weak_work_efficiency, jump_oracle, run_coupled, xi_bound_from_samples,
    CoupledRunConfig, DominanceViolation, WorkEfficiencyCounterexample,
};
use crate::distributions::{shipped_distributions, verify_nbu, ServiceDistribution, ServiceKind};
use crate::engine::{run_with, CouplingMode, RunOptions};
use crate::error::{Error, Result};
use crate::metrics::{check_psym, shipped_penalties, time_average_of, PenaltyFunction};
use crate::policies::{FlowRule, PolicySpec};
use crate::rng::{derive_seed, name_hash};
use crate::stats::{summarize, Summary};
use crate::traffic::{generate_poisson_schedule, rate_for_intensity, traffic_intensity, DelayModel, TrafficConfig};
use crate::types::{ArrivalSchedule, SystemConfig, Time};

/// Overrides `output.dir` when set.
pub const OUTPUT_DIR_ENV: &str = "AOISIM_OUTPUT_DIR";

const SCHEDULE_TAG: u64 = 1;
const RUN_TAG: u64 = 2;
const COUPLED_TAG: u64 = 3;

fn default_horizon() -> Time {
    1e5
}
fn default_replications() -> usize {
    200
}
fn default_warmup() -> f64 {
    0.1
}
fn default_dir() -> PathBuf {
    PathBuf::from("aoisim-out")
}
fn default_nbu_step() -> f64 {
    0.01
}
fn default_nbu_extent() -> f64 {
    10.0
}
fn default_psym_trials() -> usize {
    10_000
}
fn default_jump_cases() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    /// Traffic-intensity grid; converted to generation rates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    /// Generation-rate grid, as an alternative to `rho`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default = "zero_delay")]
    pub delay_model: DelayModel,
    #[serde(default = "default_horizon")]
    pub horizon: Time,
}

fn zero_delay() -> DelayModel {
    DelayModel::Zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub dump_traces: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            dump_traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_nbu_step")]
    pub nbu_grid_step: f64,
    /// NBU grid extent in multiples of the mean.
    #[serde(default = "default_nbu_extent")]
    pub nbu_extent_means: f64,
    #[serde(default = "default_psym_trials")]
    pub psym_trials: usize,
    #[serde(default = "default_jump_cases")]
    pub jump_cases: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            nbu_grid_step: default_nbu_step(),
            nbu_extent_means: default_nbu_extent(),
            psym_trials: default_psym_trials(),
            jump_cases: default_jump_cases(),
        }
    }
}

/// An experiment or verification config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic: Option<TrafficSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<ServiceKind>,
    #[serde(default)]
    pub policies: Vec<String>,
    #[serde(default = "PenaltyFunction::avg")]
    pub penalty: PenaltyFunction,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub allow_unchecked: bool,
    #[serde(default)]
    pub verify: VerifySection,
}

const TOP_KEYS: &[&str] = &[
    "system",
    "traffic",
    "service",
    "policies",
    "penalty",
    "replications",
    "base_seed",
    "warmup_fraction",
    "output",
    "allow_unchecked",
    "verify",
];
const SECTION_KEYS: &[(&str, &[&str])] = &[
    ("system", &["num_flows", "num_servers", "initial_age"]),
    ("traffic", &["rho", "lambda", "delay_model", "horizon"]),
    ("output", &["dir", "dump_traces"]),
    ("verify", &["nbu_grid_step", "nbu_extent_means", "psym_trials", "jump_cases"]),
];

fn extra_keys(orig: &Value, canonical: &Value, path: &str, out: &mut Vec<String>) {
    match (orig, canonical) {
        (Value::Object(o), Value::Object(c)) => {
            for (k, v) in o {
                let p = format!("{path}.{k}");
                match c.get(k) {
                    Some(cv) => extra_keys(v, cv, &p, out),
                    None => out.push(p),
                }
            }
        }
        (Value::Array(o), Value::Array(c)) => {
            for (i, (v, cv)) in o.iter().zip(c).enumerate() {
                extra_keys(v, cv, &format!("{path}[{i}]"), out);
            }
        }
        _ => {}
    }
}

/// A fully resolved sweep: validated system, service, grid and policies.
#[derive(Debug, Clone)]
pub struct Plan {
    pub system: SystemConfig,
    pub service: ServiceDistribution,
    /// `(rho, lambda)` per grid point.
    pub grid: Vec<(f64, f64)>,
    pub delay_model: DelayModel,
    pub horizon: Time,
    pub policies: Vec<PolicySpec>,
}

impl ExperimentConfig {
    /// Parses JSON, reporting every unknown key at once.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let Value::Object(map) = &value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let mut unknown = Vec::new();
        for (k, v) in map {
            if !TOP_KEYS.contains(&k.as_str()) {
                unknown.push(k.clone());
                continue;
            }
            if let (Some((_, keys)), Value::Object(inner)) = (SECTION_KEYS.iter().find(|(s, _)| s == k), v) {
                unknown.extend(inner.keys().filter(|ik| !keys.contains(&ik.as_str())).map(|ik| format!("{k}.{ik}")));
            }
        }
        if !unknown.is_empty() {
            return Err(Error::InvalidKeys(unknown.into_iter().map(|k| format!("{k} (unknown key)")).collect()));
        }
        let cfg: Self = serde_json::from_value(value.clone()).map_err(|e| Error::Config(e.to_string()))?;
        // Flattened penalty fields tolerate extras, so diff against a re-serialization.
        if let Some(orig) = map.get("penalty") {
            let canonical = serde_json::to_value(&cfg.penalty)?;
            extra_keys(orig, &canonical, "penalty", &mut unknown);
        }
        if !unknown.is_empty() {
            return Err(Error::InvalidKeys(unknown.into_iter().map(|k| format!("{k} (unknown key)")).collect()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    /// Output directory, honouring the environment override.
    pub fn output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV).map_or_else(|| self.output.dir.clone(), PathBuf::from)
    }

    fn service_distribution(&self, bad: &mut Vec<String>) -> Option<ServiceDistribution> {
        let Some(kind) = self.service else {
            bad.push("service (missing)".into());
            return None;
        };
        let built = if self.allow_unchecked {
            ServiceDistribution::new_unchecked(kind)
        } else {
            ServiceDistribution::new(kind)
        };
        match built {
            Ok(d) => Some(d),
            Err(e) => {
                bad.push(format!("service ({e})"));
                None
            }
        }
    }

    fn parsed_policies(&self, bad: &mut Vec<String>, required: bool) -> Vec<PolicySpec> {
        if required && self.policies.is_empty() {
            bad.push("policies (empty)".into());
        }
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, name) in self.policies.iter().enumerate() {
            match PolicySpec::from_str(name) {
                Ok(p) => {
                    if !seen.insert(p.to_string()) {
                        bad.push(format!("policies[{i}] (duplicate {name})"));
                    }
                    out.push(p);
                }
                Err(e) => bad.push(format!("policies[{i}] ({e})")),
            }
        }
        out
    }

    /// Validates everything a sweep needs.
    pub fn plan(&self) -> Result<Plan> {
        let mut bad = Vec::new();
        let system = match self.system {
            None => {
                bad.push("system (missing)".into());
                None
            }
            Some(s) => match s.validate() {
                Ok(()) => Some(s),
                Err(e) => {
                    bad.push(format!("system ({e})"));
                    None
                }
            },
        };
        let service = self.service_distribution(&mut bad);
        let policies = self.parsed_policies(&mut bad, true);
        if self.replications == 0 {
            bad.push("replications (must be >= 1)".into());
        }
        if !(0.0..0.5).contains(&self.warmup_fraction) {
            bad.push("warmup_fraction (must lie in [0, 0.5))".into());
        }
        if let Err(e) = self.penalty.validate() {
            bad.push(format!("penalty ({e})"));
        }
        let mut grid = Vec::new();
        let (mut delay_model, mut horizon) = (DelayModel::Zero, 0.0);
        match &self.traffic {
            None => bad.push("traffic (missing)".into()),
            Some(t) => {
                delay_model = t.delay_model.clone();
                horizon = t.horizon;
                if !(t.horizon > 0.0 && t.horizon.is_finite()) {
                    bad.push("traffic.horizon (must be positive)".into());
                }
                match (&t.rho, &t.lambda) {
                    (Some(_), Some(_)) => bad.push("traffic.rho/traffic.lambda (give exactly one)".into()),
                    (None, None) => bad.push("traffic.rho (missing; or give traffic.lambda)".into()),
                    (Some(v), None) | (None, Some(v)) => {
                        let key = if t.rho.is_some() { "traffic.rho" } else { "traffic.lambda" };
                        if v.is_empty() {
                            bad.push(format!("{key} (empty)"));
                        }
                        if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                            bad.push(format!("{key} (values must be positive)"));
                        }
                        if let (Some(sys), Some(svc), true) = (system, service, bad.is_empty()) {
                            for &x in v {
                                let pair = if t.rho.is_some() {
                                    rate_for_intensity(x, sys.num_flows, sys.num_servers, svc.rate()).map(|l| (x, l))
                                } else {
                                    traffic_intensity(x, sys.num_flows, sys.num_servers, svc.rate()).map(|r| (r, x))
                                };
                                match pair {
                                    Ok(p) => grid.push(p),
                                    Err(e) => bad.push(format!("{key} ({e})")),
                                }
                            }
                        }
                    }
                }
                if let Err(e) = (TrafficConfig {
                    rate: 1.0,
                    delay_model: t.delay_model.clone(),
                    horizon: 1.0,
                    seed: 0,
                })
                .validate()
                {
                    bad.push(format!("traffic.delay_model ({e})"));
                }
            }
        }
        if let (Some(svc), false) = (service, self.allow_unchecked) {
            for p in &policies {
                if p.is_preemptive() && !svc.is_exponential() {
                    bad.push(format!("policies ({p} needs exponential service or allow_unchecked)"));
                }
            }
        }
        if !bad.is_empty() {
            return Err(Error::InvalidKeys(bad));
        }
        Ok(Plan {
            system: system.expect("validated"),
            service: service.expect("validated"),
            grid,
            delay_model,
            horizon,
            policies,
        })
    }

    fn warmup_start(&self, horizon: Time) -> Time {
        self.warmup_fraction * horizon
    }
}

fn schedule_for(cfg: &ExperimentConfig, plan: &Plan, rho: f64, lambda: f64, rep: usize) -> Result<ArrivalSchedule> {
    generate_poisson_schedule(&TrafficConfig {
        rate: lambda,
        delay_model: plan.delay_model.clone(),
        horizon: plan.horizon,
        seed: derive_seed(cfg.base_seed, &[SCHEDULE_TAG, rho.to_bits(), rep as u64]),
    })
}

/// One replication's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rep: usize,
    pub seed: u64,
    /// Time-average p∘Δ after warmup.
    pub value: f64,
    /// Time-average p∘Ξ after warmup (MASIF policies only).
    pub lower_bound: Option<f64>,
    pub xi_below_delta: bool,
    pub delivered: usize,
}

/// All replications of one (policy, grid point) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub policy: String,
    pub rho: f64,
    pub lambda: f64,
    pub penalty_kind: String,
    pub summary: Summary,
    pub lower_bound: Option<Summary>,
    pub runs: Vec<RunRecord>,
}

impl CellResult {
    pub fn values(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.value).collect()
    }

    pub fn lower_bound_values(&self) -> Option<Vec<f64>> {
        self.runs.iter().map(|r| r.lower_bound).collect()
    }

    pub fn xi_violations(&self) -> usize {
        self.runs.iter().filter(|r| !r.xi_below_delta).count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub cells: Vec<CellResult>,
}

impl ExperimentResults {
    pub fn cell(&self, policy: &str, rho: f64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.policy == policy && c.rho == rho)
    }

    pub fn grid(&self) -> Vec<f64> {
        let mut g: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !g.contains(&c.rho) {
                g.push(c.rho);
            }
        }
        g
    }

    /// Results CSV: policy, rho, penalty_kind, mean, ci_half, n_seeds, lower_bound_mean.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["policy", "rho", "penalty_kind", "mean", "ci_half", "n_seeds", "lower_bound_mean"])?;
        for c in &self.cells {
            w.write_record([
                c.policy.clone(),
                c.rho.to_string(),
                c.penalty_kind.clone(),
                c.summary.mean.to_string(),
                c.summary.ci_half.to_string(),
                c.summary.n.to_string(),
                c.lower_bound.map(|s| s.mean.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every (policy, grid point, replication) and summarizes each cell.
///
/// Replications run in parallel; the schedule for a (grid point, rep) pair
/// is shared by all policies, and each run's seed depends only on the base
/// seed, the policy name, the grid point and the replication index.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    let plan = cfg.plan()?;
    run_plan(cfg, &plan, None)
}

fn trace_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir().join("traces")
}

fn run_plan(cfg: &ExperimentConfig, plan: &Plan, dump: Option<&Path>) -> Result<ExperimentResults> {
    let t0 = cfg.warmup_start(plan.horizon);
    let opts = RunOptions {
        allow_unchecked: cfg.allow_unchecked,
        check_invariants: false,
        ..RunOptions::default()
    };
    if let Some(d) = dump {
        fs::create_dir_all(d)?;
    }
    let jobs: Vec<(usize, usize, usize)> = (0..plan.policies.len())
        .flat_map(|p| (0..plan.grid.len()).flat_map(move |g| (0..cfg.replications).map(move |r| (p, g, r))))
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(pi, gi, rep)| {
            let policy = &plan.policies[pi];
            let (rho, lambda) = plan.grid[gi];
            let name = policy.to_string();
            let schedule = schedule_for(cfg, plan, rho, lambda, rep)?;
            let seed = derive_seed(cfg.base_seed, &[RUN_TAG, name_hash(&name), rho.to_bits(), rep as u64]);
            let trace = run_with(&plan.system, &schedule, &plan.service, policy, plan.horizon, seed, opts)?;
            let value = time_average_of(&trace.delta, &cfg.penalty, t0, plan.horizon)?;
            let lower_bound = if policy.flow_rule == FlowRule::Masif {
                Some(time_average_of(&trace.xi, &cfg.penalty, t0, plan.horizon)?)
            } else {
                None
            };
            if let Some(d) = dump {
                let f = fs::File::create(d.join(format!("{name}_rho{rho}_rep{rep}.json")))?;
                trace.write_json(BufWriter::new(f))?;
            }
            Ok(RunRecord {
                rep,
                seed,
                value,
                lower_bound,
                xi_below_delta: trace.check_xi_below_delta().is_ok(),
                delivered: trace.delivered_count(),
            })
        })
        .collect::<Result<_>>()?;

    let penalty_kind = cfg.penalty.label();
    let cells = records
        .chunks(cfg.replications)
        .zip(jobs.chunks(cfg.replications))
        .map(|(runs, js)| {
            let (pi, gi, _) = js[0];
            let values: Vec<f64> = runs.iter().map(|r| r.value).collect();
            let lbs: Option<Vec<f64>> = runs.iter().map(|r| r.lower_bound).collect();
            CellResult {
                policy: plan.policies[pi].to_string(),
                rho: plan.grid[gi].0,
                lambda: plan.grid[gi].1,
                penalty_kind: penalty_kind.clone(),
                summary: summarize(&values),
                lower_bound: lbs.as_deref().map(summarize),
                runs: runs.to_vec(),
            }
        })
        .collect();
    Ok(ExperimentResults { cells })
}

/// Files written by [`simulate`].
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub results_csv: PathBuf,
    pub manifest: PathBuf,
    pub traces: Option<PathBuf>,
}

/// Runs the sweep and writes `results.csv`, `manifest.json` and, when
/// requested, one JSON trace per run under `traces/`.
pub fn simulate(cfg: &ExperimentConfig) -> Result<(ExperimentResults, OutputPaths)> {
    let plan = cfg.plan()?;
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    let traces = cfg.output.dump_traces.then(|| trace_dir(cfg));
    let results = run_plan(cfg, &plan, traces.as_deref())?;
    let results_csv = dir.join("results.csv");
    results.write_csv(BufWriter::new(fs::File::create(&results_csv)?))?;
    let manifest = dir.join("manifest.json");
    let xi_violations: usize = results.cells.iter().map(CellResult::xi_violations).sum();
    let doc = json!({
        "tool": "aoisim",
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "grid": plan.grid.iter().map(|(r, l)| json!({"rho": r, "lambda": l})).collect::<Vec<_>>(),
        "service_mean": plan.service.mean(),
        "warmup_start": cfg.warmup_start(plan.horizon),
        "runs": results.cells.len() * cfg.replications,
        "xi_above_delta_runs": xi_violations,
        "results": "results.csv",
    });
    let f = BufWriter::new(fs::File::create(&manifest)?);
    serde_json::to_writer_pretty(f, &doc)?;
    Ok((results, OutputPaths { results_csv, manifest, traces }))
}

/// The `verify` subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyKind {
    Dominance,
    Nbu,
    XiBound,
    WorkEfficiency,
    PenaltyProps,
}

impl FromStr for VerifyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dominance" => VerifyKind::Dominance,
            "nbu" => VerifyKind::Nbu,
            "xi-bound" => VerifyKind::XiBound,
            "work-efficiency" => VerifyKind::WorkEfficiency,
            "penalty-props" => VerifyKind::PenaltyProps,
            other => return Err(Error::Config(format!("unknown verify check '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub check: VerifyKind,
    pub ok: bool,
    pub details: Value,
}

/// Policies used when a verify config lists none.
pub fn default_verify_policies(kind: VerifyKind) -> Vec<&'static str> {
    match kind {
        VerifyKind::Dominance => vec!["prmp-MAF-LGFS", "np-MAF-FCFS", "prmp-RAND-LGFS", "np-RAND-FCFS", "np-MAF-LGFS"],
        VerifyKind::WorkEfficiency => vec!["np-MASIF-LGFS", "np-RAND-FCFS"],
        VerifyKind::XiBound => vec!["np-MAF-LGFS", "np-RAND-LGFS", "np-RAND-FCFS"],
        VerifyKind::Nbu | VerifyKind::PenaltyProps => vec![],
    }
}

fn with_default_policies(cfg: &ExperimentConfig, kind: VerifyKind) -> ExperimentConfig {
    let mut c = cfg.clone();
    if c.policies.is_empty() {
        c.policies = default_verify_policies(kind).into_iter().map(String::from).collect();
    }
    c
}

pub fn verify(kind: VerifyKind, cfg: &ExperimentConfig) -> Result<VerifyReport> {
    let (ok, details) = match kind {
        VerifyKind::Nbu => verify_nbu_check(cfg)?,
        VerifyKind::PenaltyProps => verify_penalty_props(cfg)?,
        VerifyKind::Dominance => verify_dominance(&with_default_policies(cfg, kind))?,
        VerifyKind::WorkEfficiency => verify_work_efficiency(&with_default_policies(cfg, kind))?,
        VerifyKind::XiBound => verify_xi_bound(&with_default_policies(cfg, kind))?,
    };
    Ok(VerifyReport { check: kind, ok, details })
}

fn verify_nbu_check(cfg: &ExperimentConfig) -> Result<(bool, Value)> {
    let mut dists = Vec::new();
    if let Some(kind) = cfg.service {
        dists.push(ServiceDistribution::new_unchecked(kind)?);
    } else {
        dists = shipped_distributions();
    }
    let v = &cfg.verify;
    let mut all_ok = true;
    let mut rows = Vec::new();
    for d in dists {
        let r = verify_nbu(&d, v.nbu_grid_step, v.nbu_extent_means * d.mean())?;
        all_ok &= r.ok;
        rows.push(json!({"distribution": d.kind(), "report": r}));
    }
    Ok((all_ok, json!({ "distributions": rows })))
}

fn verify_penalty_props(cfg: &ExperimentConfig) -> Result<(bool, Value)> {
    let mut kinds = shipped_penalties();
    for k in std::iter::once(&cfg.penalty.kind).chain(cfg.penalty.schedule.iter().map(|s| &s.kind)) {
        if !kinds.contains(k) {
            kinds.push(k.clone());
        }
    }
    let n = cfg.system.map_or(5, |s| s.num_flows);
    let mut all_ok = true;
    let mut rows = Vec::new();
    for (i, k) in kinds.iter().enumerate() {
        let r = check_psym(k, n, cfg.verify.psym_trials, derive_seed(cfg.base_seed, &[i as u64]))?;
        all_ok &= r.ok;
        rows.push(r);
    }
    Ok((all_ok, json!({ "num_flows": n, "penalties": rows })))
}

#[derive(Debug, Clone, Default, Serialize)]
struct ComparatorTally {
    policy: String,
    pairs: usize,
    checkpoints: usize,
    violation_count: usize,
    violations: Vec<Value>,
}

fn verify_dominance(cfg: &ExperimentConfig) -> Result<(bool, Value)> {
    if let Some(kind) = cfg.service {
        if !matches!(kind, ServiceKind::Exponential { .. }) {
            return Err(Error::InvalidKeys(vec![
                "service (sample-path dominance needs exponential service)".into(),
            ]));
        }
    }
    let plan = cfg.plan()?;
    if plan.system.num_servers != 1 {
        return Err(Error::InvalidKeys(vec!["system.num_servers (dominance coupling needs 1)".into()]));
    }
    if plan.policies.len() < 2 {
        return Err(Error::InvalidKeys(vec!["policies (need P and at least one comparator)".into()]));
    }
    let jobs: Vec<(usize, usize)> =
        (0..plan.grid.len()).flat_map(|g| (0..cfg.replications).map(move |r| (g, r))).collect();
    type PairOutcome = (usize, usize, Vec<DominanceViolation>, bool);
    let outcomes: Vec<Vec<PairOutcome>> = jobs
        .par_iter()
        .map(|&(gi, rep)| {
            let (rho, lambda) = plan.grid[gi];
            let c = CoupledRunConfig {
                system: plan.system,
                schedule: schedule_for(cfg, &plan, rho, lambda, rep)?,
                service: plan.service,
                policies: plan.policies.clone(),
                mode: CouplingMode::SharedEpochs,
                horizon: plan.horizon,
                seed: derive_seed(cfg.base_seed, &[COUPLED_TAG, rho.to_bits(), rep as u64]),
                allow_unchecked: cfg.allow_unchecked,
            };
            let traces = run_coupled(&c)?;
            let xi_ok = traces.iter().all(|t| t.check_xi_below_delta().is_ok());
            traces[1..]
                .iter()
                .map(|other| {
                    let r = check_samplepath_dominance(&traces[0], other)?;
                    Ok((r.checkpoints, r.violation_count, r.violations, xi_ok))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut tallies: Vec<ComparatorTally> = plan.policies[1..]
        .iter()
        .map(|p| ComparatorTally {
            policy: p.to_string(),
            ..Default::default()
        })
        .collect();
    let mut xi_ok = true;
    for (&(gi, rep), per) in jobs.iter().zip(&outcomes) {
        for (tally, (checkpoints, count, violations, xo)) in tallies.iter_mut().zip(per) {
            xi_ok &= xo;
            tally.pairs += 1;
            tally.checkpoints += checkpoints;
            tally.violation_count += count;
            for v in violations.iter().take(5usize.saturating_sub(tally.violations.len())) {
                tally.violations.push(json!({"rho": plan.grid[gi].0, "rep": rep, "violation": v}));
            }
        }
    }
    let mut jump = Vec::new();
    for n in 2..=4 {
        jump.push(jump_oracle(n, cfg.verify.jump_cases, derive_seed(cfg.base_seed, &[n as u64]))?);
    }
    let ok = xi_ok && tallies.iter().all(|t| t.violation_count == 0) && jump.iter().all(|j| j.ok);
    Ok((
        ok,
        json!({
            "policy_p": plan.policies[0].to_string(),
            "comparators": tallies,
            "xi_below_delta": xi_ok,
            "jump_oracle": jump,
        }),
    ))
}

fn verify_work_efficiency(cfg: &ExperimentConfig) -> Result<(bool, Value)> {
    let plan = cfg.plan()?;
    if plan.policies.len() < 2 {
        return Err(Error::InvalidKeys(vec!["policies (need P and at least one comparator)".into()]));
    }
    if plan.policies.iter().any(PolicySpec::is_preemptive) {
        return Err(Error::InvalidKeys(vec!["policies (all must be non-preemptive)".into()]));
    }
    let p = plan.policies[0];
    let mut rows = Vec::new();
    let mut all_ok = true;
    for pi in &plan.policies[1..] {
        let jobs: Vec<(usize, usize)> =
            (0..plan.grid.len()).flat_map(|g| (0..cfg.replications).map(move |r| (g, r))).collect();
        let reports: Vec<(usize, usize, Vec<WorkEfficiencyCounterexample>)> = jobs
            .par_iter()
            .map(|&(gi, rep)| {
                let (rho, lambda) = plan.grid[gi];
                let c = CoupledRunConfig {
                    system: plan.system,
                    schedule: schedule_for(cfg, &plan, rho, lambda, rep)?,
                    service: plan.service,
                    policies: vec![p, *pi],
                    mode: CouplingMode::WorkEfficiency,
                    horizon: plan.horizon,
                    seed: derive_seed(cfg.base_seed, &[COUPLED_TAG, rho.to_bits(), rep as u64]),
                    allow_unchecked: cfg.allow_unchecked,
                };
                let tr = run_coupled(&c)?;
                let r = check_weak_work_efficiency(&tr[0], &tr[1])?;
                Ok((r.constrained_services, r.counterexample_count, r.counterexamples))
            })
            .collect::<Result<_>>()?;
        let constrained: usize = reports.iter().map(|r| r.0).sum();
        let failures: usize = reports.iter().map(|r| r.1).sum();
        let grid = &plan.grid;
        let examples: Vec<Value> = jobs
            .iter()
            .zip(&reports)
            .flat_map(|(&(gi, rep), r)| {
                r.2.iter().map(move |ce| json!({"rho": grid[gi].0, "rep": rep, "counterexample": ce}))
            })
            .take(5)
            .collect();
        all_ok &= failures == 0;
        rows.push(json!({
            "policy_pi": pi.to_string(),
            "runs": jobs.len(),
            "constrained_services": constrained,
            "counterexample_count": failures,
            "counterexamples": examples,
        }));
    }
    Ok((all_ok, json!({"policy_p": p.to_string(), "comparators": rows})))
}

fn verify_xi_bound(cfg: &ExperimentConfig) -> Result<(bool, Value)> {
    let masif = PolicySpec::np_masif_lgfs();
    let mut c = cfg.clone();
    let mut bad = Vec::new();
    for (i, name) in c.policies.iter().enumerate() {
        if let Ok(p) = PolicySpec::from_str(name) {
            if p.is_preemptive() {
                bad.push(format!("policies[{i}] ({name} is preemptive; the bound covers non-preemptive policies)"));
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::InvalidKeys(bad));
    }
    c.policies.retain(|n| PolicySpec::from_str(n).map_or(true, |p| p != masif));
    c.policies.insert(0, masif.to_string());
    let results = run_experiment(&c)?;
    let mut rows = Vec::new();
    let mut all_ok = true;
    for rho in results.grid() {
        let m = results.cell(&masif.to_string(), rho).expect("MASIF cell");
        let xs = m.lower_bound_values().expect("MASIF runs carry Ξ averages");
        for cell in results.cells.iter().filter(|cl| cl.rho == rho) {
            let r = xi_bound_from_samples(&cell.policy, &c.penalty, &xs, &cell.values())?;
            all_ok &= r.ok && cell.xi_violations() == 0;
            rows.push(json!({"rho": rho, "report": r}));
        }
    }
    Ok((all_ok, json!({"penalty": c.penalty.label(), "comparisons": rows})))
}
