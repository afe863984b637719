//! Age-penalty functions, time-averaged penalties, sorted dominance and
//! empirical stochastic ordering.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::rng::{stream, Stream};
use crate::sawtooth::{SawtoothProcess, Segment};
use crate::types::Time;

/// Per-flow cost g(Δ) summed by [`PenaltyKind::SumPenalty`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgeFunction {
    /// ⌊aΔ⌋
    Stair { a: f64 },
    /// e^{aΔ}
    Exp { a: f64 },
    /// Piecewise-linear interpolation, constant outside the table.
    Table { points: Vec<[f64; 2]> },
}

impl AgeFunction {
    fn validate(&self) -> Result<()> {
        match self {
            AgeFunction::Stair { a } | AgeFunction::Exp { a } => {
                if !(a.is_finite() && *a >= 0.0) {
                    return config_err(format!("g parameter a must be finite and >= 0, got {a}"));
                }
            }
            AgeFunction::Table { points } => {
                if points.is_empty() {
                    return config_err("g table needs at least one point");
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return config_err("g table entries must be finite");
                }
                for w in points.windows(2) {
                    if w[1][0] <= w[0][0] {
                        return config_err("g table abscissae must strictly increase");
                    }
                    if w[1][1] < w[0][1] {
                        return config_err("g table must be non-decreasing");
                    }
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            AgeFunction::Stair { a } => (a * x).floor(),
            AgeFunction::Exp { a } => (a * x).exp(),
            AgeFunction::Table { points } => {
                let i = points.partition_point(|p| p[0] <= x);
                if i == 0 {
                    return points[0][1];
                }
                if i == points.len() {
                    return points[i - 1][1];
                }
                let ([x0, y0], [x1, y1]) = (points[i - 1], points[i]);
                (y0 + (x - x0) * (y1 - y0) / (x1 - x0)).clamp(y0, y1)
            }
        }
    }

    /// ∫_v^{v+len} g(u) du in closed form.
    fn integral(&self, v: f64, len: f64) -> f64 {
        match self {
            AgeFunction::Stair { a } => {
                if *a == 0.0 {
                    return 0.0;
                }
                // F(y) = ∫_0^y ⌊z⌋ dz
                let f = |y: f64| {
                    let k = y.floor();
                    0.5 * k * (k - 1.0) + k * (y - k)
                };
                (f(a * (v + len)) - f(a * v)) / a
            }
            AgeFunction::Exp { a } => {
                if *a == 0.0 {
                    len
                } else {
                    (a * v).exp() * (a * len).exp_m1() / a
                }
            }
            AgeFunction::Table { points } => table_antiderivative(points, v + len) - table_antiderivative(points, v),
        }
    }
}

fn table_antiderivative(points: &[[f64; 2]], u: f64) -> f64 {
    let x0 = points[0][0];
    if u <= x0 {
        return points[0][1] * (u - x0);
    }
    let mut acc = 0.0;
    for w in points.windows(2) {
        let ([xa, ya], [xb, yb]) = (w[0], w[1]);
        if u <= xb {
            let yu = ya + (u - xa) * (yb - ya) / (xb - xa);
            return acc + 0.5 * (ya + yu) * (u - xa);
        }
        acc += 0.5 * (ya + yb) * (xb - xa);
    }
    let [xl, yl] = points[points.len() - 1];
    acc + yl * (u - xl)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyKind {
    Avg,
    Max,
    MeanSquare,
    LNorm { l: f64 },
    SumPenalty { g: AgeFunction },
}

impl PenaltyKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            PenaltyKind::LNorm { l } if !(l.is_finite() && *l >= 1.0) => {
                config_err(format!("l_norm requires l >= 1, got {l}"))
            }
            PenaltyKind::SumPenalty { g } => g.validate(),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PenaltyKind::Avg => "avg".into(),
            PenaltyKind::Max => "max".into(),
            PenaltyKind::MeanSquare => "mean_square".into(),
            PenaltyKind::LNorm { l } => format!("l_norm({l})"),
            PenaltyKind::SumPenalty { g } => match g {
                AgeFunction::Stair { a } => format!("sum_penalty(stair,{a})"),
                AgeFunction::Exp { a } => format!("sum_penalty(exp,{a})"),
                AgeFunction::Table { .. } => "sum_penalty(table)".into(),
            },
        }
    }

    /// Value on a vector sorted in decreasing order.
    fn eval_sorted(&self, desc: &[f64]) -> f64 {
        let n = desc.len() as f64;
        match self {
            PenaltyKind::Avg => desc.iter().sum::<f64>() / n,
            PenaltyKind::Max => desc[0],
            PenaltyKind::MeanSquare => desc.iter().map(|x| x * x).sum::<f64>() / n,
            PenaltyKind::LNorm { l } => desc.iter().map(|x| x.powf(*l)).sum::<f64>().powf(1.0 / l),
            PenaltyKind::SumPenalty { g } => desc.iter().map(|&x| g.eval(x)).sum(),
        }
    }

    /// ∫_0^len p(v + s·1) ds for the age vector `v`, each coordinate growing at unit rate.
    fn segment_integral(&self, v: &[f64], len: f64) -> f64 {
        let n = v.len() as f64;
        match self {
            PenaltyKind::Avg => v.iter().map(|x| x * len + 0.5 * len * len).sum::<f64>() / n,
            PenaltyKind::Max => {
                let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                m * len + 0.5 * len * len
            }
            PenaltyKind::MeanSquare => {
                v.iter()
                    .map(|x| len * (x * x + x * len + len * len / 3.0))
                    .sum::<f64>()
                    / n
            }
            PenaltyKind::SumPenalty { g } => v.iter().map(|&x| g.integral(x, len)).sum(),
            PenaltyKind::LNorm { .. } => {
                let mut buf = v.to_vec();
                let mut f = |s: f64| {
                    for (b, x) in buf.iter_mut().zip(v) {
                        *b = x + s;
                    }
                    self.eval(&buf)
                };
                adaptive_simpson(&mut f, 0.0, len, 1e-10)
            }
        }
    }

    fn eval(&self, v: &[f64]) -> f64 {
        let mut desc = v.to_vec();
        desc.sort_by(|a, b| b.total_cmp(a));
        self.eval_sorted(&desc)
    }
}

fn adaptive_simpson(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &mut impl FnMut(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(fa, fm, fb, b - a);
    let tol = rel_tol * whole.abs().max(f64::MIN_POSITIVE);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// A switch to `kind` from time `from` onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledPenalty {
    pub from: Time,
    #[serde(flatten)]
    pub kind: PenaltyKind,
}

/// A penalty p_t: `kind` until the first scheduled switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyFunction {
    #[serde(flatten)]
    pub kind: PenaltyKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<ScheduledPenalty>,
}

impl From<PenaltyKind> for PenaltyFunction {
    fn from(kind: PenaltyKind) -> Self {
        Self {
            kind,
            schedule: Vec::new(),
        }
    }
}

impl PenaltyFunction {
    pub fn avg() -> Self {
        PenaltyKind::Avg.into()
    }

    pub fn max() -> Self {
        PenaltyKind::Max.into()
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        for s in &self.schedule {
            s.kind.validate()?;
            if !(s.from.is_finite() && s.from >= 0.0) {
                return config_err("penalty schedule times must be finite and >= 0");
            }
        }
        if self.schedule.windows(2).any(|w| w[1].from <= w[0].from) {
            return config_err("penalty schedule times must strictly increase");
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let mut s = self.kind.label();
        for sp in &self.schedule {
            s.push_str(&format!(";{}@{}", sp.kind.label(), sp.from));
        }
        s
    }

    /// Kind in force at `t`.
    pub fn active(&self, t: Time) -> &PenaltyKind {
        let i = self.schedule.partition_point(|s| s.from <= t);
        if i == 0 {
            &self.kind
        } else {
            &self.schedule[i - 1].kind
        }
    }

    fn switch_times(&self) -> impl Iterator<Item = Time> + '_ {
        self.schedule.iter().map(|s| s.from)
    }
}

/// p_t(ages). Ages must be non-negative.
pub fn evaluate(p: &PenaltyFunction, ages: &[f64], t: Time) -> Result<f64> {
    p.validate()?;
    if ages.is_empty() {
        return Err(Error::EmptySamples);
    }
    if ages.iter().any(|a| !(*a >= 0.0)) {
        return config_err("penalty arguments must be non-negative ages");
    }
    Ok(p.active(t).eval(ages))
}

/// ∫_{t0}^{t1} p_t(X(t)) dt / (t1 - t0) for the vector process `procs`.
pub fn time_average_of(procs: &[SawtoothProcess], p: &PenaltyFunction, t0: Time, t1: Time) -> Result<f64> {
    p.validate()?;
    if procs.is_empty() {
        return Err(Error::EmptySamples);
    }
    if p.schedule.is_empty() {
        let scale = match p.kind {
            PenaltyKind::Avg | PenaltyKind::MeanSquare => Some(1.0 / procs.len() as f64),
            PenaltyKind::SumPenalty { .. } => Some(1.0),
            _ => None,
        };
        if let Some(scale) = scale {
            // Separable kinds: sum per-flow integrals.
            let mut total = 0.0;
            for pr in procs {
                for seg in pr.segments(t0, t1)? {
                    total += p.kind.segment_integral(&[seg.value], seg.len);
                }
            }
            return Ok(total * scale / (t1 - t0));
        }
    }
    let segs: Vec<Vec<Segment>> = procs
        .iter()
        .map(|pr| pr.segments(t0, t1))
        .collect::<Result<_>>()?;
    let mut cuts: Vec<Time> = segs.iter().flatten().map(|s| s.start).collect();
    cuts.extend(p.switch_times().filter(|&s| s > t0 && s < t1));
    cuts.push(t1);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut cursor = vec![0usize; procs.len()];
    let mut values = vec![0.0; procs.len()];
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (s, e) = (w[0], w[1]);
        for (f, fs) in segs.iter().enumerate() {
            while cursor[f] + 1 < fs.len() && fs[cursor[f] + 1].start <= s {
                cursor[f] += 1;
            }
            let seg = fs[cursor[f]];
            values[f] = seg.value + (s - seg.start);
        }
        total += p.active(s).segment_integral(&values, e - s);
    }
    Ok(total / (t1 - t0))
}

/// true iff the i-th largest of `a` is at most the i-th largest of `b` for all i.
pub fn sorted_dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let desc = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(|x, y| y.total_cmp(x));
        s
    };
    Ok(desc(a).iter().zip(desc(b)).all(|(x, y)| *x <= y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StOrderReport {
    /// max over the grid of P̂(X > t) − P̂(Y > t)
    pub max_ccdf_violation: f64,
    pub epsilon: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub ok: bool,
}

/// Confidence level for [`empirical_st_order`].
pub const ST_ORDER_CONFIDENCE: f64 = 0.99;

/// Two-sample DKW tolerance at the given confidence, split evenly across samples.
pub fn two_sample_dkw_epsilon(n_x: usize, n_y: usize, confidence: f64) -> f64 {
    let l = (4.0 / (1.0 - confidence)).ln();
    (l / (2.0 * n_x as f64)).sqrt() + (l / (2.0 * n_y as f64)).sqrt()
}

/// Quantiles of the pooled sample at `levels` evenly spaced probabilities in (0, 1).
pub fn pooled_quantile_grid(x: &[f64], y: &[f64], levels: usize) -> Vec<f64> {
    let mut pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    if pooled.is_empty() {
        return Vec::new();
    }
    pooled.sort_by(f64::total_cmp);
    let n = pooled.len();
    let mut grid: Vec<f64> = (1..=levels)
        .map(|k| {
            let q = k as f64 / (levels + 1) as f64;
            pooled[((q * n as f64).ceil() as usize).clamp(1, n) - 1]
        })
        .collect();
    grid.dedup();
    grid
}

/// Tests X ≤_st Y empirically; `grid` defaults to the 99-level pooled quantiles.
pub fn empirical_st_order(x: &[f64], y: &[f64], grid: Option<&[f64]>) -> Result<StOrderReport> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySamples);
    }
    let owned;
    let grid = match grid {
        Some(g) => g,
        None => {
            owned = pooled_quantile_grid(x, y, 99);
            &owned
        }
    };
    let ccdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v > t).count() as f64 / s.len() as f64;
    let max_ccdf_violation = grid
        .iter()
        .map(|&t| ccdf(x, t) - ccdf(y, t))
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let epsilon = two_sample_dkw_epsilon(x.len(), y.len(), ST_ORDER_CONFIDENCE);
    Ok(StOrderReport {
        max_ccdf_violation,
        epsilon,
        n_x: x.len(),
        n_y: y.len(),
        ok: max_ccdf_violation <= epsilon,
    })
}

/// Counts of failed property checks for one penalty kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsymReport {
    pub kind: String,
    pub trials: usize,
    pub symmetry_failures: usize,
    pub monotonicity_failures: usize,
    pub dominance_failures: usize,
    pub ok: bool,
}

/// Randomized membership check for symmetric, non-decreasing penalties:
/// each trial draws a vector, a permutation of it, an elementwise larger
/// vector and a permuted sorted-dominating vector.
pub fn check_psym(kind: &PenaltyKind, num_flows: usize, trials: usize, seed: u64) -> Result<PsymReport> {
    kind.validate()?;
    if num_flows == 0 {
        return config_err("num_flows must be >= 1");
    }
    let p = PenaltyFunction::from(kind.clone());
    let mut rng = stream(seed, Stream::TieBreak);
    let (mut sym, mut mono, mut dom) = (0, 0, 0);
    for _ in 0..trials {
        let a: Vec<f64> = (0..num_flows).map(|_| rng.random_range(0.0..10.0)).collect();
        let mut perm = a.clone();
        perm.shuffle(&mut rng);
        let pa = evaluate(&p, &a, 0.0)?;
        if evaluate(&p, &perm, 0.0)? != pa {
            sym += 1;
        }
        let bigger: Vec<f64> = a
            .iter()
            .map(|x| if rng.random_bool(0.5) { x + rng.random_range(0.0..5.0) } else { *x })
            .collect();
        if evaluate(&p, &bigger, 0.0)? < pa {
            mono += 1;
        }
        let mut shuffled = bigger.clone();
        shuffled.shuffle(&mut rng);
        debug_assert!(sorted_dominates(&a, &shuffled)?);
        if evaluate(&p, &shuffled, 0.0)? < pa {
            dom += 1;
        }
    }
    Ok(PsymReport {
        kind: kind.label(),
        trials,
        symmetry_failures: sym,
        monotonicity_failures: mono,
        dominance_failures: dom,
        ok: sym + mono + dom == 0,
    })
}

/// One instance of every penalty family with representative parameters.
pub fn shipped_penalties() -> Vec<PenaltyKind> {
    vec![
        PenaltyKind::Avg,
        PenaltyKind::Max,
        PenaltyKind::MeanSquare,
        PenaltyKind::LNorm { l: 1.0 },
        PenaltyKind::LNorm { l: 3.0 },
        PenaltyKind::SumPenalty {
            g: AgeFunction::Stair { a: 2.0 },
        },
        PenaltyKind::SumPenalty {
            g: AgeFunction::Exp { a: 0.5 },
        },
        PenaltyKind::SumPenalty {
            g: AgeFunction::Table {
                points: vec![[0.0, 0.0], [1.0, 0.5], [3.0, 4.0], [6.0, 4.0], [10.0, 20.0]],
            },
        },
    ]
}
