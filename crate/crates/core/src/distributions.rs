//! Service-time distributions and the New-Better-than-Used check.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::types::Time;

/// Largest F̄(τ+t) − F̄(τ)F̄(t) tolerated by [`verify_nbu`].
pub const NBU_TOLERANCE: f64 = 1e-12;

/// Distribution family and parameters, as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceKind {
    Exponential { rate: f64 },
    ShiftedExponential { shift: f64, rate: f64 },
    Constant { value: f64 },
    Erlang { shape: u32, rate: f64 },
    /// Two-phase exponential mixture. Not NBU; constructible only unchecked.
    Hyperexponential { p: f64, rate1: f64, rate2: f64 },
}

impl ServiceKind {
    fn is_nbu_family(&self) -> bool {
        !matches!(self, ServiceKind::Hyperexponential { .. })
    }

    fn validate(&self) -> Result<()> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        let ok = match *self {
            ServiceKind::Exponential { rate } => pos(rate),
            ServiceKind::ShiftedExponential { shift, rate } => pos(shift) && pos(rate),
            ServiceKind::Constant { value } => pos(value),
            ServiceKind::Erlang { shape, rate } => shape >= 1 && pos(rate),
            ServiceKind::Hyperexponential { p, rate1, rate2 } => {
                p > 0.0 && p < 1.0 && pos(rate1) && pos(rate2)
            }
        };
        if ok {
            Ok(())
        } else {
            config_err(format!("invalid service distribution parameters: {self:?}"))
        }
    }
}

/// A validated i.i.d. service-time law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ServiceKind", into = "ServiceKind")]
pub struct ServiceDistribution {
    kind: ServiceKind,
}

impl TryFrom<ServiceKind> for ServiceDistribution {
    type Error = crate::error::Error;

    fn try_from(kind: ServiceKind) -> Result<Self> {
        Self::new(kind)
    }
}

impl From<ServiceDistribution> for ServiceKind {
    fn from(d: ServiceDistribution) -> Self {
        d.kind
    }
}

impl ServiceDistribution {
    /// Validates parameters and refuses non-NBU families.
    pub fn new(kind: ServiceKind) -> Result<Self> {
        kind.validate()?;
        if !kind.is_nbu_family() {
            return config_err(format!(
                "{kind:?} is not New-Better-than-Used; use ServiceDistribution::new_unchecked"
            ));
        }
        Ok(Self { kind })
    }

    /// Validates parameters only.
    pub fn new_unchecked(kind: ServiceKind) -> Result<Self> {
        kind.validate()?;
        Ok(Self { kind })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(ServiceKind::Exponential { rate })
    }

    pub fn shifted_exponential(shift: f64, rate: f64) -> Result<Self> {
        Self::new(ServiceKind::ShiftedExponential { shift, rate })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(ServiceKind::Constant { value })
    }

    pub fn erlang(shape: u32, rate: f64) -> Result<Self> {
        Self::new(ServiceKind::Erlang { shape, rate })
    }

    pub fn kind(&self) -> ServiceKind {
        self.kind
    }

    pub fn is_exponential(&self) -> bool {
        matches!(self.kind, ServiceKind::Exponential { .. })
    }

    pub fn is_nbu(&self) -> bool {
        self.kind.is_nbu_family()
    }

    /// E[X].
    pub fn mean(&self) -> Time {
        match self.kind {
            ServiceKind::Exponential { rate } => 1.0 / rate,
            ServiceKind::ShiftedExponential { shift, rate } => shift + 1.0 / rate,
            ServiceKind::Constant { value } => value,
            ServiceKind::Erlang { shape, rate } => f64::from(shape) / rate,
            ServiceKind::Hyperexponential { p, rate1, rate2 } => p / rate1 + (1.0 - p) / rate2,
        }
    }

    /// Service rate μ = 1 / E[X].
    pub fn rate(&self) -> f64 {
        1.0 / self.mean()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Time {
        match self.kind {
            ServiceKind::Exponential { rate } => Exp::new(rate).expect("validated").sample(rng),
            ServiceKind::ShiftedExponential { shift, rate } => {
                shift + Exp::new(rate).expect("validated").sample(rng)
            }
            ServiceKind::Constant { value } => value,
            ServiceKind::Erlang { shape, rate } => Gamma::new(f64::from(shape), 1.0 / rate)
                .expect("validated")
                .sample(rng),
            ServiceKind::Hyperexponential { p, rate1, rate2 } => {
                let rate = if rng.random_bool(p) { rate1 } else { rate2 };
                Exp::new(rate).expect("validated").sample(rng)
            }
        }
    }

    /// Pr[X > x]. Negative arguments return F̄(0) = 1.
    pub fn ccdf(&self, x: Time) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        match self.kind {
            ServiceKind::Exponential { rate } => (-rate * x).exp(),
            ServiceKind::ShiftedExponential { shift, rate } => {
                if x < shift {
                    1.0
                } else {
                    (-rate * (x - shift)).exp()
                }
            }
            ServiceKind::Constant { value } => {
                if x < value {
                    1.0
                } else {
                    0.0
                }
            }
            ServiceKind::Erlang { shape, rate } => {
                let rx = rate * x;
                let mut term = 1.0;
                let mut sum = 1.0;
                for j in 1..shape {
                    term *= rx / f64::from(j);
                    sum += term;
                }
                (-rx).exp() * sum
            }
            ServiceKind::Hyperexponential { p, rate1, rate2 } => {
                p * (-rate1 * x).exp() + (1.0 - p) * (-rate2 * x).exp()
            }
        }
    }

    pub fn cdf(&self, x: Time) -> f64 {
        1.0 - self.ccdf(x)
    }

    /// Smallest x with F̄(x) <= q, for q in (0, 1].
    fn ccdf_inverse(&self, q: f64) -> Time {
        debug_assert!(q > 0.0 && q <= 1.0);
        match self.kind {
            ServiceKind::Exponential { rate } => -q.ln() / rate,
            ServiceKind::ShiftedExponential { shift, rate } => shift - q.ln() / rate,
            ServiceKind::Constant { value } => {
                if q >= 1.0 {
                    0.0
                } else {
                    value
                }
            }
            _ => {
                let mut hi = self.mean().max(1e-12);
                while self.ccdf(hi) > q {
                    hi *= 2.0;
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.ccdf(mid) > q {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-14 * hi.max(1.0) {
                        break;
                    }
                }
                hi
            }
        }
    }

    /// Inverse-transform sample from a uniform `u` in [0, 1).
    pub fn quantile(&self, u: f64) -> Time {
        self.ccdf_inverse((1.0 - u).max(f64::MIN_POSITIVE))
    }

    /// Residual service time of a job that has already run for `elapsed`,
    /// drawn by inverse transform from `u`: Pr[R > x] = F̄(elapsed + x) / F̄(elapsed).
    ///
    /// With the same `u`, NBU gives `residual_quantile(e, u) <= quantile(u)`.
    pub fn residual_quantile(&self, elapsed: Time, u: f64) -> Time {
        let survive = self.ccdf(elapsed);
        if survive <= 0.0 {
            return 0.0;
        }
        match self.kind {
            ServiceKind::Exponential { .. } => self.quantile(u),
            _ => {
                let q = ((1.0 - u) * survive).max(f64::MIN_POSITIVE);
                (self.ccdf_inverse(q) - elapsed).max(0.0)
            }
        }
    }
}

/// Outcome of a grid check of F̄(τ+t) <= F̄(τ)F̄(t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NbuReport {
    /// max over the grid of F̄(τ+t) − F̄(τ)F̄(t).
    pub max_violation: f64,
    /// max over the grid of |F̄(τ+t) − F̄(τ)F̄(t)|.
    pub max_abs_gap: f64,
    pub ok: bool,
}

/// Evaluates the NBU inequality on the grid (τ, t) ∈ {0, h, 2h, ..}² up to `grid_max`.
pub fn verify_nbu(dist: &ServiceDistribution, grid_step: Time, grid_max: Time) -> Result<NbuReport> {
    if !(grid_step > 0.0) || !(grid_max > 0.0) {
        return config_err("NBU grid step and extent must be positive");
    }
    let n = (grid_max / grid_step).round() as usize;
    // Points are indexed so that τ + t lands exactly on grid point i + j.
    let surv: Vec<f64> = (0..=2 * n).map(|k| dist.ccdf(k as f64 * grid_step)).collect();
    let mut max_violation = f64::NEG_INFINITY;
    let mut max_abs_gap = 0.0f64;
    for i in 0..=n {
        for j in 0..=n {
            let gap = surv[i + j] - surv[i] * surv[j];
            max_violation = max_violation.max(gap);
            max_abs_gap = max_abs_gap.max(gap.abs());
        }
    }
    Ok(NbuReport {
        max_violation,
        max_abs_gap,
        ok: max_violation <= NBU_TOLERANCE,
    })
}

/// The NBU families shipped by default, each normalized to unit mean.
pub fn shipped_distributions() -> Vec<ServiceDistribution> {
    vec![
        ServiceDistribution::exponential(1.0).expect("valid"),
        ServiceDistribution::shifted_exponential(1.0 / 3.0, 1.5).expect("valid"),
        ServiceDistribution::constant(1.0).expect("valid"),
        ServiceDistribution::erlang(2, 2.0).expect("valid"),
        ServiceDistribution::erlang(5, 5.0).expect("valid"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::stats::{ks_one_sample, mean, sample_variance};
    use rand::Rng;

    fn shifted() -> ServiceDistribution {
        ServiceDistribution::shifted_exponential(1.0 / 3.0, 1.5).unwrap()
    }

    #[test]
    fn constant_samples_are_constant() {
        let d = ServiceDistribution::constant(1.0).unwrap();
        let mut rng = stream(1, Stream::Service);
        assert!((0..100).all(|_| d.sample(&mut rng) == 1.0));
    }

    #[test]
    fn shifted_samples_respect_shift() {
        let d = shifted();
        let mut rng = stream(2, Stream::Service);
        assert!((0..10_000).all(|_| d.sample(&mut rng) >= 1.0 / 3.0));
    }

    #[test]
    fn means() {
        assert_eq!(ServiceDistribution::exponential(1.0).unwrap().mean(), 1.0);
        assert!((shifted().mean() - 1.0).abs() < 1e-15);
        assert_eq!(ServiceDistribution::constant(2.5).unwrap().mean(), 2.5);
        assert_eq!(ServiceDistribution::erlang(3, 2.0).unwrap().mean(), 1.5);
    }

    #[test]
    fn sample_means_within_three_standard_errors() {
        let mut dists = shipped_distributions();
        dists.push(ServiceDistribution::exponential(1.0).unwrap());
        for (k, d) in dists.iter().enumerate() {
            let mut rng = stream(100 + k as u64, Stream::Service);
            let xs: Vec<f64> = (0..1_000_000).map(|_| d.sample(&mut rng)).collect();
            let m = mean(&xs);
            let se = (sample_variance(&xs) / xs.len() as f64).sqrt();
            assert!((m - d.mean()).abs() <= 3.0 * se.max(1e-15), "{d:?}: {m}");
            if d.is_exponential() {
                assert!((m - 1.0).abs() < 0.01);
            }
        }
    }

    #[test]
    fn ccdf_examples() {
        assert_eq!(shifted().ccdf(0.2), 1.0);
        assert_eq!(shifted().ccdf(1.0 / 3.0), 1.0);
        assert_eq!(ServiceDistribution::exponential(2.0).unwrap().ccdf(0.0), 1.0);
        assert_eq!(shifted().ccdf(-4.0), 1.0);
        let e = ServiceDistribution::erlang(2, 1.0).unwrap();
        assert!((e.ccdf(1.0) - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn samples_match_ccdf_by_ks() {
        for (k, d) in shipped_distributions().iter().enumerate() {
            if matches!(d.kind(), ServiceKind::Constant { .. }) {
                continue;
            }
            let mut rng = stream(200 + k as u64, Stream::Service);
            let xs: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng)).collect();
            let r = ks_one_sample(&xs, |x| d.cdf(x));
            assert!(r.passes(0.01), "{d:?}: {r:?}");
        }
    }

    #[test]
    fn quantile_sampling_matches_ccdf() {
        for (k, d) in shipped_distributions().iter().enumerate() {
            if matches!(d.kind(), ServiceKind::Constant { .. }) {
                continue;
            }
            let mut rng = stream(300 + k as u64, Stream::Service);
            let xs: Vec<f64> = (0..20_000).map(|_| d.quantile(rng.random())).collect();
            assert!(ks_one_sample(&xs, |x| d.cdf(x)).passes(0.01), "{d:?}");
        }
    }

    #[test]
    fn residual_is_stochastically_shorter_for_nbu() {
        let mut rng = stream(9, Stream::Service);
        for d in shipped_distributions() {
            for _ in 0..2_000 {
                let u: f64 = rng.random();
                let e: f64 = rng.random::<f64>() * 3.0 * d.mean();
                if d.ccdf(e) == 0.0 {
                    continue;
                }
                let r = d.residual_quantile(e, u);
                assert!(r <= d.quantile(u) + 1e-9, "{d:?} e={e} u={u}");
                assert!(r >= 0.0);
            }
        }
    }

    #[test]
    fn residual_law_matches_conditional_ccdf() {
        let d = ServiceDistribution::erlang(3, 3.0).unwrap();
        let e = 0.7;
        let mut rng = stream(10, Stream::Service);
        let xs: Vec<f64> = (0..20_000).map(|_| d.residual_quantile(e, rng.random())).collect();
        let cond_cdf = |x: f64| 1.0 - d.ccdf(e + x) / d.ccdf(e);
        assert!(ks_one_sample(&xs, cond_cdf).passes(0.01));
    }

    #[test]
    fn nbu_reports() {
        let r = verify_nbu(&ServiceDistribution::exponential(1.3).unwrap(), 0.05, 4.0).unwrap();
        assert!(r.ok && r.max_abs_gap <= 1e-15, "{r:?}");
        let r = verify_nbu(&ServiceDistribution::constant(1.0).unwrap(), 0.01, 3.0).unwrap();
        assert!(r.ok);
        let r = verify_nbu(&shifted(), 0.01, 5.0).unwrap();
        assert!(r.ok && r.max_violation <= 0.0);
        assert!(verify_nbu(&shifted(), 0.0, 5.0).is_err());
    }

    #[test]
    fn every_shipped_kind_passes_nbu_to_ten_means() {
        for d in shipped_distributions() {
            let r = verify_nbu(&d, 0.01, 10.0 * d.mean()).unwrap();
            assert!(r.ok, "{d:?}: {r:?}");
        }
    }

    #[test]
    fn hyperexponential_needs_unchecked_and_fails_nbu() {
        let kind = ServiceKind::Hyperexponential {
            p: 0.5,
            rate1: 0.2,
            rate2: 5.0,
        };
        assert!(ServiceDistribution::new(kind).is_err());
        let d = ServiceDistribution::new_unchecked(kind).unwrap();
        assert!(!verify_nbu(&d, 0.05, 5.0).unwrap().ok);
    }

    #[test]
    fn invalid_parameters() {
        assert!(ServiceDistribution::exponential(0.0).is_err());
        assert!(ServiceDistribution::erlang(0, 1.0).is_err());
        assert!(ServiceDistribution::constant(-1.0).is_err());
    }

    #[test]
    fn config_json_shape() {
        let d: ServiceDistribution =
            serde_json::from_str(r#"{"kind":"shifted_exponential","shift":0.3333333333333333,"rate":1.5}"#).unwrap();
        assert!((d.mean() - 1.0).abs() < 1e-12);
        assert!(serde_json::from_str::<ServiceDistribution>(r#"{"kind":"hyperexponential","p":0.5,"rate1":1,"rate2":2}"#).is_err());
    }
}
