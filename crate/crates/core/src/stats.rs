//! Small statistics helpers for replication summaries and goodness-of-fit checks.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Mean and 95% confidence half-width of a replication sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub ci_half: f64,
    pub n: usize,
}

impl Summary {
    pub fn lower(&self) -> f64 {
        self.mean - self.ci_half
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci_half
    }

    /// True when the two 95% intervals do not intersect.
    pub fn disjoint_from(&self, other: &Summary) -> bool {
        self.upper() < other.lower() || other.upper() < self.lower()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Mean with a Student-t 95% interval. Summing is done in slice order.
pub fn summarize(xs: &[f64]) -> Summary {
    let n = xs.len();
    let m = mean(xs);
    let ci_half = if n < 2 {
        f64::INFINITY
    } else {
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("positive dof")
            .inverse_cdf(0.975);
        t * (sample_variance(xs) / n as f64).sqrt()
    };
    Summary { mean: m, ci_half, n }
}

/// Kolmogorov survival function Q(λ) = 2 Σ (-1)^{k-1} exp(-2k²λ²).
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl KsResult {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn ks_p_value(d: f64, ne: f64) -> f64 {
    let sq = ne.sqrt();
    kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)
}

/// Two-sample Kolmogorov–Smirnov test (asymptotic p-value).
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> KsResult {
    assert!(!x.is_empty() && !y.is_empty());
    let (x, y) = (sorted(x), sorted(y));
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n * m / (n + m)),
    }
}

/// One-sample Kolmogorov–Smirnov test against a continuous or discrete CDF.
pub fn ks_one_sample(x: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    assert!(!x.is_empty());
    let x = sorted(x);
    let n = x.len() as f64;
    let mut d = 0.0f64;
    for (i, &xi) in x.iter().enumerate() {
        let f = cdf(xi);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
    }
}

/// Dvoretzky–Kiefer–Wolfowitz band: sup |F_n - F| <= ε with probability 1 - α.
pub fn dkw_epsilon(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}
