//! Univariate leaf distributions: Gaussians over features and indicators over the class variable.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpnError};
use crate::scalar::Real;

/// Gaussian density over one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLeaf<F> {
    pub var: usize,
    pub mean: F,
    pub variance: F,
}

/// Indicator `1[Y = state]` over the class variable. States are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorLeaf {
    pub var: usize,
    pub state: usize,
}

/// What the class indicators read during one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassAssignment<'a, F> {
    /// Observed label (zero-based).
    OneHot(usize),
    /// Every indicator set to one; the network computes `S[x, 1]`.
    Marginalized,
    /// Indicator `k` takes the value `q[k]`.
    Soft(&'a [F]),
}

/// Running weighted sums of the Gaussian sufficient statistics `(x, x^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SufficientStats<F> {
    pub weight: F,
    pub t1: F,
    pub t2: F,
}

impl<F: Real> SufficientStats<F> {
    #[inline]
    pub fn push(&mut self, g: F, x: F) {
        self.weight = self.weight + g;
        self.t1 = self.t1 + g * x;
        self.t2 = self.t2 + g * x * x;
    }

    #[inline]
    pub fn merge(&mut self, other: &Self) {
        self.weight = self.weight + other.weight;
        self.t1 = self.t1 + other.t1;
        self.t2 = self.t2 + other.t2;
    }

    /// Closed-form maximiser `(mean, max(var, floor))`, plus whether the floor was hit.
    pub fn solve(&self, floor: F) -> Result<(F, F, bool)> {
        if !(self.weight > F::zero()) {
            return Err(SpnError::ZeroResponsibility);
        }
        let mean = self.t1 / self.weight;
        let raw = self.t2 / self.weight - mean * mean;
        if raw < floor {
            Ok((mean, floor, true))
        } else {
            Ok((mean, raw, false))
        }
    }
}

impl<F: Real> GaussianLeaf<F> {
    pub fn new(var: usize, mean: F, variance: F) -> Self {
        Self { var, mean, variance }
    }

    #[inline]
    pub fn log_density(&self, x: F) -> F {
        log_density(self.mean, self.variance, x)
    }

    /// Derivatives of the density (not its log) w.r.t. mean and variance.
    pub fn param_gradient(&self, x: F) -> (F, F) {
        let p = self.log_density(x).exp();
        let (dm, dv) = self.score(x);
        (p * dm, p * dv)
    }

    /// Derivatives of the log density w.r.t. mean and variance.
    #[inline]
    pub fn score(&self, x: F) -> (F, F) {
        let d = x - self.mean;
        let v = self.variance;
        let two = F::lit(2.0);
        (d / v, (d * d - v) / (two * v * v))
    }
}

/// `log N(x; mean, variance)`.
#[inline]
pub fn log_density<F: Real>(mean: F, variance: F, x: F) -> F {
    let two = F::lit(2.0);
    let d = x - mean;
    -F::lit(0.5) * (F::lit(std::f64::consts::TAU) * variance).ln() - d * d / (two * variance)
}

impl IndicatorLeaf {
    pub fn value<F: Real>(&self, assignment: &ClassAssignment<'_, F>) -> F {
        match *assignment {
            ClassAssignment::OneHot(k) => {
                if k == self.state {
                    F::one()
                } else {
                    F::zero()
                }
            }
            ClassAssignment::Marginalized => F::one(),
            ClassAssignment::Soft(q) => q[self.state],
        }
    }
}

/// Weighted maximum-likelihood Gaussian fit with a variance floor.
///
/// Fails with `ZeroResponsibility` when the weights sum to zero; callers keep the old parameters.
pub fn update_gaussian<F: Real>(weights: &[F], values: &[F], floor: F) -> Result<(F, F)> {
    let mut stats = SufficientStats::default();
    for (&g, &x) in weights.iter().zip(values) {
        stats.push(g, x);
    }
    stats.solve(floor).map(|(m, v, _)| (m, v))
}

/// Percentile with linear interpolation between order statistics (inclusive convention).
pub fn percentile<F: Real>(sorted: &[F], pct: F) -> F {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    let pos = pct / F::lit(100.0) * F::from_usize_lossy(n - 1);
    let lo = pos.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let frac = pos - F::from_usize_lossy(lo);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Nearest-neighbour distance (Euclidean, brute force) for every row.
pub fn nearest_neighbour_distances<F: Real>(rows: &[Vec<F>]) -> Vec<F> {
    rows.iter()
        .enumerate()
        .map(|(i, a)| {
            rows.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| {
                    a.iter()
                        .zip(b)
                        .map(|(&x, &y)| (x - y) * (x - y))
                        .fold(F::zero(), |s, v| s + v)
                })
                .fold(F::infinity(), F::min)
                .sqrt()
        })
        .collect()
}

/// Variance floor: square of the smallest integer percentile (1..=100) of the
/// nearest-neighbour distances that is strictly positive.
pub fn compute_variance_floor<F: Real>(rows: &[Vec<F>]) -> Result<F> {
    if rows.len() < 2 {
        return Err(SpnError::TooFewRows { needed: 2, got: rows.len() });
    }
    let mut d = nearest_neighbour_distances(rows);
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    (1..=100)
        .map(|p| percentile(&d, F::from_usize_lossy(p)))
        .find(|&v| v > F::zero())
        .map(|v| v * v)
        .ok_or(SpnError::DegenerateData)
}
