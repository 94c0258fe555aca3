//! Binned outcome distributions: grid, standardization, Gaussian bin targets,
//! histogram cross-entropy and discrete CRPS.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 1024;
pub const DEFAULT_LO: f64 = -10.0;
pub const DEFAULT_HI: f64 = 10.0;
pub const DEFAULT_TARGET_STD: f64 = 0.01;
pub const LOG_FLOOR: f64 = 1e-12;
pub const DEGENERATE_STD: f64 = 1e-12;

/// `L` uniform bins on `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    pub lo: f64,
    pub hi: f64,
    pub edges: Vec<f64>,
}

impl BinGrid {
    pub fn new(bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("bad bin grid: {bins} bins on [{lo}, {hi}]")));
        }
        let w = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|l| lo + w * l as f64).collect();
        edges[bins] = hi;
        Ok(BinGrid { lo, hi, edges })
    }

    pub fn standard(bins: usize) -> Self {
        BinGrid::new(bins, DEFAULT_LO, DEFAULT_HI).expect("default grid is valid")
    }

    pub fn bin_count(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bin_count() as f64
    }

    pub fn center(&self, l: usize) -> f64 {
        0.5 * (self.edges[l] + self.edges[l + 1])
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bin_count()).map(|l| self.center(l)).collect()
    }

    /// Bin containing `y`, clamped to the edge bins.
    pub fn bin_of(&self, y: f64) -> usize {
        let l = ((y - self.lo) / self.width()).floor();
        if l.is_nan() || l < 0.0 {
            0
        } else {
            (l as usize).min(self.bin_count() - 1)
        }
    }

    /// Checks the edge invariants; the error names the violated property.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.edges.len() < 2 {
            return Err("BinGrid size".into());
        }
        if self.edges.windows(2).any(|p| !(p[1] > p[0])) {
            return Err("BinGrid monotonicity".into());
        }
        let w = self.width();
        if self.edges.windows(2).any(|p| ((p[1] - p[0]) - w).abs() > 1e-9 * w.max(1.0)) {
            return Err("BinGrid uniform width".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramDistribution {
    pub probs: Vec<f64>,
}

impl HistogramDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument("histogram probabilities must be finite and >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("histogram sums to {total}")));
        }
        Ok(HistogramDistribution { probs })
    }

    pub fn uniform(bins: usize) -> Self {
        HistogramDistribution { probs: vec![1.0 / bins as f64; bins] }
    }

    pub fn one_hot(bins: usize, at: usize) -> Self {
        let mut probs = vec![0.0; bins];
        probs[at] = 1.0;
        HistogramDistribution { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Mean/std of context outcomes. A near-constant context is flagged
/// `degenerate`: `apply` then maps everything to 0 and `invert` to the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
    pub degenerate: bool,
}

impl Standardizer {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument("standardizer needs at least two values".into()));
        }
        let mean = crate::stats::mean(values);
        let std = crate::stats::pop_std(values);
        Ok(Standardizer { mean, std, degenerate: !(std >= DEGENERATE_STD) })
    }

    pub fn identity() -> Self {
        Standardizer { mean: 0.0, std: 1.0, degenerate: false }
    }

    #[inline]
    pub fn apply(&self, y: f64) -> f64 {
        if self.degenerate {
            0.0
        } else {
            (y - self.mean) / self.std
        }
    }

    #[inline]
    pub fn invert(&self, z: f64) -> f64 {
        if self.degenerate {
            self.mean
        } else {
            z * self.std + self.mean
        }
    }
}

/// `P(Z <= x)` for a standard normal.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(Z > x)` for a standard normal.
#[inline]
fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Mass of `N(mu, sigma^2)` in each bin, with the tails beyond the grid added
/// to the first and last bins.
pub fn gaussian_bin_mass(mu: f64, sigma: f64, grid: &BinGrid) -> HistogramDistribution {
    assert!(sigma > 0.0, "sigma must be positive");
    let bins = grid.bin_count();
    // Work with the lower tail left of mu and the upper tail right of it so
    // that each difference is taken between small numbers.
    let below = |e: f64| normal_cdf((e - mu) / sigma);
    let above = |e: f64| normal_sf((e - mu) / sigma);
    let mut probs = Vec::with_capacity(bins);
    for l in 0..bins {
        let a = grid.edges[l];
        let b = grid.edges[l + 1];
        let p = if l == 0 && l == bins - 1 {
            1.0
        } else if l == 0 {
            below(b)
        } else if l == bins - 1 {
            above(a)
        } else if b <= mu {
            below(b) - below(a)
        } else if a >= mu {
            above(a) - above(b)
        } else {
            1.0 - below(a) - above(b)
        };
        probs.push(p.max(0.0));
    }
    HistogramDistribution { probs }
}

/// `-sum target * log(max(q, 1e-12))`.
pub fn histogram_loss(q: &HistogramDistribution, target: &HistogramDistribution) -> f64 {
    assert_eq!(q.len(), target.len());
    -q.probs
        .iter()
        .zip(&target.probs)
        .map(|(&p, &t)| if t == 0.0 { 0.0 } else { t * p.max(LOG_FLOOR).ln() })
        .sum::<f64>()
}

/// Derivative of [`histogram_loss`] with respect to each `q[l]`.
pub fn histogram_loss_grad(q: &HistogramDistribution, target: &HistogramDistribution) -> Vec<f64> {
    q.probs
        .iter()
        .zip(&target.probs)
        .map(|(&p, &t)| if p > LOG_FLOOR { -t / p } else { 0.0 })
        .collect()
}

pub fn histogram_mean(q: &HistogramDistribution, grid: &BinGrid) -> f64 {
    q.probs.iter().enumerate().map(|(l, p)| p * grid.center(l)).sum()
}

/// Discrete CRPS: `sum_l (F(e_{l+1}) - 1{y <= e_{l+1}})^2 * width`.
pub fn crps_loss(q: &HistogramDistribution, grid: &BinGrid, y_true: f64) -> f64 {
    let w = grid.width();
    let mut cdf = 0.0;
    let mut total = 0.0;
    for (l, p) in q.probs.iter().enumerate() {
        cdf += p;
        let step = if y_true <= grid.edges[l + 1] { 1.0 } else { 0.0 };
        total += (cdf - step).powi(2) * w;
    }
    total
}

/// Derivative of [`crps_loss`] with respect to each `q[k]`.
pub fn crps_loss_grad(q: &HistogramDistribution, grid: &BinGrid, y_true: f64) -> Vec<f64> {
    let w = grid.width();
    let bins = q.len();
    let mut cdf = 0.0;
    let mut resid = Vec::with_capacity(bins);
    for (l, p) in q.probs.iter().enumerate() {
        cdf += p;
        let step = if y_true <= grid.edges[l + 1] { 1.0 } else { 0.0 };
        resid.push(2.0 * (cdf - step) * w);
    }
    let mut grad = vec![0.0; bins];
    let mut acc = 0.0;
    for k in (0..bins).rev() {
        acc += resid[k];
        grad[k] = acc;
    }
    grad
}
