//! One-dimensional Gaussian mixtures, the predictive distribution object.
//!
//! A mixture is `Σ wᵢ N(μᵢ, σᵢ)` with weights on the simplex. The moment
//! functions follow from the law of total variance:
//!
//! ```text
//! E[X]   = Σ wᵢ μᵢ
//! E[X²]  = Σ wᵢ (μᵢ² + σᵢ²)
//! Var[X] = E[X²] − E[X]²
//! ```

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

const WEIGHT_TOL: f64 = 1e-9;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF via `erfc` (libm port of the fdlibm routine, < 1 ulp).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture", into = "RawMixture")]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl TryFrom<RawMixture> for GaussianMixture {
    type Error = Error;
    fn try_from(raw: RawMixture) -> Result<Self> {
        GaussianMixture::new(raw.weights, raw.means, raw.stds)
    }
}

impl From<GaussianMixture> for RawMixture {
    fn from(m: GaussianMixture) -> Self {
        RawMixture {
            weights: m.weights,
            means: m.means,
            stds: m.stds,
        }
    }
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if means.len() != n || stds.len() != n {
            return Err(Error::Shape(format!(
                "mixture lengths differ: {} weights, {} means, {} stds",
                n,
                means.len(),
                stds.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("mixture weights must be finite and ≥ 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("mixture means must be finite".into()));
        }
        if stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("mixture stds must be finite and > 0".into()));
        }
        Ok(Self {
            weights,
            means,
            stds,
        })
    }

    /// Build from unnormalised non-negative weights, flooring stds at `std_floor`.
    pub fn from_raw(weights: &[f64], means: &[f64], stds: &[f64], std_floor: f64) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Numerical(format!("weight total {total}")));
        }
        GaussianMixture::new(
            weights.iter().map(|w| w / total).collect(),
            means.to_vec(),
            stds.iter().map(|s| s.max(std_floor)).collect(),
        )
    }

    pub fn single(mean: f64, std: f64) -> Result<Self> {
        GaussianMixture::new(vec![1.0], vec![mean], vec![std])
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    fn components(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((&w, &m), &s)| (w, m, s))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.components()
            .map(|(w, m, s)| w * normal_pdf((x - m) / s) / s)
            .sum()
    }

    /// Log density, evaluated with log-sum-exp over components.
    pub fn log_pdf(&self, y: f64) -> f64 {
        let terms: Vec<f64> = self
            .components()
            .filter(|(w, _, _)| *w > 0.0)
            .map(|(w, m, s)| {
                let z = (y - m) / s;
                w.ln() - s.ln() - LN_SQRT_2PI - 0.5 * z * z
            })
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        self.components()
            .map(|(w, m, s)| w * normal_cdf((y - m) / s))
            .sum()
    }

    /// Inverse CDF by bisection; `p` is clamped to (0, 1).
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(1e-15, 1.0 - 1e-15);
        let spread = self.stds.iter().copied().fold(0.0, f64::max);
        let mut lo = self.means.iter().copied().fold(f64::INFINITY, f64::min) - 40.0 * spread;
        let mut hi = self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 40.0 * spread;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * mid.abs().max(1e-300) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn mean(&self) -> f64 {
        self.components().map(|(w, m, _)| w * m).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.components().map(|(w, m, s)| w * (m * m + s * s)).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        (self.second_moment() - mean * mean).max(0.0)
    }

    /// Predicted volatility: square root of the mixture variance.
    pub fn volatility(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Multiply the random variable by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> GaussianMixture {
        GaussianMixture {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m * factor).collect(),
            stds: self.stds.iter().map(|s| s * factor).collect(),
        }
    }

    /// One draw: categorical component by weight, then a Gaussian draw.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = i;
                break;
            }
        }
        let z: f64 = StandardNormal.sample(rng);
        self.means[pick] + self.stds[pick] * z
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<f64> {
        (0..k).map(|_| self.draw(rng)).collect()
    }

    /// `k` draws from a ChaCha stream seeded with `seed`.
    pub fn sample(&self, k: usize, seed: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed);
        self.sample_with(k, &mut rng)
    }
}
