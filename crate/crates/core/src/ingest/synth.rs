//! Synthetic markets with known conditional return distributions.
//!
//! Each stock follows one of three daily log-return processes. Intraday
//! highs/lows come from a discretised Brownian bridge over the day whose total
//! variance equals that day's conditional variance and whose endpoint is the
//! realised log return, so intraday ranges are consistent with daily
//! volatility.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::panel::{DailyBar, IntradayDay, IntradayFragment, MarketPanel};
use super::split::weekday_calendar;
use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReturnProcess {
    /// i.i.d. N(0, sigma²) log returns.
    Constant { sigma: f64 },
    /// Zero-mean GARCH(1,1) innovations ε in units of `scale`:
    /// `r = scale·ε`, `σ²ₜ = ω + α ε²ₜ₋₁ + β σ²ₜ₋₁`.
    Garch {
        omega: f64,
        alpha: f64,
        beta: f64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// Each day an independent regime is drawn by weight.
    Mixture {
        weights: Vec<f64>,
        means: Vec<f64>,
        stds: Vec<f64>,
    },
}

fn default_scale() -> f64 {
    0.01
}

impl ReturnProcess {
    pub fn validate(&self) -> Result<()> {
        match self {
            ReturnProcess::Constant { sigma } => {
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(Error::Config(format!("constant sigma {sigma} must be ≥ 0")));
                }
            }
            ReturnProcess::Garch {
                omega,
                alpha,
                beta,
                scale,
            } => {
                if !(*omega > 0.0 && *alpha >= 0.0 && *beta >= 0.0 && *scale > 0.0) {
                    return Err(Error::Config("garch needs ω > 0, α, β ≥ 0, scale > 0".into()));
                }
                if alpha + beta >= 1.0 {
                    return Err(Error::Config(format!(
                        "garch α+β = {} ≥ 1 is not stationary",
                        alpha + beta
                    )));
                }
            }
            ReturnProcess::Mixture {
                weights,
                means,
                stds,
            } => {
                GaussianMixture::new(weights.clone(), means.clone(), stds.clone())?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StockGroup {
    /// Codes are `{prefix}{index:03}`.
    pub prefix: String,
    pub count: usize,
    pub process: ReturnProcess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub start_date: NaiveDate,
    pub days: usize,
    /// Intraday intervals per day; 0 disables intraday bars.
    pub intervals_per_day: u32,
    /// Brownian substeps per intraday interval.
    pub substeps: u32,
    pub initial_price: f64,
    pub shares_outstanding: f64,
    pub base_volume: f64,
    pub groups: Vec<StockGroup>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            start_date: NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
            days: 300,
            intervals_per_day: 48,
            substeps: 8,
            initial_price: 10.0,
            shares_outstanding: 1e8,
            base_volume: 1e6,
            groups: vec![StockGroup {
                prefix: "S".into(),
                count: 3,
                process: ReturnProcess::Garch {
                    omega: 0.05,
                    alpha: 0.10,
                    beta: 0.85,
                    scale: 0.01,
                },
            }],
        }
    }
}

/// A generated panel with the true conditional log-return distribution of
/// every (code, date) given information up to the previous day.
#[derive(Debug, Clone)]
pub struct SyntheticMarket {
    pub panel: MarketPanel,
    pub truth: BTreeMap<String, BTreeMap<NaiveDate, GaussianMixture>>,
    /// Group index of each code.
    pub groups: BTreeMap<String, usize>,
}

impl SyntheticMarket {
    pub fn truth(&self, code: &str, date: NaiveDate) -> Option<&GaussianMixture> {
        self.truth.get(code)?.get(&date)
    }
}

/// Simulates `n` GARCH(1,1) innovations; returns `(ε, σ²)` with σ²₀ at the
/// unconditional variance.
pub fn simulate_garch<R: Rng + ?Sized>(
    omega: f64,
    alpha: f64,
    beta: f64,
    n: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut eps = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n);
    let mut s2 = omega / (1.0 - alpha - beta);
    let mut prev_eps2 = s2;
    for t in 0..n {
        if t > 0 {
            s2 = omega + alpha * prev_eps2 + beta * s2;
        }
        let z: f64 = StandardNormal.sample(rng);
        let e = s2.sqrt() * z;
        eps.push(e);
        var.push(s2);
        prev_eps2 = e * e;
    }
    (eps, var)
}

pub fn generate_synthetic_market(spec: &SynthSpec, seed_value: u64) -> Result<SyntheticMarket> {
    if spec.days < 2 {
        return Err(Error::Config("synthetic market needs at least 2 days".into()));
    }
    if !(spec.initial_price > 0.0) {
        return Err(Error::Config("initial_price must be > 0".into()));
    }
    if spec.intervals_per_day > 0 && spec.substeps == 0 {
        return Err(Error::Config("substeps must be ≥ 1".into()));
    }
    for g in &spec.groups {
        g.process.validate()?;
    }
    let calendar = weekday_calendar(spec.start_date, spec.days);
    let mut bars = Vec::new();
    let mut fragment = IntradayFragment::new();
    let mut truth = BTreeMap::new();
    let mut groups = BTreeMap::new();
    let mut stock_index = 0u64;
    for (gi, group) in spec.groups.iter().enumerate() {
        for k in 0..group.count {
            let code = format!("{}{k:03}", group.prefix);
            let mut rng = seed::rng(seed::derive_indexed(seed_value, "synth-stock", stock_index));
            stock_index += 1;
            let (returns, dists) = simulate_returns(&group.process, spec.days, &mut rng)?;
            let mut stock_truth = BTreeMap::new();
            let mut prev_close = spec.initial_price;
            for (t, (&r, dist)) in returns.iter().zip(&dists).enumerate() {
                let date = calendar[t];
                let day_sd = dist.volatility();
                let open = prev_close;
                let path = intraday_path(r, day_sd, spec, &mut rng);
                let close = open * r.exp();
                let (mut high, mut low) = (open.max(close), open.min(close));
                if let Some(intervals) = &path {
                    for &(hi, lo) in intervals {
                        high = high.max(open * hi.exp());
                        low = low.min(open * lo.exp());
                    }
                    let day = IntradayDay {
                        intervals: intervals
                            .iter()
                            .enumerate()
                            .map(|(i, &(hi, lo))| ((i + 1) as u32, open * hi.exp(), open * lo.exp()))
                            .collect(),
                    };
                    fragment.entry(code.clone()).or_default().insert(date, day);
                }
                let noise: f64 = StandardNormal.sample(&mut rng);
                let rel = if day_sd > 0.0 { r.abs() / day_sd } else { 0.0 };
                let volume = (spec.base_volume * (0.25 * noise).exp() * (1.0 + 0.5 * rel)).round();
                bars.push(DailyBar {
                    date,
                    code: code.clone(),
                    open,
                    high,
                    low,
                    close,
                    volume,
                    preclose: prev_close,
                    turnover: None,
                    shares_outstanding: Some(spec.shares_outstanding),
                });
                stock_truth.insert(date, dist.clone());
                prev_close = close;
            }
            truth.insert(code.clone(), stock_truth);
            groups.insert(code, gi);
        }
    }
    let panel = MarketPanel::new(bars)?;
    let (panel, dropped) = panel.with_intraday(fragment);
    debug_assert!(dropped.is_empty());
    Ok(SyntheticMarket {
        panel,
        truth,
        groups,
    })
}

fn simulate_returns<R: Rng + ?Sized>(
    process: &ReturnProcess,
    n: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<GaussianMixture>)> {
    Ok(match process {
        ReturnProcess::Constant { sigma } => {
            let dist = if *sigma > 0.0 {
                GaussianMixture::single(0.0, *sigma)?
            } else {
                // point mass, represented with a vanishing std
                GaussianMixture::single(0.0, f64::MIN_POSITIVE)?
            };
            let r = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    sigma * z
                })
                .collect();
            (r, vec![dist; n])
        }
        ReturnProcess::Garch {
            omega,
            alpha,
            beta,
            scale,
        } => {
            let (eps, var) = simulate_garch(*omega, *alpha, *beta, n, rng);
            let r = eps.iter().map(|e| e * scale).collect();
            let d = var
                .iter()
                .map(|v| GaussianMixture::single(0.0, v.sqrt() * scale))
                .collect::<Result<Vec<_>>>()?;
            (r, d)
        }
        ReturnProcess::Mixture {
            weights,
            means,
            stds,
        } => {
            let dist = GaussianMixture::new(weights.clone(), means.clone(), stds.clone())?;
            (dist.sample_with(n, rng), vec![dist; n])
        }
    })
}

/// Per-interval `(max, min)` of the log price relative to the open, or `None`
/// when intraday generation is disabled.
fn intraday_path<R: Rng + ?Sized>(
    log_return: f64,
    day_sd: f64,
    spec: &SynthSpec,
    rng: &mut R,
) -> Option<Vec<(f64, f64)>> {
    if spec.intervals_per_day == 0 {
        return None;
    }
    let steps = (spec.intervals_per_day * spec.substeps) as usize;
    let step_sd = day_sd / (steps as f64).sqrt();
    let mut walk = Vec::with_capacity(steps + 1);
    walk.push(0.0);
    let mut w = 0.0;
    for _ in 0..steps {
        let z: f64 = StandardNormal.sample(rng);
        w += step_sd * z;
        walk.push(w);
    }
    // pin the endpoint to the realised return
    let end = walk[steps];
    for (i, x) in walk.iter_mut().enumerate() {
        *x += (log_return - end) * i as f64 / steps as f64;
    }
    let sub = spec.substeps as usize;
    Some(
        (0..spec.intervals_per_day as usize)
            .map(|k| {
                let seg = &walk[k * sub..=(k + 1) * sub];
                let hi = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = seg.iter().copied().fold(f64::INFINITY, f64::min);
                (hi, lo)
            })
            .collect(),
    )
}
