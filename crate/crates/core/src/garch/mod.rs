//! Zero-mean GARCH(1,1)-family models with Gaussian innovations.
//!
//! All variants share one recursion on `s_t = σ_t^δ`:
//! `s_t = ω + news(ε_{t−1}) + β·s_{t−1}`, where
//!
//! | variant | δ | news(ε) |
//! |---|---|---|
//! | GARCH | 2 | `α ε²` |
//! | GJR | 2 | `(α + γ·1{ε<0}) ε²` |
//! | TARCH | 1 | `α (|ε| − γ ε)` |
//! | APARCH | free | `α (|ε| − γ ε)^δ` |
//!
//! The recursion starts from the sample variance. Estimation standardises the
//! series to unit second moment, so `α`, `β`, `γ` and `δ` are unchanged by a
//! rescaling of the input and `ω` scales with `scale^δ`.

mod optimize;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    Garch,
    Gjr,
    Tarch,
    Aparch,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Garch, Variant::Gjr, Variant::Tarch, Variant::Aparch];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Garch => "GARCH",
            Variant::Gjr => "GJR",
            Variant::Tarch => "TARCH",
            Variant::Aparch => "APARCH",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "").as_str() {
            "GARCH" => Ok(Variant::Garch),
            "GJR" | "GJRGARCH" => Ok(Variant::Gjr),
            "TARCH" => Ok(Variant::Tarch),
            "APARCH" => Ok(Variant::Aparch),
            _ => Err(Error::Config(format!("unknown GARCH variant {s}"))),
        }
    }

    fn has_leverage(self) -> bool {
        self != Variant::Garch
    }
}

/// Model specification: `p = q = 1`, Gaussian innovations, zero mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GarchSpec {
    pub variant: Variant,
}

impl GarchSpec {
    pub fn new(variant: Variant) -> Self {
        Self { variant }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub omega: f64,
    pub alpha: f64,
    /// Leverage (0 for plain GARCH).
    pub gamma: f64,
    pub beta: f64,
    /// Power of the recursion (2 for GARCH/GJR, 1 for TARCH).
    pub delta: f64,
}

impl GarchParams {
    pub fn garch(omega: f64, alpha: f64, beta: f64) -> Self {
        Self { omega, alpha, gamma: 0.0, beta, delta: 2.0 }
    }

    fn to_vec(self, v: Variant) -> Vec<f64> {
        let mut out = vec![self.omega, self.alpha];
        if v.has_leverage() {
            out.push(self.gamma);
        }
        out.push(self.beta);
        if v == Variant::Aparch {
            out.push(self.delta);
        }
        out
    }

    fn from_vec(v: Variant, x: &[f64]) -> Self {
        let (gamma, beta) = if v.has_leverage() { (x[2], x[3]) } else { (0.0, x[2]) };
        let delta = match v {
            Variant::Garch | Variant::Gjr => 2.0,
            Variant::Tarch => 1.0,
            Variant::Aparch => x[4],
        };
        Self { omega: x[0], alpha: x[1], gamma, beta, delta }
    }

    /// `E[news(z)]` for a standard normal `z`, divided by `α`, in `σ^δ` units.
    fn news_moment(self, v: Variant) -> f64 {
        match v {
            Variant::Garch => 1.0,
            Variant::Gjr => 1.0 + 0.5 * self.gamma / self.alpha.max(f64::MIN_POSITIVE),
            Variant::Tarch | Variant::Aparch => {
                let d = self.delta;
                ((1.0 - self.gamma).powf(d) + (1.0 + self.gamma).powf(d)) * 2f64.powf(d / 2.0 - 1.0)
                    * libm::tgamma((d + 1.0) / 2.0)
                    / std::f64::consts::PI.sqrt()
            }
        }
    }

    /// Persistence: `α+β` (GARCH), `α+β+γ/2` (GJR), `α·E(|z|−γz)^δ + β` otherwise.
    pub fn persistence(self, v: Variant) -> f64 {
        match v {
            Variant::Garch => self.alpha + self.beta,
            Variant::Gjr => self.alpha + self.beta + 0.5 * self.gamma,
            _ => self.alpha * self.news_moment(v) + self.beta,
        }
    }

    /// Inside the admissible region with a stationary recursion.
    pub fn admissible(self, v: Variant) -> bool {
        let base = self.omega > 0.0 && self.alpha >= 0.0 && self.beta >= 0.0 && self.omega.is_finite();
        let lev = match v {
            Variant::Garch => true,
            Variant::Gjr => self.alpha + self.gamma >= 0.0,
            Variant::Tarch => self.gamma.abs() < 1.0,
            Variant::Aparch => self.gamma.abs() < 1.0 && (0.5..=3.0).contains(&self.delta),
        };
        base && lev && self.persistence(v) < 1.0
    }

    fn news(self, v: Variant, e: f64) -> f64 {
        match v {
            Variant::Garch => self.alpha * e * e,
            Variant::Gjr => (self.alpha + if e < 0.0 { self.gamma } else { 0.0 }) * e * e,
            Variant::Tarch => self.alpha * (e.abs() - self.gamma * e),
            Variant::Aparch => self.alpha * (e.abs() - self.gamma * e).powf(self.delta),
        }
    }
}

/// Conditional variances `σ²_0 … σ²_n` for `returns` of length `n`; the last
/// entry is the one-step-ahead forecast after the final return.
pub fn variance_path(v: Variant, p: GarchParams, returns: &[f64], initial_variance: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(returns.len() + 1);
    let (d, half) = (p.delta, p.delta / 2.0);
    let mut s = initial_variance.powf(half);
    out.push(initial_variance);
    for &e in returns {
        s = p.omega + p.news(v, e) + p.beta * s;
        out.push(if d == 2.0 { s } else { s.max(0.0).powf(2.0 / d) });
    }
    out
}

fn neg_log_likelihood(v: Variant, p: GarchParams, returns: &[f64], initial_variance: f64) -> f64 {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let (d, half) = (p.delta, p.delta / 2.0);
    let mut s = initial_variance.powf(half);
    let mut total = 0.0;
    for &e in returns {
        let var = if d == 2.0 { s } else { s.powf(2.0 / d) };
        if !(var > 0.0 && var.is_finite()) {
            return f64::INFINITY;
        }
        total += 0.5 * (ln_2pi + var.ln() + e * e / var);
        s = p.omega + p.news(v, e) + p.beta * s;
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub min_obs: usize,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { min_obs: 250, max_iter: 500, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchFit {
    pub variant: Variant,
    /// Estimates in the units of the input returns.
    pub params: GarchParams,
    /// Asymptotic standard errors from the inverse Hessian, when it is
    /// positive definite.
    pub std_errors: Option<GarchParams>,
    pub log_likelihood: f64,
    pub n_obs: usize,
    pub persistence: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Index of the starting point that produced the estimate.
    pub start: usize,
    /// Second moment of the estimation sample; the recursion's starting value.
    pub initial_variance: f64,
    /// In-sample conditional variances, one per observation.
    pub variance: Vec<f64>,
}

impl GarchFit {
    /// Conditional variances for `returns` under the fitted parameters,
    /// starting from the estimation sample's variance. Entry `t` uses
    /// information up to `t − 1`; the last entry forecasts the next day.
    pub fn filter(&self, returns: &[f64]) -> Vec<f64> {
        variance_path(self.variant, self.params, returns, self.initial_variance)
    }
}

const STARTS: [(f64, f64); 3] = [(0.05, 0.93), (0.10, 0.80), (0.20, 0.50)];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

/// Open-interval bounds of each free parameter after `ω`.
fn bounds(v: Variant) -> Vec<(f64, f64)> {
    let unit = (0.0, 1.0);
    match v {
        Variant::Garch => vec![unit, unit],
        Variant::Gjr => vec![unit, (-1.0, 1.0), unit],
        Variant::Tarch => vec![unit, (-1.0, 1.0), unit],
        Variant::Aparch => vec![unit, (-1.0, 1.0), unit, (0.5, 3.0)],
    }
}

fn to_natural(v: Variant, u: &[f64]) -> Vec<f64> {
    let mut x = vec![u[0].exp()];
    for (ui, (lo, hi)) in u[1..].iter().zip(bounds(v)) {
        x.push(lo + (hi - lo) * sigmoid(*ui));
    }
    x
}

fn to_unbounded(v: Variant, x: &[f64]) -> Vec<f64> {
    let mut u = vec![x[0].ln()];
    for (xi, (lo, hi)) in x[1..].iter().zip(bounds(v)) {
        u.push(logit((xi - lo) / (hi - lo)));
    }
    u
}

fn start_point(v: Variant, alpha: f64, beta: f64) -> GarchParams {
    let delta = match v {
        Variant::Tarch => 1.0,
        _ => 2.0,
    };
    let mut p = GarchParams { omega: 1.0, alpha, gamma: 0.0, beta, delta };
    p.omega = (1.0 - p.persistence(v)).max(1e-3);
    p
}

/// Maximum-likelihood fit over three starting points, keeping the best.
pub fn fit(returns: &[f64], spec: GarchSpec, opts: &FitOptions) -> Result<GarchFit> {
    let v = spec.variant;
    if returns.len() < opts.min_obs {
        return Err(Error::History(format!(
            "{} returns, {} needs at least {}",
            returns.len(),
            v.name(),
            opts.min_obs
        )));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::Numerical("non-finite return".into()));
    }
    let n = returns.len();
    let second = returns.iter().map(|r| r * r).sum::<f64>() / n as f64;
    if !(second > 0.0) {
        return Err(Error::Numerical("returns have zero variance".into()));
    }
    let scale = second.sqrt();
    let z: Vec<f64> = returns.iter().map(|r| r / scale).collect();

    let objective = |u: &[f64]| {
        let p = GarchParams::from_vec(v, &to_natural(v, u));
        if !p.admissible(v) {
            return f64::INFINITY;
        }
        neg_log_likelihood(v, p, &z, 1.0) / n as f64
    };
    let mut best: Option<(optimize::Minimum, usize)> = None;
    for (k, &(a, b)) in STARTS.iter().enumerate() {
        let u0 = to_unbounded(v, &start_point(v, a, b).to_vec(v));
        let m = optimize::bfgs(objective, &u0, opts.max_iter, opts.tolerance);
        if m.value.is_finite() && best.as_ref().is_none_or(|(bm, _)| m.value < bm.value) {
            best = Some((m, k));
        }
    }
    let Some((m, start)) = best else {
        return Err(Error::Numerical(format!("{} fit failed from every start", v.name())));
    };
    let std_params = GarchParams::from_vec(v, &to_natural(v, &m.x));

    let natural = std_params.to_vec(v);
    let total = |x: &[f64]| {
        let p = GarchParams::from_vec(v, x);
        if !p.admissible(v) {
            return f64::INFINITY;
        }
        neg_log_likelihood(v, p, &z, 1.0)
    };
    let omega_scale = scale.powf(std_params.delta);
    let std_errors = optimize::invert(&optimize::hessian(&total, &natural)).and_then(|cov| {
        let se: Vec<f64> = (0..natural.len()).map(|i| cov[i][i].sqrt()).collect();
        if se.iter().all(|s| s.is_finite() && *s > 0.0) {
            let mut p = GarchParams::from_vec(v, &se);
            p.omega *= omega_scale;
            if v != Variant::Aparch {
                p.delta = 0.0;
            }
            if !v.has_leverage() {
                p.gamma = 0.0;
            }
            Some(p)
        } else {
            None
        }
    });

    let params = GarchParams { omega: std_params.omega * omega_scale, ..std_params };
    let mut variance = variance_path(v, params, returns, second);
    variance.pop();
    Ok(GarchFit {
        variant: v,
        params,
        std_errors,
        log_likelihood: -m.value * n as f64 - n as f64 * scale.ln(),
        n_obs: n,
        persistence: params.persistence(v),
        converged: m.converged,
        iterations: m.iterations,
        start,
        initial_variance: second,
        variance,
    })
}

/// Next-day variance after `returns` (the full history, including the
/// estimation sample).
pub fn forecast_one_step(fit: &GarchFit, returns: &[f64]) -> f64 {
    *fit.filter(returns).last().expect("path is never empty")
}

/// Zero-mean Gaussian with the given variance, as a one-component mixture.
pub fn to_predictive_distribution(variance: f64) -> Result<GaussianMixture> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::Numerical(format!("forecast variance {variance}")));
    }
    GaussianMixture::single(0.0, variance.sqrt())
}

/// One row of the fit summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRow<'a> {
    pub code: &'a str,
    pub roll_start: chrono::NaiveDate,
    pub fit: &'a GarchFit,
}

/// `code,roll_start,model,omega,alpha,gamma,beta,delta,se_*,log_likelihood,n_obs,persistence,converged,iterations`.
pub fn write_fit_summary<W: Write>(rows: &[FitRow<'_>], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "code", "roll_start", "model", "omega", "alpha", "gamma", "beta", "delta", "se_omega", "se_alpha",
        "se_gamma", "se_beta", "se_delta", "log_likelihood", "n_obs", "persistence", "converged", "iterations",
    ])?;
    let num = |x: f64| format!("{x:.10e}");
    for r in rows {
        let f = r.fit;
        let p = f.params;
        let se = |g: fn(&GarchParams) -> f64| f.std_errors.as_ref().map(|s| num(g(s))).unwrap_or_default();
        w.write_record([
            r.code.to_string(),
            r.roll_start.to_string(),
            f.variant.name().to_string(),
            num(p.omega),
            num(p.alpha),
            num(p.gamma),
            num(p.beta),
            num(p.delta),
            se(|s| s.omega),
            se(|s| s.alpha),
            se(|s| s.gamma),
            se(|s| s.beta),
            se(|s| s.delta),
            num(f.log_likelihood),
            f.n_obs.to_string(),
            num(f.persistence),
            f.converged.to_string(),
            f.iterations.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<garch fits>", e))
}
