//! Browser bindings for a static demo page. Every exported function returns a
//! JSON string; the `*_report` functions behind them are plain Rust so they can
//! be tested natively.

use serde::Serialize;
use volmix::eval::{crps_gaussian, crps_mc, dm_test, mse_losses, qlike_losses, significance_stars};
use volmix::garch::{self, FitOptions, GarchSpec, Variant};
use volmix::ingest::simulate_garch;
use volmix::{seed, GaussianMixture};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct MixtureReport {
    pub mean: f64,
    pub variance: f64,
    pub volatility: f64,
    pub crps: f64,
    /// Closed-form CRPS when the mixture has a single component.
    pub crps_exact: Option<f64>,
    pub draws: usize,
    /// `(x, density)` on an even grid covering ±4 standard deviations.
    pub density: Vec<(f64, f64)>,
}

pub fn mixture_report(
    weights: &[f64],
    means: &[f64],
    stds: &[f64],
    outcome: f64,
    draws: usize,
    seed_value: u64,
) -> Result<MixtureReport, String> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err("weights must sum to a positive number".into());
    }
    let w: Vec<f64> = weights.iter().map(|x| x / total).collect();
    let mix = GaussianMixture::new(w, means.to_vec(), stds.to_vec()).map_err(|e| e.to_string())?;
    let crps = crps_mc(&mix, outcome, draws, seed_value).map_err(|e| e.to_string())?;
    let crps_exact = (mix.n_components() == 1).then(|| crps_gaussian(mix.means()[0], mix.stds()[0], outcome));
    let (lo, hi) = (mix.mean() - 4.0 * mix.volatility(), mix.mean() + 4.0 * mix.volatility());
    let density = (0..=200)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / 200.0;
            (x, mix.pdf(x))
        })
        .collect();
    Ok(MixtureReport {
        mean: mix.mean(),
        variance: mix.variance(),
        volatility: mix.volatility(),
        crps,
        crps_exact,
        draws,
        density,
    })
}

#[derive(Debug, Serialize)]
pub struct VariantFit {
    pub variant: &'static str,
    pub omega: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub delta: f64,
    pub persistence: f64,
    pub log_likelihood: f64,
    pub converged: bool,
}

#[derive(Debug, Serialize)]
pub struct GarchReport {
    pub returns: Vec<f64>,
    pub true_volatility: Vec<f64>,
    /// Conditional volatility of the plain GARCH fit.
    pub fitted_volatility: Vec<f64>,
    pub fits: Vec<VariantFit>,
}

/// Simulates a zero-mean GARCH(1,1) path and fits every variant to it.
pub fn garch_report(omega: f64, alpha: f64, beta: f64, days: usize, seed_value: u64) -> Result<GarchReport, String> {
    if !(omega > 0.0 && alpha >= 0.0 && beta >= 0.0 && alpha + beta < 1.0) {
        return Err("need ω > 0, α, β ≥ 0 and α + β < 1".into());
    }
    if !(250..=20_000).contains(&days) {
        return Err("days must be between 250 and 20000".into());
    }
    let mut rng = seed::rng(seed_value);
    let (returns, variance) = simulate_garch(omega, alpha, beta, days, &mut rng);
    let opts = FitOptions::default();
    let mut fits = Vec::new();
    let mut fitted_volatility = Vec::new();
    for v in Variant::ALL {
        let fit = garch::fit(&returns, GarchSpec::new(v), &opts).map_err(|e| e.to_string())?;
        if v == Variant::Garch {
            fitted_volatility = fit.variance.iter().map(|s| s.sqrt()).collect();
        }
        let p = fit.params;
        fits.push(VariantFit {
            variant: v.name(),
            omega: p.omega,
            alpha: p.alpha,
            gamma: p.gamma,
            beta: p.beta,
            delta: p.delta,
            persistence: fit.persistence,
            log_likelihood: fit.log_likelihood,
            converged: fit.converged,
        });
    }
    Ok(GarchReport {
        true_volatility: variance.iter().map(|s| s.sqrt()).collect(),
        returns,
        fitted_volatility,
        fits,
    })
}

#[derive(Debug, Serialize)]
pub struct ComparisonReport {
    pub n: usize,
    pub mse: [f64; 2],
    pub qlike: [f64; 2],
    /// Diebold-Mariano statistic of A against B; negative favours A.
    pub dm_mse: f64,
    pub dm_qlike: f64,
    pub stars_mse: &'static str,
    pub stars_qlike: &'static str,
}

/// Rows of `realized, forecast_a, forecast_b` volatilities separated by
/// commas, tabs or spaces. Lines starting with `#` and a non-numeric header
/// are skipped.
pub fn parse_rows(text: &str) -> Result<[Vec<f64>; 3], String> {
    let mut cols = [Vec::new(), Vec::new(), Vec::new()];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.len() == 3 => {
                for (c, x) in cols.iter_mut().zip(v) {
                    c.push(x);
                }
            }
            Err(_) if cols[0].is_empty() => continue,
            _ => return Err(format!("line {}: expected three numbers", i + 1)),
        }
    }
    Ok(cols)
}

pub fn comparison_report(text: &str, lag: usize) -> Result<ComparisonReport, String> {
    let [real, a, b] = parse_rows(text)?;
    let err = |e: volmix::Error| e.to_string();
    let (mse_a, mse_b) = (mse_losses(&a, &real).map_err(err)?, mse_losses(&b, &real).map_err(err)?);
    let (ql_a, ql_b) = (qlike_losses(&a, &real).map_err(err)?, qlike_losses(&b, &real).map_err(err)?);
    let dm_mse = dm_test(&mse_a, &mse_b, lag).map_err(err)?;
    let dm_qlike = dm_test(&ql_a, &ql_b, lag).map_err(err)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ComparisonReport {
        n: real.len(),
        mse: [mean(&mse_a), mean(&mse_b)],
        qlike: [mean(&ql_a), mean(&ql_b)],
        dm_mse,
        dm_qlike,
        stars_mse: significance_stars(dm_mse),
        stars_qlike: significance_stars(dm_qlike),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = scoreMixture)]
pub fn score_mixture(
    weights: &[f64],
    means: &[f64],
    stds: &[f64],
    outcome: f64,
    draws: usize,
    seed_value: u32,
) -> Result<String, JsError> {
    to_js(mixture_report(weights, means, stds, outcome, draws, seed_value as u64))
}

#[wasm_bindgen(js_name = fitGarch)]
pub fn fit_garch(omega: f64, alpha: f64, beta: f64, days: usize, seed_value: u32) -> Result<String, JsError> {
    to_js(garch_report(omega, alpha, beta, days, seed_value as u64))
}

#[wasm_bindgen(js_name = compareForecasts)]
pub fn compare_forecasts(text: &str, lag: usize) -> Result<String, JsError> {
    to_js(comparison_report(text, lag))
}
