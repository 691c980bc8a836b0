use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gmm::{normal_cdf, normal_pdf, GaussianMixture};
use crate::seed;

fn check_pairs(pred: &[f64], real: &[f64]) -> Result<()> {
    if pred.len() != real.len() {
        return Err(Error::Shape(format!(
            "{} forecasts vs {} realizations",
            pred.len(),
            real.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no forecast pairs".into()));
    }
    if pred.iter().chain(real).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite volatility".into()));
    }
    Ok(())
}

/// Per-sample squared volatility error `(σ − σ̂)²`.
pub fn mse_losses(pred: &[f64], real: &[f64]) -> Result<Vec<f64>> {
    check_pairs(pred, real)?;
    Ok(pred.iter().zip(real).map(|(p, r)| (r - p).powi(2)).collect())
}

/// Per-sample `σ/σ̂ + ln σ̂`.
pub fn qlike_losses(pred: &[f64], real: &[f64]) -> Result<Vec<f64>> {
    check_pairs(pred, real)?;
    if let Some(bad) = pred.iter().find(|p| **p <= 0.0) {
        return Err(Error::Numerical(format!("non-positive predicted volatility {bad}")));
    }
    Ok(pred.iter().zip(real).map(|(p, r)| r / p + p.ln()).collect())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn mse_volatility(pred: &[f64], real: &[f64]) -> Result<f64> {
    mse_losses(pred, real).map(|l| mean(&l))
}

pub fn qlike(pred: &[f64], real: &[f64]) -> Result<f64> {
    qlike_losses(pred, real).map(|l| mean(&l))
}

/// Closed-form CRPS of `N(μ, σ²)` at `x`.
pub fn crps_gaussian(mu: f64, sigma: f64, x: f64) -> f64 {
    let z = (x - mu) / sigma;
    sigma * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - 1.0 / std::f64::consts::PI.sqrt())
}

/// `k` draws from `dist` by Latin-hypercube sampling: one stratified uniform
/// picks the component, an independently permuted stratified uniform gives
/// the standard-normal quantile.
pub fn stratified_draws(dist: &GaussianMixture, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let std_normal = Normal::standard();
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    let mut cumulative = Vec::with_capacity(dist.n_components());
    let mut acc = 0.0;
    for w in dist.weights() {
        acc += w;
        cumulative.push(acc);
    }
    let (means, stds) = (dist.means(), dist.stds());
    (0..k)
        .map(|i| {
            let u1 = (i as f64 + rng.random::<f64>()) / k as f64;
            let u2 = (order[i] as f64 + rng.random::<f64>()) / k as f64;
            let c = cumulative.iter().position(|c| u1 < *c).unwrap_or(cumulative.len() - 1);
            let z = std_normal.inverse_cdf(u2.clamp(1e-300, 1.0 - 1e-16));
            means[c] + stds[c] * z
        })
        .collect()
}

/// Monte-Carlo CRPS `E|X − x| − ½E|X − X′|` from `k` stratified draws, with
/// the second term averaged over all distinct pairs of draws.
pub fn crps_mc(dist: &GaussianMixture, x: f64, k: usize, seed: u64) -> Result<f64> {
    if k < 2 {
        return Err(Error::Config("CRPS needs at least 2 draws".into()));
    }
    let mut rng = seed::rng(seed);
    let mut draws = stratified_draws(dist, k, &mut rng);
    Ok(crps_from_draws(&mut draws, x))
}

/// Sorts `draws` in place.
pub fn crps_from_draws(draws: &mut [f64], x: f64) -> f64 {
    let k = draws.len();
    draws.sort_by(f64::total_cmp);
    let first = draws.iter().map(|d| (d - x).abs()).sum::<f64>() / k as f64;
    // Σ_{i<j} (x_j − x_i) over sorted draws
    let pair_sum: f64 = draws
        .iter()
        .enumerate()
        .map(|(i, d)| (2.0 * i as f64 - (k as f64 - 1.0)) * d)
        .sum();
    let mean_pair = pair_sum / (k as f64 * (k as f64 - 1.0) / 2.0);
    first - 0.5 * mean_pair
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse_volatility(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mse_volatility(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert!(mse_volatility(&[1.0], &[1.0, 2.0]).is_err());
        let a = mse_volatility(&[0.3, 1.2, 2.0], &[0.5, 1.0, 1.5]).unwrap();
        let b = mse_volatility(&[2.0, 0.3, 1.2], &[1.5, 0.5, 1.0]).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn qlike_examples() {
        assert_eq!(qlike(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        let under = qlike(&[0.5], &[1.0]).unwrap();
        assert!((under - (2.0 + 0.5f64.ln())).abs() < 1e-12);
        assert!((under - 1.3069).abs() < 1e-4);
        let grid_min = (1..400)
            .map(|i| i as f64 * 0.01)
            .min_by(|a, b| qlike(&[*a], &[1.0]).unwrap().total_cmp(&qlike(&[*b], &[1.0]).unwrap()))
            .unwrap();
        assert!((grid_min - 1.0).abs() < 1e-9);
        assert!(matches!(qlike(&[0.0], &[1.0]), Err(Error::Numerical(_))));
    }

    #[test]
    fn crps_standard_normal_at_zero() {
        let d = GaussianMixture::single(0.0, 1.0).unwrap();
        let want = crps_gaussian(0.0, 1.0, 0.0);
        assert!((want - 0.2337).abs() < 1e-4);
        let got = crps_mc(&d, 0.0, 100_000, 1).unwrap();
        assert!((got / want - 1.0).abs() < 0.02, "{got}");
        assert_eq!(crps_mc(&d, 0.0, 2000, 9).unwrap(), crps_mc(&d, 0.0, 2000, 9).unwrap());
    }

    #[test]
    fn crps_degenerate_and_tails() {
        let sharp = GaussianMixture::single(0.3, 1e-9).unwrap();
        assert!(crps_mc(&sharp, 0.3, 2000, 2).unwrap() < 1e-8);
        let d = GaussianMixture::single(0.0, 1.0).unwrap();
        let mut last = 0.0;
        for z in [1.0, 2.0, 3.0, 10.0] {
            let c = crps_mc(&d, z, 2000, 3).unwrap();
            assert!((c / crps_gaussian(0.0, 1.0, z) - 1.0).abs() < 0.02);
            assert!(c > last);
            last = c;
        }
    }

    #[test]
    fn crps_pair_term_matches_brute_force() {
        let mut draws: Vec<f64> = vec![0.4, -1.0, 2.5, 0.0, 0.7];
        let x = 0.2;
        let k = draws.len();
        let mut brute = 0.0;
        for i in 0..k {
            for j in (i + 1)..k {
                brute += (draws[i] - draws[j]).abs();
            }
        }
        brute /= (k * (k - 1) / 2) as f64;
        let first: f64 = draws.iter().map(|d: &f64| (d - x).abs()).sum::<f64>() / k as f64;
        let got = crps_from_draws(&mut draws, x);
        assert!((got - (first - 0.5 * brute)).abs() < 1e-12);
    }

    #[test]
    fn stratified_draws_match_mixture_moments() {
        let d = GaussianMixture::new(vec![0.3, 0.7], vec![-1.0, 2.0], vec![0.5, 1.5]).unwrap();
        let mut rng = seed::rng(4);
        let xs = stratified_draws(&d, 50_000, &mut rng);
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((m - d.mean()).abs() < 0.01);
        assert!((v / d.variance() - 1.0).abs() < 0.01);
    }
}
