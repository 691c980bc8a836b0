use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{par, seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneOptions {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    /// `None` selects `max(50, N/12)`.
    pub learning_rate: Option<f64>,
}

impl Default for TsneOptions {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: None,
        }
    }
}

/// Symmetrized joint affinities, row-major `n × n`.
#[derive(Debug, Clone)]
pub struct Affinities {
    pub n: usize,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TsneResult {
    /// One `[x, y]` per input point.
    pub coords: Vec<[f64; 2]>,
    pub kl: f64,
    /// KL after every iteration past the exaggeration phase.
    pub kl_history: Vec<f64>,
}

fn squared_distances(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    par::map(points, |a| {
        points
            .iter()
            .map(|b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
            .collect()
    })
}

/// Conditional affinities of one row with the bandwidth solved by bisection
/// so that the entropy equals `ln(perplexity)`.
fn conditional_row(dist: &[f64], i: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let mut row = vec![0.0; dist.len()];
    let d_min = dist
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, d)| *d)
        .fold(f64::INFINITY, f64::min);
    for _ in 0..200 {
        let mut sum = 0.0;
        for (j, d) in dist.iter().enumerate() {
            row[j] = if j == i { 0.0 } else { (-(d - d_min) * beta).exp() };
            sum += row[j];
        }
        let mut h = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            *v /= sum;
            if j != i && *v > 0.0 {
                h -= *v * v.ln();
            }
        }
        if (h - target).abs() < 1e-10 {
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    row
}

pub fn joint_affinities(points: &[Vec<f64>], perplexity: f64) -> Result<Affinities> {
    let n = points.len();
    if perplexity < 2.0 {
        return Err(Error::Config(format!("perplexity {perplexity} is below 2")));
    }
    if (n as f64) < 3.0 * perplexity {
        return Err(Error::EmptyInput(format!(
            "t-SNE with perplexity {perplexity} needs at least {} points, got {n}",
            (3.0 * perplexity).ceil()
        )));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::Shape("embedding vectors differ in dimension".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite embedding entry".into()));
    }
    let dist = squared_distances(points);
    let idx: Vec<usize> = (0..n).collect();
    let cond = par::map(&idx, |&i| conditional_row(&dist[i], i, perplexity));
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i][j] + cond[j][i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }
    Ok(Affinities { n, p })
}

/// Student-t kernel values `1/(1+|yi−yj|²)` and their sum over `i ≠ j`.
fn kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    (num, sum)
}

fn kl_from_kernel(aff: &Affinities, num: &[f64], sum: f64) -> f64 {
    let n = aff.n;
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let p = aff.p[i * n + j];
                let q = (num[i * n + j] / sum).max(1e-300);
                kl += p * (p / q).ln();
            }
        }
    }
    kl
}

/// `KL(P‖Q)` of an embedding.
pub fn kl_divergence(aff: &Affinities, y: &[[f64; 2]]) -> f64 {
    let (num, sum) = kernel(y);
    kl_from_kernel(aff, &num, sum)
}

pub fn tsne(points: &[Vec<f64>], opts: &TsneOptions, seed_value: u64) -> Result<TsneResult> {
    let aff = joint_affinities(points, opts.perplexity)?;
    let n = aff.n;
    let lr0 = opts.learning_rate.unwrap_or((n as f64 / 12.0).max(50.0));
    let mut rng = seed::rng(seed::derive(seed_value, "tsne-init"));
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut lr = lr0;
    let (mut num, mut sum) = kernel(&y);
    let mut kl = kl_from_kernel(&aff, &num, sum);
    let mut kl_history = Vec::new();

    for it in 0..opts.iterations {
        let exaggerating = it < opts.exaggeration_iters;
        let exag = if exaggerating { opts.exaggeration } else { 1.0 };
        let momentum = if exaggerating { 0.5 } else { 0.8 };
        let mut grad = vec![[0.0; 2]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let k = i * n + j;
                let w = (exag * aff.p[k] - num[k] / sum) * num[k];
                grad[i][0] += 4.0 * w * (y[i][0] - y[j][0]);
                grad[i][1] += 4.0 * w * (y[i][1] - y[j][1]);
            }
        }
        let mut next_v = velocity.clone();
        let mut next_g = gains.clone();
        for i in 0..n {
            for a in 0..2 {
                let same_sign = (grad[i][a] > 0.0) == (velocity[i][a] > 0.0);
                next_g[i][a] = if same_sign { (gains[i][a] * 0.8).max(0.01) } else { gains[i][a] + 0.2 };
                next_v[i][a] = momentum * velocity[i][a] - lr * next_g[i][a] * grad[i][a];
            }
        }
        let mut next_y: Vec<[f64; 2]> = y.iter().zip(&next_v).map(|(p, v)| [p[0] + v[0], p[1] + v[1]]).collect();
        let cx = next_y.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        let cy = next_y.iter().map(|p| p[1]).sum::<f64>() / n as f64;
        for p in &mut next_y {
            p[0] -= cx;
            p[1] -= cy;
        }
        let (next_num, next_sum) = kernel(&next_y);
        if exaggerating {
            y = next_y;
            velocity = next_v;
            gains = next_g;
            num = next_num;
            sum = next_sum;
            continue;
        }
        if it == opts.exaggeration_iters {
            kl = kl_from_kernel(&aff, &num, sum);
        }
        let next_kl = kl_from_kernel(&aff, &next_num, next_sum);
        if next_kl <= kl {
            y = next_y;
            velocity = next_v;
            gains = next_g;
            num = next_num;
            sum = next_sum;
            kl = next_kl;
        } else {
            // reject the step: restart momentum with a shorter step
            velocity = vec![[0.0; 2]; n];
            lr *= 0.5;
        }
        kl_history.push(kl);
    }
    if opts.iterations <= opts.exaggeration_iters {
        kl = kl_from_kernel(&aff, &num, sum);
    }
    Ok(TsneResult { coords: y, kl, kl_history })
}

/// Mean silhouette coefficient of `coords` under `labels`.
pub fn silhouette(coords: &[[f64; 2]], labels: &[usize]) -> Result<f64> {
    let n = coords.len();
    if n != labels.len() {
        return Err(Error::Shape(format!("{n} points vs {} labels", labels.len())));
    }
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    let dist = |a: usize, b: usize| ((coords[a][0] - coords[b][0]).powi(2) + (coords[a][1] - coords[b][1]).powi(2)).sqrt();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; n_labels];
        let mut counts = vec![0usize; n_labels];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist(i, j);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..n_labels)
            .filter(|&l| l != own && counts[l] > 0)
            .map(|l| sums[l] / counts[l] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    Ok(total / n as f64)
}

/// Mean pairwise Euclidean distance within and between labelled groups.
pub fn group_distances(points: &[Vec<f64>], labels: &[usize]) -> (f64, f64) {
    let (mut within, mut nw, mut between, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if labels[i] == labels[j] {
                within += d;
                nw += 1;
            } else {
                between += d;
                nb += 1;
            }
        }
    }
    (within / nw.max(1) as f64, between / nb.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn clusters(seed_value: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = seed::rng(seed_value);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3 {
            let center: Vec<f64> = (0..16).map(|k| if k == c { 10.0 } else { 0.0 }).collect();
            for _ in 0..50 {
                pts.push(center.iter().map(|m| m + noise.sample(&mut rng)).collect());
                labels.push(c);
            }
        }
        (pts, labels)
    }

    fn quick() -> TsneOptions {
        TsneOptions { perplexity: 10.0, iterations: 400, ..Default::default() }
    }

    #[test]
    fn separates_clusters() {
        let (pts, labels) = clusters(1);
        let res = tsne(&pts, &quick(), 7).unwrap();
        assert!(silhouette(&res.coords, &labels).unwrap() > 0.5);
        let again = tsne(&pts, &quick(), 7).unwrap();
        assert_eq!(res.coords, again.coords);
    }

    #[test]
    fn kl_nonincreasing_after_exaggeration() {
        let (pts, _) = clusters(2);
        let res = tsne(&pts, &quick(), 3).unwrap();
        let tail = &res.kl_history[res.kl_history.len() - 100..];
        assert!(tail.windows(2).all(|w| w[1] <= w[0] + 1e-6));
    }

    #[test]
    fn duplicates_coincide() {
        let (pts, _) = clusters(3);
        let half: Vec<Vec<f64>> = pts.iter().step_by(2).cloned().collect();
        let doubled: Vec<Vec<f64>> = half.iter().flat_map(|p| [p.clone(), p.clone()]).collect();
        let res = tsne(&doubled, &quick(), 5).unwrap();
        let xs: Vec<f64> = res.coords.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = res.coords.iter().map(|p| p[1]).collect();
        let spread = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min);
        let eps = 0.01 * spread(&xs).max(spread(&ys));
        for k in 0..half.len() {
            let (a, b) = (res.coords[2 * k], res.coords[2 * k + 1]);
            assert!(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() < eps);
        }
    }

    #[test]
    fn kl_invariant_under_rigid_motion() {
        let (pts, _) = clusters(4);
        let res = tsne(&pts, &TsneOptions { iterations: 300, ..quick() }, 1).unwrap();
        let aff = joint_affinities(&pts, 10.0).unwrap();
        let theta: f64 = seed::rng(8).random::<f64>() * std::f64::consts::TAU;
        let moved: Vec<[f64; 2]> = res
            .coords
            .iter()
            .map(|p| [theta.cos() * p[0] - theta.sin() * p[1] + 3.0, theta.sin() * p[0] + theta.cos() * p[1] - 1.0])
            .collect();
        assert!((kl_divergence(&aff, &res.coords) - kl_divergence(&aff, &moved)).abs() < 1e-9);
    }

    #[test]
    fn input_checks() {
        let (pts, _) = clusters(5);
        assert!(matches!(tsne(&pts[..20], &TsneOptions::default(), 0), Err(Error::EmptyInput(_))));
        assert!(tsne(&pts, &TsneOptions { perplexity: 1.5, ..quick() }, 0).is_err());
        let mut bad = pts.clone();
        bad[3][2] = f64::NAN;
        assert!(matches!(tsne(&bad, &quick(), 0), Err(Error::Numerical(_))));
    }

    #[test]
    fn perplexity_is_matched() {
        let (pts, _) = clusters(6);
        let dist = squared_distances(&pts);
        let row = conditional_row(&dist[0], 0, 15.0);
        let h: f64 = row.iter().filter(|v| **v > 0.0).map(|v| -v * v.ln()).sum();
        assert!((h.exp() - 15.0).abs() < 1e-6);
    }

    #[test]
    fn silhouette_and_group_distances() {
        let coords = [[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        let s = silhouette(&coords, &[0, 0, 1, 1]).unwrap();
        assert!(s > 0.9);
        assert!(silhouette(&coords, &[0, 1, 0, 1]).unwrap() < 0.0);
        let pts: Vec<Vec<f64>> = coords.iter().map(|c| c.to_vec()).collect();
        let (w, b) = group_distances(&pts, &[0, 0, 1, 1]);
        assert_eq!(w, 1.0);
        assert!(b > 10.0);
    }
}
