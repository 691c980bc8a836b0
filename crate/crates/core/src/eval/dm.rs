use std::io::Write;

use serde::{Deserialize, Serialize};

use super::report::{Metric, PairedLosses};
use crate::error::{Error, Result};

pub const MIN_DM_OBS: usize = 30;

/// Diebold-Mariano statistic for `d = a − b`. Positive values mean `b` has the
/// lower loss. `lag > 0` adds Bartlett-weighted autocovariances.
pub fn dm_test(loss_a: &[f64], loss_b: &[f64], lag: usize) -> Result<f64> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::Shape(format!("loss series of length {} and {}", loss_a.len(), loss_b.len())));
    }
    let m = loss_a.len();
    if m < MIN_DM_OBS {
        return Err(Error::EmptyInput(format!("DM test needs at least {MIN_DM_OBS} pairs, got {m}")));
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite loss differential".into()));
    }
    let mean = d.iter().sum::<f64>() / m as f64;
    let autocov = |k: usize| (k..m).map(|t| (d[t] - mean) * (d[t - k] - mean)).sum::<f64>() / m as f64;
    let mut var = autocov(0);
    for k in 1..=lag.min(m - 1) {
        var += 2.0 * (1.0 - k as f64 / (lag as f64 + 1.0)) * autocov(k);
    }
    if mean == 0.0 {
        return Ok(0.0);
    }
    if var <= 0.0 {
        return Ok(mean.signum() * f64::INFINITY);
    }
    Ok(mean / (var / m as f64).sqrt())
}

pub fn significance_stars(t: f64) -> &'static str {
    match t.abs() {
        a if a > 2.58 => "**",
        a if a > 1.96 => "*",
        _ => "",
    }
}

/// Lower-triangular matrix of DM statistics for one loss: entry `(i, j)` with
/// `j < i` tests row model `i` against column model `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmMatrix {
    pub loss: Metric,
    pub models: Vec<String>,
    pub stats: Vec<Vec<Option<f64>>>,
}

impl DmMatrix {
    pub fn compute(losses: &PairedLosses, metric: Metric, lag: usize) -> Result<DmMatrix> {
        let series = losses.losses(metric);
        let n = losses.models.len();
        let mut stats = vec![vec![None; n]; n];
        for i in 0..n {
            for j in 0..i {
                stats[i][j] = Some(dm_test(&series[i], &series[j], lag)?);
            }
        }
        Ok(DmMatrix { loss: metric, models: losses.models.clone(), stats })
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let i = self.models.iter().position(|m| m == row)?;
        let j = self.models.iter().position(|m| m == col)?;
        self.stats[i][j]
    }

    /// Rows are models 2..n, columns models 1..n−1.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.models.len();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["loss".to_string(), "model".to_string()];
        header.extend(self.models.iter().take(n.saturating_sub(1)).cloned());
        wtr.write_record(&header)?;
        for i in 1..n {
            let mut row = vec![self.loss.label().to_string(), self.models[i].clone()];
            for j in 0..n - 1 {
                row.push(match self.stats[i][j] {
                    Some(t) => format!("{t:.3}{}", significance_stars(t)),
                    None => String::new(),
                });
            }
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<dm matrix>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identical_series_give_zero() {
        let a: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        assert_eq!(dm_test(&a, &a, 0).unwrap(), 0.0);
        assert_eq!(dm_test(&a, &a, 3).unwrap(), 0.0);
    }

    #[test]
    fn clt_oracle_and_antisymmetry() {
        let mut rng = seed::rng(11);
        let noise = Normal::new(0.1, 1.0).unwrap();
        let d: Vec<f64> = (0..10_000).map(|_| noise.sample(&mut rng)).collect();
        let zero = vec![0.0; d.len()];
        let t = dm_test(&d, &zero, 0).unwrap();
        assert!((t - 10.0).abs() < 1.0, "{t}");
        assert_eq!(dm_test(&zero, &d, 0).unwrap(), -t);
    }

    #[test]
    fn degenerate_cases() {
        let a = vec![1.0; 40];
        let b = vec![0.5; 40];
        assert_eq!(dm_test(&a, &b, 0).unwrap(), f64::INFINITY);
        assert_eq!(dm_test(&b, &a, 0).unwrap(), f64::NEG_INFINITY);
        assert!(dm_test(&a[..10], &b[..10], 0).is_err());
        assert!(dm_test(&a, &b[..39], 0).is_err());
    }

    #[test]
    fn stars() {
        assert_eq!(significance_stars(2.0), "*");
        assert_eq!(significance_stars(-3.0), "**");
        assert_eq!(significance_stars(1.5), "");
    }

    #[test]
    fn matrix_layout() {
        let mut rng = seed::rng(2);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let models: Vec<String> = (0..6).map(|i| format!("M{i}")).collect();
        let series: Vec<Vec<f64>> =
            (0..6).map(|k| (0..300).map(|_| k as f64 * 0.05 + noise.sample(&mut rng)).collect()).collect();
        let losses = PairedLosses {
            keys: vec![],
            rrv: vec![],
            models: models.clone(),
            crps: series.clone(),
            mse: series.clone(),
            qlike: series,
        };
        let m = DmMatrix::compute(&losses, Metric::Mse, 0).unwrap();
        assert!(m.get("M0", "M0").is_none() && m.get("M0", "M3").is_none());
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "loss,model,M0,M1,M2,M3,M4");
        assert!(lines[1].starts_with("MSE,M1,") && lines[1].ends_with(",,,,"));
        assert!(lines[5].split(',').skip(2).all(|c| !c.is_empty()));
    }
}
