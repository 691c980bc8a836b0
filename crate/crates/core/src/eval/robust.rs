use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear-interpolation quantile of sorted data (`h = (n−1)p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustSummary {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
    pub iqr_over_median: f64,
}

pub fn robustness_summary(values: &[f64]) -> Result<RobustSummary> {
    if values.len() < 2 {
        return Err(Error::EmptyInput(format!("robustness summary needs at least 2 runs, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite CRPS value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = quantile_sorted(&sorted, 0.5);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    Ok(RobustSummary {
        n: sorted.len(),
        median,
        q1,
        q3,
        iqr: q3 - q1,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        iqr_over_median: (q3 - q1) / median,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustRun {
    pub model: String,
    pub run: usize,
    pub seed: u64,
    pub crps: f64,
}

pub fn write_robust_runs<W: Write>(runs: &[RobustRun], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in runs {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io("<robust runs>", e))?;
    Ok(())
}

pub fn write_robust_summary<W: Write>(rows: &[(String, RobustSummary)], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["model", "n", "median", "q1", "q3", "iqr", "min", "max", "iqr_over_median"])?;
    for (model, s) in rows {
        wtr.write_record([
            model.clone(),
            s.n.to_string(),
            s.median.to_string(),
            s.q1.to_string(),
            s.q3.to_string(),
            s.iqr.to_string(),
            s.min.to_string(),
            s.max.to_string(),
            s.iqr_over_median.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<robust summary>", e))?;
    Ok(())
}
