//! Cross-sectional winsorisation and z-scoring, and time-wise filling.
//!
//! Missing entries are `NaN`; they are skipped by the cross-sectional
//! statistics and passed through unchanged.

use serde::{Deserialize, Serialize};

/// Linear-interpolation percentile (`h = (n−1)·q`) of sorted data.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn present(values: &[f64]) -> Vec<f64> {
    values.iter().copied().filter(|v| !v.is_nan()).collect()
}

/// Clip to the 1st and 99th percentiles of the non-missing values.
pub fn winsorize_cross_section(values: &[f64]) -> Vec<f64> {
    winsorize_with(values, 0.01, 0.99)
}

pub fn winsorize_with(values: &[f64], lower: f64, upper: f64) -> Vec<f64> {
    let mut sorted = present(values);
    if sorted.len() < 2 {
        return values.to_vec();
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let lo = percentile_sorted(&sorted, lower);
    let hi = percentile_sorted(&sorted, upper);
    values
        .iter()
        .map(|&v| if v.is_nan() { v } else { v.clamp(lo, hi) })
        .collect()
}

/// `(x − μ)/σ` with population σ over the non-missing values; all zeros when
/// σ = 0 or fewer than two values are present.
pub fn zscore_cross_section(values: &[f64]) -> Vec<f64> {
    let xs = present(values);
    let n = xs.len() as f64;
    let (mean, sd) = if xs.len() < 2 {
        (0.0, 0.0)
    } else {
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    values
        .iter()
        .map(|&v| {
            if v.is_nan() {
                v
            } else if sd > 0.0 {
                (v - mean) / sd
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    /// Carry the previous value forward in time, zero any leading gap.
    #[default]
    ForwardThenZero,
    /// Replace every gap with zero.
    Zero,
}

/// Forward fill along a time series in place.
pub fn forward_fill(row: &mut [f64]) {
    let mut last = f64::NAN;
    for v in row.iter_mut() {
        if v.is_nan() {
            *v = last;
        } else {
            last = *v;
        }
    }
}

pub fn zero_fill(row: &mut [f64]) {
    for v in row.iter_mut() {
        if v.is_nan() {
            *v = 0.0;
        }
    }
}

pub fn fill_row(row: &mut [f64], policy: FillPolicy) {
    if policy == FillPolicy::ForwardThenZero {
        forward_fill(row);
    }
    zero_fill(row);
}
