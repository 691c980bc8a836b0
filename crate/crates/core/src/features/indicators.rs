//! The ten daily technical indicators.
//!
//! Each indicator is evaluated per bar on a single stock's series. Values
//! whose lookback reaches before the first bar, or whose divisor is zero, are
//! missing (`NaN`) and left to the fill stage.

use serde::{Deserialize, Serialize};

use crate::ingest::DailyBar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Indicator {
    Rank60,
    Beta5,
    Beta20,
    Cntd60,
    Min5,
    Min10,
    Klen,
    Std5,
    Vma5,
    Vstd10,
}

/// Canonical row order of an indicator matrix.
pub const INDICATORS: [Indicator; 10] = [
    Indicator::Rank60,
    Indicator::Beta5,
    Indicator::Beta20,
    Indicator::Cntd60,
    Indicator::Min5,
    Indicator::Min10,
    Indicator::Klen,
    Indicator::Std5,
    Indicator::Vma5,
    Indicator::Vstd10,
];

/// Longest lookback of any indicator, in days.
pub const MAX_LOOKBACK: usize = 60;

impl Indicator {
    pub fn name(self) -> &'static str {
        match self {
            Indicator::Rank60 => "RANK60",
            Indicator::Beta5 => "BETA5",
            Indicator::Beta20 => "BETA20",
            Indicator::Cntd60 => "CNTD60",
            Indicator::Min5 => "MIN5",
            Indicator::Min10 => "MIN10",
            Indicator::Klen => "KLEN",
            Indicator::Std5 => "STD5",
            Indicator::Vma5 => "VMA5",
            Indicator::Vstd10 => "VSTD10",
        }
    }

    pub fn lookback(self) -> usize {
        match self {
            Indicator::Rank60 | Indicator::Cntd60 => 60,
            Indicator::Beta20 => 20,
            Indicator::Min10 | Indicator::Vstd10 => 10,
            Indicator::Beta5 | Indicator::Min5 | Indicator::Std5 | Indicator::Vma5 => 5,
            Indicator::Klen => 1,
        }
    }

    /// Value at bar `i` of `bars`, `NaN` when undefined.
    pub fn evaluate(self, bars: &[DailyBar], i: usize) -> f64 {
        let k = self.lookback();
        if i + 1 < k {
            return f64::NAN;
        }
        let window = &bars[i + 1 - k..=i];
        let today = &bars[i];
        let closes = || window.iter().map(|b| b.close);
        let ratio = |num: f64, den: f64| if den != 0.0 { num / den } else { f64::NAN };
        match self {
            Indicator::Rank60 => {
                // percentile of today's close among the preceding 59, mid-rank ties
                let prior = &window[..k - 1];
                let below = prior.iter().filter(|b| b.close < today.close).count() as f64;
                let equal = prior.iter().filter(|b| b.close == today.close).count() as f64;
                (below + 0.5 * equal) / (k - 1) as f64
            }
            Indicator::Beta5 | Indicator::Beta20 => ratio(ols_slope(closes()), today.close),
            Indicator::Cntd60 => {
                let up = window.iter().filter(|b| b.close > b.preclose).count() as f64;
                let down = window.iter().filter(|b| b.close < b.preclose).count() as f64;
                (up - down) / k as f64
            }
            Indicator::Min5 | Indicator::Min10 => {
                let min = window.iter().map(|b| b.low).fold(f64::INFINITY, f64::min);
                ratio(min, today.close)
            }
            Indicator::Klen => ratio(today.high - today.low, today.open),
            Indicator::Std5 => ratio(population_std(closes()), today.close),
            Indicator::Vma5 => {
                let mean = window.iter().map(|b| b.volume).sum::<f64>() / k as f64;
                ratio(mean, today.volume)
            }
            Indicator::Vstd10 => ratio(population_std(window.iter().map(|b| b.volume)), today.volume),
        }
    }
}

/// OLS slope of the values against their index `0..n`.
pub fn ols_slope(values: impl Iterator<Item = f64>) -> f64 {
    let ys: Vec<f64> = values.collect();
    let n = ys.len() as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

pub fn population_std(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// All indicators for every bar of one stock: `out[indicator][bar]`.
pub fn indicator_series(bars: &[DailyBar]) -> Vec<Vec<f64>> {
    INDICATORS
        .iter()
        .map(|ind| (0..bars.len()).map(|i| ind.evaluate(bars, i)).collect())
        .collect()
}
