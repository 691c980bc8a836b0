use chrono::NaiveDate;

use crate::ingest::MarketPanel;

/// `1/(4·ln 2)`, the Parkinson scaling of a squared log range.
const PARKINSON: f64 = 1.0 / (4.0 * std::f64::consts::LN_2);

/// Realized range volatility of one day from `(high, low)` per interval:
/// `Σ (ln H − ln L)² / (4 ln 2)`.
pub fn rrv_from_ranges(ranges: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    PARKINSON
        * ranges
            .into_iter()
            .map(|(h, l)| (h.ln() - l.ln()).powi(2))
            .sum::<f64>()
}

/// RRV for `(code, date)`; `None` when the intraday day is absent or has gaps.
pub fn compute_rrv(panel: &MarketPanel, code: &str, date: NaiveDate) -> Option<f64> {
    let day = panel.intraday(code, date)?;
    if !day.is_complete() {
        return None;
    }
    Some(rrv_from_ranges(day.intervals.iter().map(|&(_, h, l)| (h, l))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_matches_definition() {
        assert!((PARKINSON - 0.360_673_760_222_241).abs() < 1e-15);
    }

    #[test]
    fn hand_values() {
        assert_eq!(rrv_from_ranges(vec![(10.0, 10.0); 48]), 0.0);
        let one = rrv_from_ranges([(0.02f64.exp(), 1.0)]);
        assert!((one - 0.0004 / (4.0 * 2f64.ln())).abs() < 1e-18);
        assert!((one - 1.4427e-4).abs() < 1e-8);
        let two = rrv_from_ranges([(0.01f64.exp(), 1.0), (5.0 * 0.01f64.exp(), 5.0)]);
        assert!((two - 2.0 * 0.0001 / (4.0 * 2f64.ln())).abs() < 1e-18);
        assert!((two - 7.2135e-5).abs() < 1e-9);
    }

    #[test]
    fn price_scale_invariant() {
        let ranges = [(10.3, 10.0), (10.5, 10.1), (10.2, 9.8)];
        let base = rrv_from_ranges(ranges);
        let scaled = rrv_from_ranges(ranges.iter().map(|(h, l)| (h * 7.5, l * 7.5)));
        assert!((base - scaled).abs() < 1e-9 * base);
    }
}
