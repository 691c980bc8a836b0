use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyBar {
    pub date: NaiveDate,
    pub code: String,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    pub preclose: f64,
    /// Daily turnover rate, when the source provides it directly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turnover: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shares_outstanding: Option<f64>,
}

impl DailyBar {
    /// Checks price positivity and the OHLC ordering invariants.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let prices = [self.open, self.high, self.low, self.close, self.preclose];
        if prices.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err("prices must be finite and > 0".into());
        }
        if !(self.volume.is_finite() && self.volume >= 0.0) {
            return Err("volume must be finite and ≥ 0".into());
        }
        if self.high < self.low {
            return Err(format!("high {} < low {}", self.high, self.low));
        }
        if self.low > self.open.min(self.close) {
            return Err(format!("low {} above min(open, close)", self.low));
        }
        if self.high < self.open.max(self.close) {
            return Err(format!("high {} below max(open, close)", self.high));
        }
        Ok(())
    }

    /// Turnover from the explicit column, else volume / shares outstanding.
    pub fn turnover_rate(&self) -> Option<f64> {
        self.turnover.or_else(|| {
            self.shares_outstanding
                .filter(|s| *s > 0.0)
                .map(|s| self.volume / s)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntradayBar {
    pub date: NaiveDate,
    pub code: String,
    pub interval_index: u32,
    pub high: f64,
    pub low: f64,
}

/// All intraday intervals of one (code, date).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntradayDay {
    /// `(interval_index, high, low)` sorted by index.
    pub intervals: Vec<(u32, f64, f64)>,
}

impl IntradayDay {
    /// Interval indices missing from the contiguous run `1..=max`.
    pub fn gaps(&self) -> Vec<u32> {
        let mut missing = Vec::new();
        let mut expected = 1;
        for &(idx, _, _) in &self.intervals {
            while expected < idx {
                missing.push(expected);
                expected += 1;
            }
            expected = idx + 1;
        }
        missing
    }

    pub fn is_complete(&self) -> bool {
        !self.intervals.is_empty() && self.gaps().is_empty()
    }
}

pub type IntradayFragment = BTreeMap<String, BTreeMap<NaiveDate, IntradayDay>>;

/// Aligned daily bars per code plus optional intraday ranges.
///
/// Immutable after construction; every intraday (code, date) has a daily bar
/// and the calendar is the strictly increasing union of bar dates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MarketPanel {
    series: BTreeMap<String, Vec<DailyBar>>,
    intraday: IntradayFragment,
    calendar: Vec<NaiveDate>,
}

impl MarketPanel {
    pub fn new(bars: Vec<DailyBar>) -> Result<Self> {
        let mut series: BTreeMap<String, Vec<DailyBar>> = BTreeMap::new();
        for bar in bars {
            bar.validate()
                .map_err(|e| Error::Schema(format!("{} {}: {e}", bar.code, bar.date)))?;
            series.entry(bar.code.clone()).or_default().push(bar);
        }
        for (code, rows) in series.iter_mut() {
            rows.sort_by_key(|b| b.date);
            if rows.windows(2).any(|w| w[0].date == w[1].date) {
                return Err(Error::Schema(format!("duplicate date for {code}")));
            }
        }
        let mut calendar: Vec<NaiveDate> = series.values().flatten().map(|b| b.date).collect();
        calendar.sort();
        calendar.dedup();
        Ok(Self {
            series,
            intraday: BTreeMap::new(),
            calendar,
        })
    }

    /// Attach intraday days; keys without a matching daily bar are dropped and
    /// reported.
    pub fn with_intraday(mut self, fragment: IntradayFragment) -> (Self, Vec<String>) {
        let mut dropped = Vec::new();
        for (code, days) in fragment {
            for (date, day) in days {
                if self.bar(&code, date).is_some() {
                    self.intraday.entry(code.clone()).or_default().insert(date, day);
                } else {
                    dropped.push(format!("intraday {code} {date} has no daily bar"));
                }
            }
        }
        (self, dropped)
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    pub fn n_codes(&self) -> usize {
        self.series.len()
    }

    pub fn n_bars(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    pub fn series(&self, code: &str) -> Option<&[DailyBar]> {
        self.series.get(code).map(Vec::as_slice)
    }

    pub fn bar(&self, code: &str, date: NaiveDate) -> Option<&DailyBar> {
        let rows = self.series.get(code)?;
        rows.binary_search_by_key(&date, |b| b.date)
            .ok()
            .map(|i| &rows[i])
    }

    pub fn intraday(&self, code: &str, date: NaiveDate) -> Option<&IntradayDay> {
        self.intraday.get(code)?.get(&date)
    }

    pub fn has_intraday(&self) -> bool {
        !self.intraday.is_empty()
    }

    pub fn intraday_fragment(&self) -> &IntradayFragment {
        &self.intraday
    }

    pub fn all_bars(&self) -> impl Iterator<Item = &DailyBar> {
        self.series.values().flatten()
    }

    /// Drop codes whose first-to-last bar span is shorter than `min_days`
    /// calendar days. Returns the excluded codes.
    pub fn exclude_short_histories(self, min_days: i64) -> (Self, Vec<String>) {
        if min_days <= 0 {
            return (self, Vec::new());
        }
        let mut excluded = Vec::new();
        let mut keep = Vec::new();
        let MarketPanel {
            series, intraday, ..
        } = self;
        for (code, rows) in series {
            let span = match (rows.first(), rows.last()) {
                (Some(a), Some(b)) => (b.date - a.date).num_days(),
                _ => 0,
            };
            if span < min_days {
                excluded.push(code);
            } else {
                keep.extend(rows);
            }
        }
        let panel = MarketPanel::new(keep).expect("bars already validated");
        let fragment = intraday
            .into_iter()
            .filter(|(code, _)| !excluded.contains(code))
            .collect();
        (panel.with_intraday(fragment).0, excluded)
    }
}
