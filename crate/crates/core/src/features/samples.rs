use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::indicators::{indicator_series, Indicator, INDICATORS};
use super::preprocess::{fill_row, forward_fill, winsorize_cross_section, zscore_cross_section, zero_fill, FillPolicy};
use super::rrv::compute_rrv;
use crate::error::{Error, Result};
use crate::ingest::{DailyBar, DateRange, MarketPanel, SplitPlan};
use crate::par;

pub const N_INDICATORS: usize = INDICATORS.len();

/// `C × T` indicator values for one stock, rows in [`INDICATORS`] order and
/// columns oldest → `as_of`. Missing entries are `NaN` until filled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorMatrix {
    pub code: String,
    pub as_of: NaiveDate,
    pub window: usize,
    pub values: Vec<f64>,
}

impl IndicatorMatrix {
    pub fn row(&self, indicator: usize) -> &[f64] {
        &self.values[indicator * self.window..(indicator + 1) * self.window]
    }

    pub fn get(&self, indicator: usize, day: usize) -> f64 {
        self.values[indicator * self.window + day]
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }
}

fn bar_index(bars: &[DailyBar], date: NaiveDate) -> Option<usize> {
    bars.binary_search_by_key(&date, |b| b.date).ok()
}

/// Raw (unstandardised) indicators for the `window` days ending at `as_of`.
///
/// Requires `window` bars of history before `as_of`. Values whose lookback
/// reaches before the first bar are missing.
pub fn compute_indicators(
    panel: &MarketPanel,
    code: &str,
    as_of: NaiveDate,
    window: usize,
) -> Result<IndicatorMatrix> {
    let bars = panel
        .series(code)
        .ok_or_else(|| Error::Range(format!("unknown code {code}")))?;
    let i = bar_index(bars, as_of).ok_or_else(|| Error::Range(format!("{code} has no bar on {as_of}")))?;
    if window == 0 || i < window {
        return Err(Error::History(format!(
            "{code} on {as_of}: {i} prior bars, window needs {window}"
        )));
    }
    let mut values = Vec::with_capacity(N_INDICATORS * window);
    for ind in INDICATORS {
        values.extend((i + 1 - window..=i).map(|j| ind.evaluate(bars, j)));
    }
    Ok(IndicatorMatrix {
        code: code.to_string(),
        as_of,
        window,
        values,
    })
}

/// Fill gaps row by row; the output has no missing entries.
pub fn fill_missing(matrix: &IndicatorMatrix, policy: FillPolicy) -> IndicatorMatrix {
    let mut out = matrix.clone();
    for row in out.values.chunks_mut(matrix.window) {
        fill_row(row, policy);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSample {
    pub code: String,
    /// Position of `code` in the panel's sorted code list.
    pub code_index: usize,
    pub indicators: IndicatorMatrix,
    pub label_date: NaiveDate,
    /// `close(t+1)/close(t) − 1`.
    pub label_return: f64,
    /// RRV of the label day; `None` without complete intraday bars.
    pub label_rrv: Option<f64>,
}

impl FeatureSample {
    pub fn as_of(&self) -> NaiveDate {
        self.indicators.as_of
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub window: usize,
    pub codes: Vec<String>,
    pub samples: Vec<FeatureSample>,
}

impl SampleSet {
    pub fn select(&self, mut keep: impl FnMut(&FeatureSample) -> bool) -> Vec<&FeatureSample> {
        self.samples.iter().filter(|s| keep(s)).collect()
    }
}

/// One sample per (code, as_of) with a next-day label.
///
/// Preprocessing runs per day and per indicator across stocks: winsorise at
/// the 1st/99th percentiles, z-score, then forward fill along time per stock.
/// Gaps still open at the start of a window are zeroed. With a split, only
/// samples whose label date lies between the training start and the test end
/// are kept.
pub fn build_samples(
    panel: &MarketPanel,
    split: Option<&SplitPlan>,
    window: usize,
    policy: FillPolicy,
) -> Result<SampleSet> {
    if window == 0 {
        return Err(Error::Config("history window must be ≥ 1".into()));
    }
    let codes: Vec<String> = panel.codes().map(str::to_string).collect();
    let calendar = panel.calendar();
    let series: Vec<&[DailyBar]> = codes.iter().map(|c| panel.series(c).expect("code")).collect();
    let mut processed: Vec<Vec<Vec<f64>>> = par::map(&series, |bars| indicator_series(bars));

    // per-day cross sections
    let day_pos: BTreeMap<NaiveDate, usize> = calendar.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); calendar.len()];
    for (ci, bars) in series.iter().enumerate() {
        for (bi, b) in bars.iter().enumerate() {
            members[day_pos[&b.date]].push((ci, bi));
        }
    }
    for ind in 0..N_INDICATORS {
        for day in &members {
            let raw: Vec<f64> = day.iter().map(|&(ci, bi)| processed[ci][ind][bi]).collect();
            let z = zscore_cross_section(&winsorize_cross_section(&raw));
            for (&(ci, bi), v) in day.iter().zip(z) {
                processed[ci][ind][bi] = v;
            }
        }
    }
    if policy == FillPolicy::ForwardThenZero {
        for rows in processed.iter_mut() {
            for row in rows.iter_mut() {
                forward_fill(row);
            }
        }
    }

    let keep = |d: NaiveDate| split.is_none_or(|s| s.train.start <= d && d <= s.test.end);
    let mut samples = Vec::new();
    for (ci, bars) in series.iter().enumerate() {
        let code = &codes[ci];
        for i in window..bars.len().saturating_sub(1) {
            let next = &bars[i + 1];
            if calendar.get(day_pos[&bars[i].date] + 1) != Some(&next.date) || !keep(next.date) {
                continue;
            }
            let mut values = Vec::with_capacity(N_INDICATORS * window);
            for row in &processed[ci] {
                let start = values.len();
                values.extend_from_slice(&row[i + 1 - window..=i]);
                zero_fill(&mut values[start..]);
            }
            samples.push(FeatureSample {
                code: code.clone(),
                code_index: ci,
                indicators: IndicatorMatrix {
                    code: code.clone(),
                    as_of: bars[i].date,
                    window,
                    values,
                },
                label_date: next.date,
                label_return: next.close / bars[i].close - 1.0,
                label_rrv: compute_rrv(panel, code, next.date),
            });
        }
    }
    Ok(SampleSet {
        window,
        codes,
        samples,
    })
}

const CACHE_MAGIC: &[u8; 8] = b"VMXSAMP\0";
pub const SAMPLE_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    schema_version: u32,
    window: usize,
    indicators: Vec<String>,
    codes: Vec<String>,
    rows: Vec<CacheRow>,
}

#[derive(Serialize, Deserialize)]
struct CacheRow {
    code_index: usize,
    as_of: NaiveDate,
    label_date: NaiveDate,
    label_return: f64,
    label_rrv: Option<f64>,
}

/// Binary sample cache: magic, JSON header length (u64 LE), JSON header with
/// the schema version and per-sample labels, then the indicator matrices as
/// little-endian f64 in sample order.
pub fn write_sample_cache<W: Write>(set: &SampleSet, mut w: W) -> Result<()> {
    let header = CacheHeader {
        schema_version: SAMPLE_SCHEMA_VERSION,
        window: set.window,
        indicators: INDICATORS.iter().map(|i| i.name().to_string()).collect(),
        codes: set.codes.clone(),
        rows: set
            .samples
            .iter()
            .map(|s| CacheRow {
                code_index: s.code_index,
                as_of: s.as_of(),
                label_date: s.label_date,
                label_return: s.label_return,
                label_rrv: s.label_rrv,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let io = |e| Error::io("<sample cache>", e);
    w.write_all(CACHE_MAGIC).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    let mut buf = Vec::with_capacity(set.samples.len() * N_INDICATORS * set.window * 8);
    for s in &set.samples {
        for v in &s.indicators.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io)?;
    Ok(())
}

pub fn read_sample_cache<R: Read>(mut r: R) -> Result<SampleSet> {
    let io = |e| Error::io("<sample cache>", e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Schema("not a sample cache".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json).map_err(io)?;
    let header: CacheHeader = serde_json::from_slice(&json)?;
    if header.schema_version != SAMPLE_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "sample cache schema {} (expected {SAMPLE_SCHEMA_VERSION})",
            header.schema_version
        )));
    }
    let per = N_INDICATORS * header.window;
    let mut data = Vec::new();
    r.read_to_end(&mut data).map_err(io)?;
    if data.len() != header.rows.len() * per * 8 {
        return Err(Error::Schema("sample cache truncated".into()));
    }
    let mut samples = Vec::with_capacity(header.rows.len());
    for (k, row) in header.rows.into_iter().enumerate() {
        let bytes = &data[k * per * 8..(k + 1) * per * 8];
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let code = header
            .codes
            .get(row.code_index)
            .cloned()
            .ok_or_else(|| Error::Schema("code index out of range".into()))?;
        samples.push(FeatureSample {
            code: code.clone(),
            code_index: row.code_index,
            indicators: IndicatorMatrix {
                code,
                as_of: row.as_of,
                window: header.window,
                values,
            },
            label_date: row.label_date,
            label_return: row.label_return,
            label_rrv: row.label_rrv,
        });
    }
    Ok(SampleSet {
        window: header.window,
        codes: header.codes,
        samples,
    })
}

/// Long-format dump: `code,as_of,indicator,day_offset,value`, where the
/// offset counts back from `as_of` (0 = as_of).
pub fn write_feature_dump<'a, W: Write>(
    samples: impl IntoIterator<Item = &'a FeatureSample>,
    w: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["code", "as_of", "indicator", "day_offset", "value"])?;
    for s in samples {
        let m = &s.indicators;
        for (row, ind) in INDICATORS.iter().enumerate() {
            for day in 0..m.window {
                w.write_record([
                    s.code.clone(),
                    m.as_of.to_string(),
                    ind.name().to_string(),
                    (m.window - 1 - day).to_string(),
                    m.get(row, day).to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<feature dump>", e))?;
    Ok(())
}

/// Risk attributes used to colour embedding scatter plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockAttribute {
    pub code: String,
    /// Mean over the range of the rolling 60-day population std of daily returns.
    pub std60: f64,
    /// Mean daily turnover rate; `None` without shares/turnover data.
    pub turnover: Option<f64>,
    /// Mean of `(close − MA5)/MA5`.
    pub bias5: f64,
}

pub fn compute_attributes(panel: &MarketPanel, code: &str, range: DateRange) -> Option<StockAttribute> {
    let bars = panel.series(code)?;
    let returns: Vec<f64> = bars.iter().map(|b| b.close / b.preclose - 1.0).collect();
    let (mut std_sum, mut std_n) = (0.0, 0usize);
    let (mut bias_sum, mut bias_n) = (0.0, 0usize);
    let mut turnover = Some((0.0, 0usize));
    for (i, b) in bars.iter().enumerate() {
        if !range.contains(b.date) {
            continue;
        }
        if i >= 59 {
            std_sum += super::indicators::population_std(returns[i - 59..=i].iter().copied());
            std_n += 1;
        }
        if i >= 4 {
            let ma5 = bars[i - 4..=i].iter().map(|x| x.close).sum::<f64>() / 5.0;
            bias_sum += (b.close - ma5) / ma5;
            bias_n += 1;
        }
        turnover = match (turnover, b.turnover_rate()) {
            (Some((s, n)), Some(t)) => Some((s + t, n + 1)),
            _ => None,
        };
    }
    if std_n == 0 || bias_n == 0 {
        return None;
    }
    Some(StockAttribute {
        code: code.to_string(),
        std60: std_sum / std_n as f64,
        turnover: turnover.filter(|(_, n)| *n > 0).map(|(s, n)| s / n as f64),
        bias5: bias_sum / bias_n as f64,
    })
}

pub fn indicator_names() -> Vec<&'static str> {
    INDICATORS.iter().map(|i: &Indicator| i.name()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic_market, ReturnProcess, StockGroup, SynthSpec};

    fn market(days: usize, stocks: usize, intervals: u32) -> MarketPanel {
        let spec = SynthSpec {
            days,
            intervals_per_day: intervals,
            substeps: 2,
            groups: vec![StockGroup {
                prefix: "S".into(),
                count: stocks,
                process: ReturnProcess::Constant { sigma: 0.02 },
            }],
            ..Default::default()
        };
        generate_synthetic_market(&spec, 12).unwrap().panel
    }

    #[test]
    fn sample_count_oracle() {
        let panel = market(200, 3, 4);
        let set = build_samples(&panel, None, 60, FillPolicy::ForwardThenZero).unwrap();
        // each stock: as_of index 60..=198 (60 prior days, one label day after)
        let oracle: usize = (0..3).map(|_| (60..199).count()).sum();
        assert_eq!(set.samples.len(), oracle);
        assert_eq!(oracle, 3 * (200 - 60 - 1));
        assert!(set.samples.iter().all(|s| s.label_rrv.is_some() && !s.indicators.has_missing()));
        assert!(set.samples.iter().all(|s| s.label_date > s.as_of()));
        let last = *panel.calendar().last().unwrap();
        assert!(set.samples.iter().all(|s| s.as_of() != last));
        let calendar = panel.calendar();
        assert!(set.samples.iter().all(|s| calendar.binary_search(&s.as_of()).is_ok()));
    }

    #[test]
    fn cross_sections_standardised() {
        let panel = market(140, 12, 0);
        let set = build_samples(&panel, None, 10, FillPolicy::ForwardThenZero).unwrap();
        let mut by_day: BTreeMap<NaiveDate, Vec<&FeatureSample>> = BTreeMap::new();
        for s in &set.samples {
            by_day.entry(s.as_of()).or_default().push(s);
        }
        // late days have every indicator present for every stock
        let day = by_day.keys().nth(100).copied().unwrap();
        let group = &by_day[&day];
        assert_eq!(group.len(), 12);
        for ind in 0..N_INDICATORS {
            let xs: Vec<f64> = group.iter().map(|s| s.indicators.get(ind, 9)).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "indicator {ind} mean {mean}");
            assert!((var - 1.0).abs() < 1e-9 || var == 0.0, "indicator {ind} var {var}");
        }
        assert!(set.samples.iter().all(|s| s.label_rrv.is_none()));
    }

    #[test]
    fn leading_gaps_zeroed() {
        let panel = market(80, 4, 0);
        let set = build_samples(&panel, None, 10, FillPolicy::ForwardThenZero).unwrap();
        let first = &set.samples[0];
        // RANK60 is undefined for the whole first window
        assert!(first.indicators.row(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn compute_indicators_history_and_fill() {
        let panel = market(100, 1, 0);
        let d = panel.calendar()[30];
        let m = compute_indicators(&panel, "S000", d, 20).unwrap();
        assert_eq!(m.values.len(), 200);
        assert!(m.has_missing());
        let filled = fill_missing(&m, FillPolicy::ForwardThenZero);
        assert!(!filled.has_missing());
        assert!(matches!(
            compute_indicators(&panel, "S000", panel.calendar()[5], 20),
            Err(Error::History(_))
        ));
    }

    #[test]
    fn cache_round_trip() {
        let panel = market(90, 2, 3);
        let set = build_samples(&panel, None, 12, FillPolicy::ForwardThenZero).unwrap();
        let mut buf = Vec::new();
        write_sample_cache(&set, &mut buf).unwrap();
        let back = read_sample_cache(buf.as_slice()).unwrap();
        assert_eq!(back, set);
        buf[0] = b'X';
        assert!(read_sample_cache(buf.as_slice()).is_err());
    }

    #[test]
    fn feature_dump_layout() {
        let panel = market(90, 2, 0);
        let set = build_samples(&panel, None, 5, FillPolicy::ForwardThenZero).unwrap();
        let mut buf = Vec::new();
        write_feature_dump(set.samples.iter().take(1), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 50);
        assert!(text.starts_with("code,as_of,indicator,day_offset,value\n"));
    }

    #[test]
    fn attributes_available() {
        let panel = market(150, 2, 0);
        let cal = panel.calendar();
        let range = DateRange {
            start: cal[0],
            end: *cal.last().unwrap(),
        };
        let attr = compute_attributes(&panel, "S000", range).unwrap();
        assert!(attr.std60 > 0.01 && attr.std60 < 0.03);
        assert!(attr.turnover.is_some());
    }
}
