use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::metrics::{crps_mc, mse_losses, qlike_losses};
use crate::error::{Error, Result};
use crate::features::FeatureSample;
use crate::gmm::GaussianMixture;
use crate::mdn::ForecastRecord;
use crate::{par, seed};

/// Realized outcome for one (code, label day).
#[derive(Debug, Clone, PartialEq)]
pub struct Realized {
    pub code: String,
    pub date: NaiveDate,
    pub ret: f64,
    pub rrv: f64,
}

impl Realized {
    /// Samples without a label-day RRV are skipped.
    pub fn from_samples(samples: &[FeatureSample]) -> Vec<Realized> {
        samples
            .iter()
            .filter_map(|s| {
                Some(Realized {
                    code: s.code.clone(),
                    date: s.label_date,
                    ret: s.label_return,
                    rrv: s.label_rrv?,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Monte-Carlo draws per CRPS evaluation.
    pub crps_draws: usize,
    /// Centers of the volatility buckets in percentile points.
    pub bucket_centers: Vec<f64>,
    /// Each bucket covers `[center − half_width, center + half_width)`.
    pub bucket_half_width: f64,
    /// Returns and volatilities are multiplied by this before scoring.
    pub units: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            crps_draws: 2000,
            bucket_centers: vec![10.0, 20.0, 50.0, 80.0, 90.0],
            bucket_half_width: 5.0,
            units: 100.0,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.crps_draws < 2 {
            return Err(Error::Config("crps_draws must be at least 2".into()));
        }
        if !(self.bucket_half_width > 0.0) {
            return Err(Error::Config("bucket_half_width must be positive".into()));
        }
        if !(self.units > 0.0) {
            return Err(Error::Config("units must be positive".into()));
        }
        Ok(())
    }
}

/// Per-sample losses of every model on one shared, ordered sample set.
#[derive(Debug, Clone)]
pub struct PairedLosses {
    pub keys: Vec<(String, NaiveDate)>,
    pub rrv: Vec<f64>,
    pub models: Vec<String>,
    pub crps: Vec<Vec<f64>>,
    pub mse: Vec<Vec<f64>>,
    pub qlike: Vec<Vec<f64>>,
}

impl PairedLosses {
    pub fn model_index(&self, name: &str) -> Option<usize> {
        self.models.iter().position(|m| m == name)
    }

    pub fn losses(&self, metric: Metric) -> &[Vec<f64>] {
        match metric {
            Metric::Crps => &self.crps,
            Metric::Mse => &self.mse,
            Metric::Qlike => &self.qlike,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Crps,
    Mse,
    Qlike,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Crps, Metric::Mse, Metric::Qlike];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Crps => "CRPS(%)",
            Metric::Mse => "MSE",
            Metric::Qlike => "QLIKE",
        }
    }
}

/// Scores every model on the samples that all of them forecast and that have
/// a realized outcome. Models appear in order of first occurrence.
pub fn score_paired(realized: &[Realized], forecasts: &[ForecastRecord], opts: &EvalOptions, seed_value: u64) -> Result<PairedLosses> {
    opts.validate()?;
    let mut models: Vec<String> = Vec::new();
    let mut by_model: BTreeMap<&str, BTreeMap<(&str, NaiveDate), &GaussianMixture>> = BTreeMap::new();
    for f in forecasts {
        if !models.contains(&f.model) {
            models.push(f.model.clone());
        }
        let slot = by_model.entry(&f.model).or_default();
        if slot.insert((&f.code, f.date), &f.mixture).is_some() {
            return Err(Error::Schema(format!(
                "duplicate forecast for model {} on {} {}",
                f.model, f.code, f.date
            )));
        }
    }
    if models.is_empty() {
        return Err(Error::EmptyInput("no forecasts to evaluate".into()));
    }

    let mut seen = BTreeSet::new();
    let mut rows: Vec<&Realized> = Vec::new();
    for r in realized {
        if !seen.insert((r.code.as_str(), r.date)) {
            return Err(Error::Schema(format!("duplicate realized outcome for {} {}", r.code, r.date)));
        }
        if by_model.values().all(|m| m.contains_key(&(r.code.as_str(), r.date))) {
            rows.push(r);
        }
    }
    rows.sort_by(|a, b| (a.date, &a.code).cmp(&(b.date, &b.code)));
    if rows.is_empty() {
        return Err(Error::EmptyInput("no sample is forecast by every model".into()));
    }

    let units = opts.units;
    let real_vol: Vec<f64> = rows.iter().map(|r| r.rrv.max(0.0).sqrt() * units).collect();
    let mut out = PairedLosses {
        keys: rows.iter().map(|r| (r.code.clone(), r.date)).collect(),
        rrv: rows.iter().map(|r| r.rrv).collect(),
        models: models.clone(),
        crps: Vec::new(),
        mse: Vec::new(),
        qlike: Vec::new(),
    };
    // one draw stream per sample, shared by every model
    let sample_seeds: Vec<u64> = rows
        .iter()
        .map(|r| seed::derive(seed_value, &format!("crps/{}/{}", r.code, r.date)))
        .collect();
    for m in &models {
        let table = &by_model[m.as_str()];
        let dists: Vec<GaussianMixture> = rows
            .iter()
            .map(|r| table[&(r.code.as_str(), r.date)].scaled(units))
            .collect();
        let pred_vol: Vec<f64> = dists.iter().map(|d| d.volatility()).collect();
        out.mse.push(mse_losses(&pred_vol, &real_vol)?);
        out.qlike.push(
            qlike_losses(&pred_vol, &real_vol).map_err(|e| Error::Numerical(format!("model {m}: {e}")))?,
        );
        let idx: Vec<usize> = (0..rows.len()).collect();
        let crps = par::map(&idx, |&i| crps_mc(&dists[i], rows[i].ret * units, opts.crps_draws, sample_seeds[i]));
        out.crps.push(crps.into_iter().collect::<Result<Vec<f64>>>()?);
    }
    Ok(out)
}

/// Percentile rank `100·(midrank − 0.5)/m` of each value in the pooled set.
pub fn percentile_ranks(values: &[f64]) -> Vec<f64> {
    let m = values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; m];
    let mut i = 0;
    while i < m {
        let mut j = i;
        while j + 1 < m && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = 100.0 * (mid - 0.5) / m as f64;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub crps: f64,
    pub mse: f64,
    pub qlike: f64,
}

impl Cell {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Crps => self.crps,
            Metric::Mse => self.mse,
            Metric::Qlike => self.qlike,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    /// `total` or the bucket center such as `10%`.
    pub group: String,
    pub n: usize,
    /// One entry per model; `None` when the group is empty or flagged.
    pub cells: Vec<Option<Cell>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub models: Vec<String>,
    pub groups: Vec<GroupRow>,
}

fn cell(losses: &PairedLosses, model: usize, members: &[usize]) -> Option<Cell> {
    if members.is_empty() {
        return None;
    }
    let avg = |v: &[f64]| members.iter().map(|&i| v[i]).sum::<f64>() / members.len() as f64;
    Some(Cell {
        n: members.len(),
        crps: avg(&losses.crps[model]),
        mse: avg(&losses.mse[model]),
        qlike: avg(&losses.qlike[model]),
    })
}

pub fn bucket_by_volatility(losses: &PairedLosses, opts: &EvalOptions) -> EvalReport {
    let m = losses.keys.len();
    let n_models = losses.models.len();
    let all: Vec<usize> = (0..m).collect();
    let mut groups = vec![GroupRow {
        group: "total".into(),
        n: m,
        cells: (0..n_models).map(|k| cell(losses, k, &all)).collect(),
        flag: None,
    }];
    let lo = losses.rrv.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = losses.rrv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = m == 0 || lo == hi;
    let ranks = percentile_ranks(&losses.rrv);
    for &center in &opts.bucket_centers {
        let label = format!("{}%", center);
        if degenerate {
            groups.push(GroupRow {
                group: label,
                n: 0,
                cells: vec![None; n_models],
                flag: Some("constant realized volatility".into()),
            });
            continue;
        }
        let (a, b) = (center - opts.bucket_half_width, center + opts.bucket_half_width);
        let members: Vec<usize> = (0..m).filter(|&i| ranks[i] >= a && ranks[i] < b).collect();
        groups.push(GroupRow {
            group: label,
            n: members.len(),
            cells: (0..n_models).map(|k| cell(losses, k, &members)).collect(),
            flag: members.is_empty().then(|| "empty bucket".to_string()),
        });
    }
    EvalReport { models: losses.models.clone(), groups }
}

impl EvalReport {
    pub fn group(&self, name: &str) -> Option<&GroupRow> {
        self.groups.iter().find(|g| g.group == name)
    }

    pub fn value(&self, group: &str, model: &str, metric: Metric) -> Option<f64> {
        let k = self.models.iter().position(|m| m == model)?;
        self.group(group)?.cells[k].as_ref().map(|c| c.get(metric))
    }

    /// Bucket values of one model and metric, in bucket order.
    pub fn bucket_series(&self, model: &str, metric: Metric) -> Vec<Option<f64>> {
        self.groups
            .iter()
            .filter(|g| g.group != "total")
            .map(|g| self.value(&g.group, model, metric))
            .collect()
    }

    /// All bucket values present and nondecreasing from the lowest bucket up.
    pub fn is_monotone(&self, model: &str, metric: Metric) -> bool {
        let series = self.bucket_series(model, metric);
        series.iter().all(Option::is_some) && series.windows(2).all(|w| w[0].unwrap() <= w[1].unwrap())
    }

    /// Table layout: one line per (group, metric) and one column per model.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["group".to_string(), "metric".to_string()];
        header.extend(self.models.iter().cloned());
        wtr.write_record(&header)?;
        for g in &self.groups {
            for metric in Metric::ALL {
                let mut row = vec![g.group.clone(), metric.label().to_string()];
                row.extend(g.cells.iter().map(|c| match c {
                    Some(c) => format!("{:.6}", c.get(metric)),
                    None => "NA".into(),
                }));
                wtr.write_record(&row)?;
            }
            let mut row = vec![g.group.clone(), "n".to_string()];
            row.extend(g.cells.iter().map(|c| c.as_ref().map_or(0, |c| c.n).to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<eval report>", e))?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn day(i: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(i)
    }

    fn record(code: &str, d: NaiveDate, model: &str, sd: f64) -> ForecastRecord {
        ForecastRecord::new(code, d, model, GaussianMixture::single(0.0, sd).unwrap(), false)
    }

    #[test]
    fn percentile_ranks_mid_rank() {
        assert_eq!(percentile_ranks(&[3.0, 1.0, 2.0, 4.0]), vec![62.5, 12.5, 37.5, 87.5]);
        assert_eq!(percentile_ranks(&[5.0, 5.0]), vec![50.0, 50.0]);
    }

    #[test]
    fn uniform_buckets_hold_a_tenth() {
        let mut rng = seed::rng(1);
        let m = 10_000;
        let realized: Vec<Realized> = (0..m)
            .map(|i| Realized { code: format!("S{i}"), date: day(0), ret: 0.0, rrv: rng.random::<f64>() })
            .collect();
        let forecasts: Vec<ForecastRecord> = realized.iter().map(|r| record(&r.code, r.date, "A", 0.5)).collect();
        let opts = EvalOptions { crps_draws: 16, ..Default::default() };
        let losses = score_paired(&realized, &forecasts, &opts, 3).unwrap();
        let report = bucket_by_volatility(&losses, &opts);
        assert_eq!(report.groups.len(), 6);
        for g in &report.groups[1..] {
            assert_eq!(g.n, 1000, "{}", g.group);
        }
    }

    #[test]
    fn constant_rrv_flags_buckets() {
        let realized: Vec<Realized> = (0..50)
            .map(|i| Realized { code: "A".into(), date: day(i), ret: 0.01, rrv: 1e-4 })
            .collect();
        let forecasts: Vec<ForecastRecord> = realized.iter().map(|r| record(&r.code, r.date, "M", 0.01)).collect();
        let opts = EvalOptions { crps_draws: 50, ..Default::default() };
        let report = bucket_by_volatility(&score_paired(&realized, &forecasts, &opts, 0).unwrap(), &opts);
        assert!(report.groups[0].cells[0].is_some());
        assert!(report.groups[1..].iter().all(|g| g.flag.is_some() && g.cells[0].is_none()));
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("10%,QLIKE,NA"));
    }

    #[test]
    fn paired_evaluation_uses_the_intersection() {
        let realized: Vec<Realized> = (0..5)
            .map(|i| Realized { code: "A".into(), date: day(i), ret: 0.0, rrv: 1e-4 * (i + 1) as f64 })
            .collect();
        let mut forecasts: Vec<ForecastRecord> = (0..5).map(|i| record("A", day(i), "X", 0.01)).collect();
        forecasts.extend((1..6).map(|i| record("A", day(i), "Y", 0.02)));
        let losses = score_paired(&realized, &forecasts, &EvalOptions::default(), 0).unwrap();
        assert_eq!(losses.models, vec!["X", "Y"]);
        assert_eq!(losses.keys.len(), 4);
        assert!(losses.crps.iter().all(|v| v.len() == 4));
        // first shared day: σ̂ = 1 and σ = √2 in percent units
        assert!((losses.qlike[0][0] - 2f64.sqrt()).abs() < 1e-12);

        forecasts.push(record("A", day(1), "X", 0.03));
        assert!(matches!(score_paired(&realized, &forecasts, &EvalOptions::default(), 0), Err(Error::Schema(_))));
    }

    #[test]
    fn report_json_and_csv_shape() {
        let realized: Vec<Realized> = (0..200)
            .map(|i| Realized { code: format!("C{}", i % 4), date: day(i / 4), ret: 0.001 * (i % 7) as f64, rrv: 1e-5 * (1 + i % 13) as f64 })
            .collect();
        let mut forecasts = Vec::new();
        for model in ["M1", "M2", "M3"] {
            forecasts.extend(realized.iter().map(|r| record(&r.code, r.date, model, 0.01)));
        }
        let opts = EvalOptions { crps_draws: 100, ..Default::default() };
        let report = bucket_by_volatility(&score_paired(&realized, &forecasts, &opts, 5).unwrap(), &opts);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "group,metric,M1,M2,M3");
        assert_eq!(text.lines().count(), 1 + 6 * 4);
        let mut json = Vec::new();
        report.write_json(&mut json).unwrap();
        let back: EvalReport = serde_json::from_slice(&json).unwrap();
        assert_eq!(back.models, report.models);
        assert_eq!(back.groups.len(), 6);
        // identical forecasters see identical CRPS draws
        let t = report.group("total").unwrap();
        assert_eq!(t.cells[0], t.cells[1]);
    }
}
