//! Daily and intraday CSV readers/writers.
//!
//! Daily header: `date,code,open,high,low,close,volume[,preclose]` plus the
//! optional `turnover` / `shares_outstanding` columns. Intraday header:
//! `date,code,interval_index,high,low` or `timestamp,code,high,low`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use super::panel::{DailyBar, IntradayDay, IntradayFragment, MarketPanel};
use crate::error::{Error, Result, RowError};

/// Parsed value together with the rows that were rejected on the way.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub value: T,
    pub rejected: Vec<RowError>,
    pub warnings: Vec<String>,
}

impl<T> Loaded<T> {
    /// Fail with the row diagnostics if anything was rejected.
    pub fn strict(self) -> Result<T> {
        if self.rejected.is_empty() {
            Ok(self.value)
        } else {
            Err(Error::Rows(self.rejected))
        }
    }
}

/// Column names for the daily file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DailySchema {
    pub date: String,
    pub code: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: String,
    pub preclose: String,
    pub turnover: String,
    pub shares_outstanding: String,
}

impl Default for DailySchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            code: "code".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            volume: "volume".into(),
            preclose: "preclose".into(),
            turnover: "turnover".into(),
            shares_outstanding: "shares_outstanding".into(),
        }
    }
}

/// Trading sessions used to turn intraday timestamps into interval indices.
///
/// Bars are stamped with their end time: a timestamp `t` with
/// `start < t ≤ end` and `(t − start)` a multiple of the interval belongs to
/// that session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub interval_minutes: u32,
    pub sessions: Vec<(NaiveTime, NaiveTime)>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let t = |h, m| NaiveTime::from_hms_opt(h, m, 0).unwrap();
        Self {
            interval_minutes: 5,
            sessions: vec![(t(9, 30), t(11, 30)), (t(13, 0), t(15, 0))],
        }
    }
}

impl SessionConfig {
    pub fn intervals_per_day(&self) -> u32 {
        self.sessions
            .iter()
            .map(|(s, e)| ((*e - *s).num_minutes() / self.interval_minutes as i64) as u32)
            .sum()
    }

    /// 1-based interval index for a bar ending at `time`.
    pub fn interval_index(&self, time: NaiveTime) -> Option<u32> {
        let step = self.interval_minutes as i64;
        let mut base = 0u32;
        for (start, end) in &self.sessions {
            let per = ((*end - *start).num_minutes() / step) as u32;
            if time > *start && time <= *end {
                let offset = (time - *start).num_minutes();
                if (time - *start).num_seconds() % 60 != 0 || offset % step != 0 {
                    return None;
                }
                return Some(base + (offset / step) as u32);
            }
            base += per;
        }
        None
    }
}

fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| format!("bad date {s:?}: {e}"))
}

fn parse_timestamp(s: &str) -> std::result::Result<NaiveDateTime, String> {
    let s = s.trim();
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .ok_or_else(|| format!("bad timestamp {s:?}"))
}

fn parse_num(s: &str, what: &str) -> std::result::Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| format!("bad {what} {s:?}"))
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn load_daily_csv(path: &Path, schema: &DailySchema) -> Result<Loaded<MarketPanel>> {
    read_daily(open(path)?, schema)
}

struct RawDaily {
    line: usize,
    bar: DailyBar,
}

pub fn read_daily<R: Read>(reader: R, schema: &DailySchema) -> Result<Loaded<MarketPanel>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::EmptyInput("daily file has no header".into()));
    }
    let required = [
        &schema.date,
        &schema.code,
        &schema.open,
        &schema.high,
        &schema.low,
        &schema.close,
        &schema.volume,
    ];
    let mut cols = Vec::with_capacity(required.len());
    for name in required {
        cols.push(
            header_index(&headers, name)
                .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))?,
        );
    }
    let preclose_col = header_index(&headers, &schema.preclose);
    let turnover_col = header_index(&headers, &schema.turnover);
    let shares_col = header_index(&headers, &schema.shares_outstanding);

    let mut rejected = Vec::new();
    let mut raw: BTreeMap<String, Vec<RawDaily>> = BTreeMap::new();
    let mut n_records = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        n_records += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let field = |c: usize| record.get(c).unwrap_or("");
        let optional = |c: Option<usize>, what: &str| -> std::result::Result<Option<f64>, String> {
            match c.map(field).map(str::trim) {
                None | Some("") => Ok(None),
                Some(s) => parse_num(s, what).map(Some),
            }
        };
        let parsed = (|| -> std::result::Result<DailyBar, String> {
            let code = field(cols[1]).trim().to_string();
            if code.is_empty() {
                return Err("empty code".into());
            }
            let close = parse_num(field(cols[5]), "close")?;
            Ok(DailyBar {
                date: parse_date(field(cols[0]))?,
                code,
                open: parse_num(field(cols[2]), "open")?,
                high: parse_num(field(cols[3]), "high")?,
                low: parse_num(field(cols[4]), "low")?,
                close,
                volume: parse_num(field(cols[6]), "volume")?,
                preclose: match preclose_col {
                    Some(c) => parse_num(field(c), "preclose")?,
                    None => f64::NAN,
                },
                turnover: optional(turnover_col, "turnover")?,
                shares_outstanding: optional(shares_col, "shares_outstanding")?,
            })
        })();
        match parsed {
            Ok(bar) => raw.entry(bar.code.clone()).or_default().push(RawDaily { line, bar }),
            Err(message) => rejected.push(RowError { line, message }),
        }
    }
    if n_records == 0 {
        return Err(Error::EmptyInput("daily file has no rows".into()));
    }

    let mut bars = Vec::new();
    for (_, mut rows) in raw {
        rows.sort_by_key(|r| (r.bar.date, r.line));
        if preclose_col.is_none() {
            // preclose is the previous close of the same code; the first day has none
            for i in (1..rows.len()).rev() {
                rows[i].bar.preclose = rows[i - 1].bar.close;
            }
            if !rows.is_empty() {
                rows.remove(0);
            }
        }
        let mut last_date = None;
        for RawDaily { line, bar } in rows {
            if last_date == Some(bar.date) {
                rejected.push(RowError {
                    line,
                    message: format!("duplicate date {} for {}", bar.date, bar.code),
                });
                continue;
            }
            match bar.validate() {
                Ok(()) => {
                    last_date = Some(bar.date);
                    bars.push(bar);
                }
                Err(message) => rejected.push(RowError { line, message }),
            }
        }
    }
    rejected.sort_by_key(|r| r.line);
    Ok(Loaded {
        value: MarketPanel::new(bars)?,
        rejected,
        warnings: Vec::new(),
    })
}

pub fn load_intraday_csv(path: &Path, sessions: &SessionConfig) -> Result<Loaded<IntradayFragment>> {
    read_intraday(open(path)?, sessions)
}

pub fn read_intraday<R: Read>(reader: R, sessions: &SessionConfig) -> Result<Loaded<IntradayFragment>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let headers = rdr.headers()?.clone();
    let need = |name: &str| {
        header_index(&headers, name).ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let code_col = need("code")?;
    let high_col = need("high")?;
    let low_col = need("low")?;
    enum Keying {
        Indexed { date: usize, index: usize },
        Stamped { ts: usize },
    }
    let keying = match (header_index(&headers, "date"), header_index(&headers, "interval_index")) {
        (Some(date), Some(index)) => Keying::Indexed { date, index },
        _ => Keying::Stamped { ts: need("timestamp")? },
    };

    let mut rejected = Vec::new();
    let mut fragment = IntradayFragment::new();
    let mut n_records = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        n_records += 1;
        let parsed = record.map_err(|e| e.to_string()).and_then(|record| {
            let field = |c: usize| record.get(c).unwrap_or("");
            let (date, index) = match keying {
                Keying::Indexed { date, index } => {
                    let idx: u32 = field(index)
                        .trim()
                        .parse()
                        .map_err(|_| format!("bad interval_index {:?}", field(index)))?;
                    if idx == 0 {
                        return Err("interval_index starts at 1".to_string());
                    }
                    (parse_date(field(date))?, idx)
                }
                Keying::Stamped { ts } => {
                    let stamp = parse_timestamp(field(ts))?;
                    let idx = sessions
                        .interval_index(stamp.time())
                        .ok_or_else(|| format!("timestamp {stamp} outside configured sessions"))?;
                    (stamp.date(), idx)
                }
            };
            let high = parse_num(field(high_col), "high")?;
            let low = parse_num(field(low_col), "low")?;
            if !(low > 0.0 && low.is_finite() && high.is_finite()) {
                return Err("intraday prices must be finite and > 0".into());
            }
            if high < low {
                return Err(format!("high {high} < low {low}"));
            }
            Ok((field(code_col).trim().to_string(), date, index, high, low))
        });
        match parsed {
            Ok((code, date, index, high, low)) => {
                let day = fragment.entry(code).or_default().entry(date).or_default();
                if day.intervals.iter().any(|(i, _, _)| *i == index) {
                    rejected.push(RowError {
                        line,
                        message: format!("duplicate interval {index}"),
                    });
                } else {
                    day.intervals.push((index, high, low));
                }
            }
            Err(message) => rejected.push(RowError { line, message }),
        }
    }
    if n_records == 0 {
        return Err(Error::EmptyInput("intraday file has no rows".into()));
    }
    let mut warnings = Vec::new();
    for (code, days) in fragment.iter_mut() {
        for (date, day) in days.iter_mut() {
            day.intervals.sort_by_key(|(i, _, _)| *i);
            for gap in day.gaps() {
                warnings.push(format!("{code} {date}: missing interval {gap}"));
            }
        }
    }
    Ok(Loaded {
        value: fragment,
        rejected,
        warnings,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the daily CSV including `preclose`, so that reading the output
/// back reproduces the panel exactly.
pub fn write_daily<W: Write>(panel: &MarketPanel, writer: W) -> Result<()> {
    let with_turnover = panel.all_bars().any(|b| b.turnover.is_some());
    let with_shares = panel.all_bars().any(|b| b.shares_outstanding.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date", "code", "open", "high", "low", "close", "volume", "preclose"];
    if with_turnover {
        header.push("turnover");
    }
    if with_shares {
        header.push("shares_outstanding");
    }
    w.write_record(&header)?;
    for b in panel.all_bars() {
        let mut row = vec![
            b.date.to_string(),
            b.code.clone(),
            b.open.to_string(),
            b.high.to_string(),
            b.low.to_string(),
            b.close.to_string(),
            b.volume.to_string(),
            b.preclose.to_string(),
        ];
        if with_turnover {
            row.push(fmt_opt(b.turnover));
        }
        if with_shares {
            row.push(fmt_opt(b.shares_outstanding));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<daily csv>", e))?;
    Ok(())
}

pub fn write_intraday<W: Write>(fragment: &IntradayFragment, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "code", "interval_index", "high", "low"])?;
    for (code, days) in fragment {
        for (date, IntradayDay { intervals }) in days {
            for (idx, high, low) in intervals {
                w.write_record([
                    date.to_string(),
                    code.clone(),
                    idx.to_string(),
                    high.to_string(),
                    low.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<intraday csv>", e))?;
    Ok(())
}
