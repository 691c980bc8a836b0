use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive date interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RollingScheme {
    /// First trading day of every calendar year inside the test range.
    Annual,
    /// First trading day of every calendar quarter inside the test range.
    Quarterly,
    /// Single fit before the test range.
    None,
    /// Explicit dates, snapped forward to trading days.
    Explicit(Vec<NaiveDate>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRequest {
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub validation_start: NaiveDate,
    pub validation_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
    pub rolling: RollingScheme,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

impl Default for SplitRequest {
    /// Train 2018–2020 holding out 2020H2 for validation, test 2021–2022,
    /// re-fitting at the start of each test year.
    fn default() -> Self {
        Self {
            train_start: ymd(2018, 1, 1),
            train_end: ymd(2020, 12, 31),
            validation_start: ymd(2020, 7, 1),
            validation_end: ymd(2020, 12, 31),
            test_start: ymd(2021, 1, 1),
            test_end: ymd(2022, 12, 31),
            rolling: RollingScheme::Annual,
        }
    }
}

/// Train/validation/test ranges snapped to trading days.
///
/// Training data is `train` minus `validation`. Samples are assigned to a
/// range by the date of their label (the forecast target day).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
    pub rolling_boundaries: Vec<NaiveDate>,
}

impl SplitPlan {
    pub fn is_train(&self, d: NaiveDate) -> bool {
        self.train.contains(d) && !self.validation.contains(d)
    }

    /// Rolling windows as `(boundary, next_boundary_or_after_test_end)`.
    pub fn rolls(&self) -> Vec<(NaiveDate, NaiveDate)> {
        let after_end = self.test.end.succ_opt().expect("date in range");
        self.rolling_boundaries
            .iter()
            .enumerate()
            .map(|(i, &b)| (b, self.rolling_boundaries.get(i + 1).copied().unwrap_or(after_end)))
            .collect()
    }

    /// Validation window used before `boundary`: the validation range shifted
    /// so that it ends immediately before the boundary. For the first roll this
    /// is the configured validation range itself.
    pub fn validation_before(&self, boundary: NaiveDate, calendar: &[NaiveDate]) -> DateRange {
        if Some(&boundary) == self.rolling_boundaries.first() {
            return self.validation;
        }
        let span = self.validation.end - self.validation.start;
        let end = calendar
            .iter()
            .rev()
            .find(|d| **d < boundary)
            .copied()
            .unwrap_or(self.validation.end);
        let start = calendar
            .iter()
            .find(|d| **d >= end - span)
            .copied()
            .unwrap_or(self.validation.start);
        DateRange { start, end }
    }
}

fn snap(calendar: &[NaiveDate], start: NaiveDate, end: NaiveDate, what: &str) -> Result<DateRange> {
    if start > end {
        return Err(Error::Range(format!("{what}: start {start} after end {end}")));
    }
    let first = calendar.iter().find(|d| **d >= start).copied();
    let last = calendar.iter().rev().find(|d| **d <= end).copied();
    match (first, last) {
        (Some(s), Some(e)) if s <= e => Ok(DateRange { start: s, end: e }),
        _ => Err(Error::Range(format!(
            "{what} range {start}..{end} contains no trading days"
        ))),
    }
}

pub fn make_split(calendar: &[NaiveDate], req: &SplitRequest) -> Result<SplitPlan> {
    if calendar.is_empty() {
        return Err(Error::Range("empty calendar".into()));
    }
    let train = snap(calendar, req.train_start, req.train_end, "train")?;
    let validation = snap(calendar, req.validation_start, req.validation_end, "validation")?;
    let test = snap(calendar, req.test_start, req.test_end, "test")?;
    if !(train.contains(validation.start) && train.contains(validation.end)) {
        return Err(Error::Range("validation range must lie inside the training window".into()));
    }
    if validation.start == train.start {
        return Err(Error::Range("validation leaves no training days".into()));
    }
    if test.start <= train.end {
        return Err(Error::Range(format!(
            "test range starts {} before training ends {}",
            test.start, train.end
        )));
    }
    let in_test: Vec<NaiveDate> = calendar.iter().copied().filter(|d| test.contains(*d)).collect();
    let mut boundaries: Vec<NaiveDate> = match &req.rolling {
        RollingScheme::None => vec![test.start],
        RollingScheme::Annual => first_per_period(&in_test, |d| d.year() as i64),
        RollingScheme::Quarterly => {
            first_per_period(&in_test, |d| d.year() as i64 * 4 + (d.month0() / 3) as i64)
        }
        RollingScheme::Explicit(dates) => {
            let mut out = Vec::new();
            for d in dates {
                let snapped = in_test.iter().find(|x| *x >= d).copied().ok_or_else(|| {
                    Error::Range(format!("rolling boundary {d} outside the test range"))
                })?;
                out.push(snapped);
            }
            out
        }
    };
    if boundaries.first() != Some(&test.start) {
        boundaries.insert(0, test.start);
    }
    boundaries.sort();
    boundaries.dedup();
    Ok(SplitPlan {
        train,
        validation,
        test,
        rolling_boundaries: boundaries,
    })
}

fn first_per_period(days: &[NaiveDate], period: impl Fn(&NaiveDate) -> i64) -> Vec<NaiveDate> {
    let mut out: Vec<NaiveDate> = Vec::new();
    let mut last = None;
    for d in days {
        let p = period(d);
        if last != Some(p) {
            out.push(*d);
            last = Some(p);
        }
    }
    out
}

/// Weekday calendar of `n` days starting at the first weekday ≥ `start`.
pub fn weekday_calendar(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if d.weekday().number_from_monday() <= 5 {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five_years() -> Vec<NaiveDate> {
        let start = ymd(2018, 1, 1);
        weekday_calendar(start, 1305)
            .into_iter()
            .filter(|d| d.year() <= 2022)
            .collect()
    }

    #[test]
    fn default_split_on_five_year_calendar() {
        let cal = five_years();
        let plan = make_split(&cal, &SplitRequest::default()).unwrap();
        assert_eq!(plan.validation.start, ymd(2020, 7, 1));
        assert_eq!(plan.validation.end, ymd(2020, 12, 31));
        assert_eq!(plan.test.start, ymd(2021, 1, 1));
        assert_eq!(plan.test.end, ymd(2022, 12, 30));
        assert_eq!(plan.rolling_boundaries, vec![ymd(2021, 1, 1), ymd(2022, 1, 3)]);
        assert!(plan.is_train(ymd(2019, 5, 6)));
        assert!(!plan.is_train(ymd(2020, 8, 3)));
        // three disjoint groups over the calendar
        for d in &cal {
            let n = [plan.is_train(*d), plan.validation.contains(*d), plan.test.contains(*d)]
                .iter()
                .filter(|x| **x)
                .count();
            assert!(n <= 1);
        }
        assert_eq!(plan.validation_before(plan.rolling_boundaries[0], &cal), plan.validation);
        let later = plan.validation_before(plan.rolling_boundaries[1], &cal);
        assert_eq!(later.end, ymd(2021, 12, 31));
        assert_eq!(later.start, ymd(2021, 7, 1));
    }

    #[test]
    fn overlapping_test_rejected() {
        let cal = weekday_calendar(ymd(2018, 1, 1), 250);
        let req = SplitRequest {
            train_start: ymd(2018, 1, 1),
            train_end: ymd(2018, 12, 31),
            validation_start: ymd(2018, 10, 1),
            validation_end: ymd(2018, 12, 31),
            test_start: ymd(2018, 1, 1),
            test_end: ymd(2018, 12, 31),
            rolling: RollingScheme::Annual,
        };
        assert!(matches!(make_split(&cal, &req), Err(Error::Range(_))));
    }

    #[test]
    fn out_of_data_range_rejected() {
        let cal = weekday_calendar(ymd(2018, 1, 1), 250);
        assert!(matches!(make_split(&cal, &SplitRequest::default()), Err(Error::Range(_))));
    }

    #[test]
    fn quarterly_boundaries() {
        let cal = five_years();
        let req = SplitRequest {
            rolling: RollingScheme::Quarterly,
            ..Default::default()
        };
        let plan = make_split(&cal, &req).unwrap();
        assert_eq!(plan.rolling_boundaries.len(), 8);
        assert!(plan.rolling_boundaries.iter().all(|d| plan.test.contains(*d)));
        assert_eq!(plan.rolls().len(), 8);
        assert_eq!(plan.rolls().last().unwrap().1, ymd(2022, 12, 31));
    }

    #[test]
    fn explicit_boundaries_snap_forward() {
        let cal = five_years();
        let req = SplitRequest {
            rolling: RollingScheme::Explicit(vec![ymd(2021, 6, 5)]),
            ..Default::default()
        };
        let plan = make_split(&cal, &req).unwrap();
        assert_eq!(plan.rolling_boundaries, vec![ymd(2021, 1, 1), ymd(2021, 6, 7)]);
    }
}
