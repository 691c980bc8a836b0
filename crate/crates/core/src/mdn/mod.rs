//! Mixture density networks over indicator windows, with an optional
//! stock-code embedding branch (MDNe).
//!
//! The encoder embeds each indicator's history in fixed-length segments, then
//! alternates attention across segments within an indicator and across
//! indicators within a segment, and mean-pools the result. A fusion network
//! maps the pooled vector (concatenated with the reduced code embedding when
//! enabled) to the weights, means and scales of a Gaussian mixture.

mod config;
mod model;
mod train;
mod vocab;

pub use config::{ModelConfig, TrainConfig};
pub use model::{EmbeddingMap, ForecastRecord, Heads, MdnModel, ModelSidecar};
pub use train::{fit, label_scale, rolling_data, train_rolling, EpochLog, RollData, RollResult, TrainedModel};
pub use vocab::CodeVocabulary;

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// One JSON object per line.
pub fn write_forecasts<W: Write>(records: &[ForecastRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<forecasts>", e))?;
    }
    Ok(())
}

pub fn read_forecasts<R: BufRead>(r: R) -> Result<Vec<ForecastRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<forecasts>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ForecastRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Schema(format!("forecast line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::GaussianMixture;
    use chrono::NaiveDate;

    #[test]
    fn forecast_jsonl_round_trip() {
        let d = NaiveDate::from_ymd_opt(2021, 3, 4).unwrap();
        let m = GaussianMixture::new(vec![0.3, 0.7], vec![-0.01, 0.002], vec![0.02, 0.01]).unwrap();
        let recs = vec![
            ForecastRecord::new("A", d, "MDNe", m.clone(), false),
            ForecastRecord::new("B", d, "MDNe", m, true),
        ];
        let mut buf = Vec::new();
        write_forecasts(&recs, &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|b| **b == b'\n').count(), 2);
        assert_eq!(read_forecasts(buf.as_slice()).unwrap(), recs);
        assert!(read_forecasts(&b"{not json}\n"[..]).is_err());
    }
}
