//! Run configuration shared by every pipeline command.
//!
//! Values are resolved in this order, later sources winning: built-in
//! defaults, the TOML config file, `key.path=value` overrides, then dedicated
//! command-line flags.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::features::FillPolicy;
use crate::garch::{FitOptions, Variant};
use crate::ingest::{DailySchema, ReturnProcess, RollingScheme, SessionConfig, SplitRequest, StockGroup, SynthSpec};
use crate::mdn::{ModelConfig, TrainConfig};
use crate::viz::TsneOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Daily OHLCV CSV read by `ingest`.
    pub daily: Option<PathBuf>,
    /// Optional intraday high/low CSV.
    pub intraday: Option<PathBuf>,
    pub schema: DailySchema,
    pub sessions: SessionConfig,
    /// Codes with fewer calendar days between first and last bar are dropped
    /// at ingest (two years by default).
    pub min_history_days: i64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            daily: None,
            intraday: None,
            schema: DailySchema::default(),
            sessions: SessionConfig::default(),
            min_history_days: 730,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub fill: FillPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GarchConfig {
    pub variants: Vec<Variant>,
    pub min_obs: usize,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for GarchConfig {
    fn default() -> Self {
        let fit = FitOptions::default();
        Self {
            variants: Variant::ALL.to_vec(),
            min_obs: fit.min_obs,
            max_iter: fit.max_iter,
            tolerance: fit.tolerance,
        }
    }
}

impl GarchConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions { min_obs: self.min_obs, max_iter: self.max_iter, tolerance: self.tolerance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmConfig {
    /// Newey-West lag; 0 uses the plain variance.
    pub lag: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VizConfig {
    /// Model whose last-roll embeddings are plotted.
    pub model: String,
    /// Any of `std60`, `turnover`, `bias5`.
    pub attributes: Vec<String>,
    /// Attribute look-back ending at the last test day, in years.
    pub attribute_years: u32,
    pub tsne: TsneOptions,
}

impl Default for VizConfig {
    fn default() -> Self {
        Self {
            model: "MDNe".into(),
            attributes: vec!["std60".into(), "turnover".into(), "bias5".into()],
            attribute_years: 2,
            tsne: TsneOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustConfig {
    pub runs: usize,
    pub model: String,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self { runs: 30, model: "MDNe".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Network variants trained by `train`: `MDNe` and/or `MDN`.
    pub mdn_models: Vec<String>,
    pub data: DataConfig,
    pub synth: SynthSpec,
    pub split: SplitRequest,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub garch: GarchConfig,
    pub eval: EvalOptions,
    pub dm: DmConfig,
    pub viz: VizConfig,
    pub robust: RobustConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 20240601,
            output_dir: PathBuf::from("out"),
            mdn_models: vec!["MDNe".into(), "MDN".into()],
            data: DataConfig::default(),
            synth: SynthSpec::default(),
            split: SplitRequest::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            garch: GarchConfig::default(),
            eval: EvalOptions::default(),
            dm: DmConfig::default(),
            viz: VizConfig::default(),
            robust: RobustConfig::default(),
        }
    }
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

impl RunConfig {
    /// Twelve synthetic stocks in three volatility groups over 420 trading
    /// days, one training roll and a small network.
    pub fn smoke() -> Self {
        let group = |prefix: &str, scale: f64| StockGroup {
            prefix: prefix.into(),
            count: 4,
            process: ReturnProcess::Garch { omega: 0.05, alpha: 0.10, beta: 0.85, scale },
        };
        Self {
            seed: 7,
            synth: SynthSpec {
                start_date: ymd(2018, 1, 1),
                days: 420,
                intervals_per_day: 16,
                substeps: 4,
                groups: vec![group("L", 0.006), group("M", 0.012), group("H", 0.024)],
                ..SynthSpec::default()
            },
            split: SplitRequest {
                train_start: ymd(2018, 1, 1),
                train_end: ymd(2018, 12, 31),
                validation_start: ymd(2018, 10, 1),
                validation_end: ymd(2018, 12, 31),
                test_start: ymd(2019, 1, 1),
                test_end: ymd(2019, 8, 31),
                rolling: RollingScheme::Annual,
            },
            model: ModelConfig::smoke(),
            train: TrainConfig { learning_rate: 3e-3, batch_size: 128, max_epochs: 20, patience: 4, ..TrainConfig::default() },
            eval: EvalOptions { crps_draws: 500, ..EvalOptions::default() },
            viz: VizConfig { tsne: TsneOptions { iterations: 500, ..TsneOptions::default() }, ..VizConfig::default() },
            robust: RobustConfig { runs: 10, ..RobustConfig::default() },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        // relative data paths are taken from the config file's directory
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.data.daily, &mut cfg.data.intraday].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        for m in &self.mdn_models {
            if m != "MDNe" && m != "MDN" {
                return Err(Error::Config(format!("unknown network {m:?}; expected MDNe or MDN")));
            }
        }
        for a in &self.viz.attributes {
            if !["std60", "turnover", "bias5"].contains(&a.as_str()) {
                return Err(Error::Config(format!("unknown attribute {a:?}")));
            }
        }
        if self.robust.runs < 2 {
            return Err(Error::Config("robust.runs must be at least 2".into()));
        }
        Ok(())
    }

    /// Model config for a network name, with the embedding switch set.
    pub fn network(&self, name: &str) -> ModelConfig {
        ModelConfig { use_code_embedding: name == "MDNe", ..self.model.clone() }
    }
}

/// `a.b.c=value`, where `value` is a TOML value or else a bare string.
fn apply_override(table: &mut toml::Table, raw: &str) -> Result<()> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {raw:?} is not key=value")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {part} is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sede = 3", &[]).is_err());
        assert!(RunConfig::from_toml("[model]\nwidth = 3", &[]).is_err());
    }

    #[test]
    fn overrides_win_over_file() {
        let cfg = RunConfig::from_toml(
            "seed = 1\n[train]\nmax_epochs = 5\n",
            &["seed=9".into(), "train.max_epochs=7".into(), "output_dir=elsewhere".into(), "garch.variants=[\"GJR\"]".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.max_epochs, 7);
        assert_eq!(cfg.output_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.garch.variants, vec![Variant::Gjr]);
        assert!(RunConfig::from_toml("", &["no_equals".into()]).is_err());
        assert!(RunConfig::from_toml("", &["mdn_models=[\"RNN\"]".into()]).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::smoke();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap(), &[]).unwrap(), cfg);
    }

    #[test]
    fn network_switch() {
        let cfg = RunConfig::default();
        assert!(cfg.network("MDNe").use_code_embedding);
        assert!(!cfg.network("MDN").use_code_embedding);
    }
}
