//! File-based commands behind the CLI. Each command reads the artifacts of
//! the stages before it from the output directory and writes its own.
//!
//! ```text
//! out/
//!   panel/      daily.csv intraday.csv manifest.json [groups.csv]
//!   features/   samples.bin split.json
//!   train/<M>/  rolls.json roll<k>/{checkpoint.json,sidecar.json,log.csv}
//!   garch/      fits.csv forecasts.jsonl skipped.csv
//!   forecasts/  forecasts.jsonl
//!   eval/       report.csv report.json losses.csv
//!   dm/         dm_mse.csv dm_qlike.csv dm.json
//!   viz/        embeddings.csv tsne_<attr>.csv tsne_<attr>.svg
//!   robust/     runs.csv summary.csv
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{
    bucket_by_volatility, robustness_summary, score_paired, write_robust_runs, write_robust_summary, DmMatrix, Metric,
    PairedLosses, Realized, RobustRun,
};
use crate::features::{build_samples, compute_attributes, read_sample_cache, write_sample_cache, FeatureSample, SampleSet};
use crate::garch::{self, FitRow, GarchFit, GarchSpec, Variant};
use crate::ingest::{
    generate_synthetic_market, load_daily_csv, load_intraday_csv, make_split, read_daily, read_intraday, write_daily,
    write_intraday, DailySchema, DateRange, MarketPanel, SessionConfig, SplitPlan,
};
use crate::mdn::{read_forecasts, rolling_data, train_rolling, write_forecasts, ForecastRecord, MdnModel, ModelSidecar};
use crate::nn::Checkpoint;
use crate::viz::{rank_colors, tsne, write_scatter_csv, write_scatter_svg, ScatterPoint};
use crate::{par, seed};

pub const PANEL_SCHEMA_VERSION: u32 = 1;

/// What a command did, for the caller to print.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub messages: Vec<String>,
    pub artifacts: Vec<PathBuf>,
}

impl Outcome {
    fn say(&mut self, msg: impl Into<String>) {
        self.messages.push(msg.into());
    }
}

/// Artifact locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    pub fn panel_manifest(&self) -> PathBuf {
        self.dir("panel").join("manifest.json")
    }

    pub fn samples(&self) -> PathBuf {
        self.dir("features").join("samples.bin")
    }

    pub fn split(&self) -> PathBuf {
        self.dir("features").join("split.json")
    }

    pub fn model_dir(&self, model: &str) -> PathBuf {
        self.dir("train").join(model)
    }

    pub fn roll_dir(&self, model: &str, index: usize) -> PathBuf {
        self.model_dir(model).join(format!("roll{index:02}"))
    }

    pub fn garch_forecasts(&self) -> PathBuf {
        self.dir("garch").join("forecasts.jsonl")
    }

    pub fn forecasts(&self) -> PathBuf {
        self.dir("forecasts").join("forecasts.jsonl")
    }

    pub fn losses(&self) -> PathBuf {
        self.dir("eval").join("losses.csv")
    }
}

fn require(path: &Path, producer: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact { path: path.to_path_buf(), producer })
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelManifest {
    pub schema_version: u32,
    pub stocks: usize,
    pub days: usize,
    pub bars: usize,
    pub first_day: Option<NaiveDate>,
    pub last_day: Option<NaiveDate>,
    pub has_intraday: bool,
    pub daily_sha256: String,
    pub intraday_sha256: Option<String>,
    pub excluded: Vec<String>,
}

fn write_panel(layout: &Layout, panel: &MarketPanel, excluded: Vec<String>, out: &mut Outcome) -> Result<PanelManifest> {
    let dir = layout.dir("panel");
    let daily = dir.join("daily.csv");
    let mut w = create(&daily)?;
    write_daily(panel, &mut w)?;
    w.flush().map_err(|e| Error::io(&daily, e))?;
    let intraday = dir.join("intraday.csv");
    let intraday_sha256 = if panel.has_intraday() {
        let mut w = create(&intraday)?;
        write_intraday(panel.intraday_fragment(), &mut w)?;
        w.flush().map_err(|e| Error::io(&intraday, e))?;
        out.artifacts.push(intraday.clone());
        Some(sha256_file(&intraday)?)
    } else {
        if intraday.exists() {
            fs::remove_file(&intraday).map_err(|e| Error::io(&intraday, e))?;
        }
        None
    };
    let manifest = PanelManifest {
        schema_version: PANEL_SCHEMA_VERSION,
        stocks: panel.n_codes(),
        days: panel.calendar().len(),
        bars: panel.n_bars(),
        first_day: panel.calendar().first().copied(),
        last_day: panel.calendar().last().copied(),
        has_intraday: panel.has_intraday(),
        daily_sha256: sha256_file(&daily)?,
        intraday_sha256,
        excluded,
    };
    write_json(&layout.panel_manifest(), &manifest)?;
    out.artifacts.push(daily);
    out.artifacts.push(layout.panel_manifest());
    out.say(format!(
        "panel: {} stocks, {} days, {} bars{}",
        manifest.stocks,
        manifest.days,
        manifest.bars,
        if manifest.has_intraday { ", with intraday ranges" } else { "" }
    ));
    if !manifest.excluded.is_empty() {
        out.say(format!("excluded for short history: {}", manifest.excluded.join(", ")));
    }
    Ok(manifest)
}

/// Reload the cached panel, checking the schema version.
pub fn load_panel(layout: &Layout) -> Result<MarketPanel> {
    let manifest_path = layout.panel_manifest();
    require(&manifest_path, "ingest")?;
    let manifest: PanelManifest = read_json(&manifest_path)?;
    if manifest.schema_version != PANEL_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "panel cache schema {} (expected {PANEL_SCHEMA_VERSION}); re-run ingest",
            manifest.schema_version
        )));
    }
    let dir = layout.dir("panel");
    let panel = read_daily(open(&dir.join("daily.csv"))?, &DailySchema::default())?.strict()?;
    if manifest.has_intraday {
        let fragment = read_intraday(open(&dir.join("intraday.csv"))?, &SessionConfig::default())?.strict()?;
        Ok(panel.with_intraday(fragment).0)
    } else {
        Ok(panel)
    }
}

/// Validate raw CSV input and cache it as a panel.
pub fn cmd_ingest(cfg: &RunConfig) -> Result<Outcome> {
    let layout = Layout::new(&cfg.output_dir);
    let daily = cfg
        .data
        .daily
        .as_ref()
        .ok_or_else(|| Error::Config("data.daily is not set".into()))?;
    let mut out = Outcome::default();
    let loaded = load_daily_csv(daily, &cfg.data.schema)?;
    for w in &loaded.warnings {
        out.say(format!("warning: {w}"));
    }
    let mut panel = loaded.strict()?;
    if let Some(path) = &cfg.data.intraday {
        let loaded = load_intraday_csv(path, &cfg.data.sessions)?;
        if !loaded.warnings.is_empty() {
            out.say(format!("{} intraday warnings; first: {}", loaded.warnings.len(), loaded.warnings[0]));
        }
        let (with, dropped) = panel.with_intraday(loaded.strict()?);
        panel = with;
        if !dropped.is_empty() {
            out.say(format!("{} intraday days without a daily bar were dropped", dropped.len()));
        }
    }
    let (panel, excluded) = panel.exclude_short_histories(cfg.data.min_history_days);
    if panel.n_codes() == 0 {
        return Err(Error::EmptyInput(format!(
            "all {} codes have under {} days of history (data.min_history_days)",
            excluded.len(),
            cfg.data.min_history_days
        )));
    }
    write_panel(&layout, &panel, excluded, &mut out)?;
    Ok(out)
}

/// Generate a synthetic market into the panel cache, plus each code's group.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Outcome> {
    let layout = Layout::new(&cfg.output_dir);
    let market = generate_synthetic_market(&cfg.synth, seed::derive(cfg.seed, "synth"))?;
    let mut out = Outcome::default();
    write_panel(&layout, &market.panel, Vec::new(), &mut out)?;
    let groups = layout.dir("panel").join("groups.csv");
    let mut w = csv::Writer::from_writer(create(&groups)?);
    w.write_record(["code", "group"])?;
    for (code, g) in &market.groups {
        w.write_record([code.clone(), g.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&groups, e))?;
    out.artifacts.push(groups);
    Ok(out)
}

pub fn read_groups(layout: &Layout) -> Result<BTreeMap<String, usize>> {
    let path = layout.dir("panel").join("groups.csv");
    require(&path, "synth")?;
    let mut rdr = csv::Reader::from_reader(open(&path)?);
    let mut out = BTreeMap::new();
    for row in rdr.deserialize() {
        let (code, group): (String, usize) = row?;
        out.insert(code, group);
    }
    Ok(out)
}

/// Indicator windows and labels for every sample inside the split.
pub fn cmd_features(cfg: &RunConfig) -> Result<Outcome> {
    let layout = Layout::new(&cfg.output_dir);
    let panel = load_panel(&layout)?;
    let plan = make_split(panel.calendar(), &cfg.split)?;
    let set = build_samples(&panel, Some(&plan), cfg.model.window, cfg.features.fill)?;
    if set.samples.is_empty() {
        return Err(Error::EmptyInput("no samples inside the split; check the window and dates".into()));
    }
    let mut w = create(&layout.samples())?;
    write_sample_cache(&set, &mut w)?;
    w.flush().map_err(|e| Error::io(layout.samples(), e))?;
    write_json(&layout.split(), &plan)?;
    let mut out = Outcome::default();
    let with_rrv = set.samples.iter().filter(|s| s.label_rrv.is_some()).count();
    out.say(format!(
        "{} samples over {} codes (window {}), {} with realized range volatility; {} rolling window(s)",
        set.samples.len(),
        set.codes.len(),
        set.window,
        with_rrv,
        plan.rolling_boundaries.len()
    ));
    out.artifacts.extend([layout.samples(), layout.split()]);
    Ok(out)
}

fn load_features(layout: &Layout) -> Result<(SampleSet, SplitPlan)> {
    require(&layout.samples(), "features")?;
    require(&layout.split(), "features")?;
    let set = read_sample_cache(open(&layout.samples())?)?;
    let plan: SplitPlan = read_json(&layout.split())?;
    Ok((set, plan))
}

fn sample_calendar(set: &SampleSet) -> Vec<NaiveDate> {
    let mut days: Vec<NaiveDate> = set.samples.iter().flat_map(|s| [s.as_of(), s.label_date]).collect();
    days.sort();
    days.dedup();
    days
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollSummary {
    pub index: usize,
    pub boundary: NaiveDate,
    pub end: NaiveDate,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub test_samples: usize,
    pub best_epoch: usize,
    pub best_validation_nll: f64,
    pub diverged: Option<String>,
}

/// Train every configured network, retraining from scratch at each rolling
/// boundary. `only` restricts training to one network.
pub fn cmd_train(cfg: &RunConfig, only: Option<&str>) -> Result<Outcome> {
    let layout = Layout::new(&cfg.output_dir);
    let (set, plan) = load_features(&layout)?;
    let calendar = sample_calendar(&set);
    let names: Vec<String> = match only {
        Some(m) => vec![m.to_string()],
        None => cfg.mdn_models.clone(),
    };
    let mut out = Outcome::default();
    for name in &names {
        let config = cfg.network(name);
        let data = rolling_data(&set.samples, &plan, &calendar);
        let rolls = train_rolling(&set.samples, &plan, &calendar, &config, &cfg.train, seed::derive(cfg.seed, name))?;
        let mut summaries = Vec::new();
        for (roll, d) in rolls.iter().zip(&data) {
            let dir = layout.roll_dir(name, roll.index);
            create_dir(&dir)?;
            roll.trained.checkpoint().save(&dir.join("checkpoint.json"))?;
            write_json(&dir.join("sidecar.json"), &roll.trained.model.sidecar())?;
            let log_path = dir.join("log.csv");
            let mut w = csv::Writer::from_writer(create(&log_path)?);
            for e in &roll.trained.log {
                w.serialize(e)?;
            }
            w.flush().map_err(|e| Error::io(&log_path, e))?;
            let best = roll.trained.log.iter().find(|e| e.epoch == roll.trained.best_epoch);
            summaries.push(RollSummary {
                index: roll.index,
                boundary: roll.boundary,
                end: roll.end,
                train_samples: d.train.len(),
                validation_samples: d.validation.len(),
                test_samples: d.test.len(),
                best_epoch: roll.trained.best_epoch,
                best_validation_nll: best.map_or(f64::NAN, |e| e.validation_nll),
                diverged: roll.trained.diverged.clone(),
            });
            out.say(format!(
                "{name} roll {} ({}): {} epochs, best {} with validation NLL {:.5}{}",
                roll.index,
                roll.boundary,
                roll.trained.log.len(),
                roll.trained.best_epoch,
                best.map_or(f64::NAN, |e| e.validation_nll),
                roll.trained.diverged.as_ref().map(|m| format!(" (stopped: {m})")).unwrap_or_default()
            ));
            out.artifacts.push(dir);
        }
        write_json(&layout.model_dir(name).join("rolls.json"), &summaries)?;
    }
    Ok(out)
}

/// Close-to-close simple returns with the date of the later close.
fn daily_returns(panel: &MarketPanel, code: &str) -> Vec<(NaiveDate, f64)> {
    let bars = panel.series(code).unwrap_or(&[]);
    bars.windows(2).map(|w| (w[1].date, w[1].close / w[0].close - 1.0)).collect()
}

/// Result of one GARCH fit for a code and roll.
pub struct GarchRollFit {
    pub code: String,
    pub roll_start: NaiveDate,
    pub fit: GarchFit,
    pub forecasts: Vec<ForecastRecord>,
}

/// Fit `variant` on percent returns before `boundary` and forecast every
/// return in `[boundary, end)`.
pub fn fit_garch_roll(
    returns: &[(NaiveDate, f64)],
    code: &str,
    variant: Variant,
    plan: &SplitPlan,
    (boundary, end): (NaiveDate, NaiveDate),
    opts: &garch::FitOptions,
) -> Result<GarchRollFit> {
    let first = returns.iter().position(|(d, _)| *d >= plan.train.start).unwrap_or(returns.len());
    let split = returns.iter().position(|(d, _)| *d >= boundary).unwrap_or(returns.len());
    let stop = returns.iter().position(|(d, _)| *d >= end).unwrap_or(returns.len());
    let pct: Vec<f64> = returns[first..stop].iter().map(|(_, r)| r * 100.0).collect();
    let fit = garch::fit(&pct[..split - first], GarchSpec::new(variant), opts)?;
    let path = fit.filter(&pct);
    let forecasts = (split..stop)
        .map(|i| {
            let var = path[i - first] / 1e4;
            Ok(ForecastRecord::new(code, returns[i].0, variant.name(), garch::to_predictive_distribution(var)?, false))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GarchRollFit { code: code.to_string(), roll_start: boundary, fit, forecasts })
}

/// Fit every configured GARCH variant per code and rolling window.
pub fn cmd_fit_garch(cfg: &RunConfig) -> Result<Outcome> {
    let layout = Layout::new(&cfg.output_dir);
    let panel = load_panel(&layout)?;
    let (_, plan) = load_features(&layout)?;
    let opts = cfg.garch.fit_options();
    let codes: Vec<String> = panel.codes().map(str::to_string).collect();
    let returns: BTreeMap<&str, Vec<(NaiveDate, f64)>> =
        codes.iter().map(|c| (c.as_str(), daily_returns(&panel, c))).collect();
    let mut jobs = Vec::new();
    for &v in &cfg.garch.variants {
        for roll in plan.rolls() {
            for c in &codes {
                jobs.push((v, roll, c.as_str()));
            }
        }
    }
    let results = par::map(&jobs, |&(v, roll, code)| fit_garch_roll(&returns[code], code, v, &plan, roll, &opts));

    let dir = layout.dir("garch");
    let mut fits = Vec::new();
    let skipped_path = dir.join("skipped.csv");
    let mut skipped = csv::Writer::from_writer(create(&skipped_path)?);
    skipped.write_record(["code", "roll_start", "model", "reason"])?;
    let mut n_skipped = 0;
    for ((v, roll, code), r) in jobs.iter().zip(results) {
        match r {
            Ok(f) => fits.push(f),
            Err(e @ (Error::History(_) | Error::Numerical(_))) => {
                n_skipped += 1;
                skipped.write_record([code.to_string(), roll.0.to_string(), v.name().to_string(), e.to_string()])?;
            }
            Err(e) => return Err(e),
        }
    }
    skipped.flush().map_err(|e| Error::io(&skipped_path, e))?;
    let rows: Vec<FitRow> = fits.iter().map(|f| FitRow { code: &f.code, roll_start: f.roll_start, fit: &f.fit }).collect();
    let summary = dir.join("fits.csv");
    let mut w = create(&summary)?;
    garch::write_fit_summary(&rows, &mut w)?;
    w.flush().map_err(|e| Error::io(&summary, e))?;
    let n_fits = rows.len();
    let not_converged = rows.iter().filter(|r| !r.fit.converged).count();
    drop(rows);
    let records: Vec<ForecastRecord> = fits.into_iter().flat_map(|f| f.forecasts).collect();
    let mut w = create(&layout.garch_forecasts())?;
    write_forecasts(&records, &mut w)?;
    w.flush().map_err(|e| Error::io(layout.garch_forecasts(), e))?;

    let mut out = Outcome::default();
    out.say(format!(
        "{} fits ({} not converged, {} skipped), {} forecasts",
        n_fits,
        not_converged,
        n_skipped,
        records.len()
    ));
    out.artifacts.extend([summary, layout.garch_forecasts(), skipped_path]);
    Ok(out)
}

/// Network forecasts for the samples of each roll's test window.
pub fn network_forecasts(layout: &Layout, name: &str, set: &SampleSet, plan: &SplitPlan) -> Result<Vec<ForecastRecord>> {
    let calendar = sample_calendar(set);
    let mut records = Vec::new();
    for roll in rolling_data(&set.samples, plan, &calendar) {
        let dir = layout.roll_dir(name, roll.index);
        require(&dir.join("checkpoint.json"), "train")?;
        let sidecar: ModelSidecar = read_json(&dir.join("sidecar.json"))?;
        let ck = Checkpoint::load(&dir.join("checkpoint.json"))?;
        let model = MdnModel::from_parts(sidecar, ck.params)?;
        records.extend(model.predict(&roll.test)?);
    }
    Ok(records)
}

/// Merge network and GARCH forecasts into one stream.
pub fn cmd_forecast(cfg: &RunConfig) -> Result<Outcome> {
    let layout = Layout::new(&cfg.output_dir);
    let (set, plan) = load_features(&layout)?;
    let mut records = Vec::new();
    let mut out = Outcome::default();
    for name in &cfg.mdn_models {
        let recs = network_forecasts(&layout, name, &set, &plan)?;
        let oov = recs.iter().filter(|r| r.oov).count();
        out.say(format!("{name}: {} forecasts ({oov} for codes unseen in training)", recs.len()));
        records.extend(recs);
    }
    if !cfg.garch.variants.is_empty() {
        require(&layout.garch_forecasts(), "fit-garch")?;
        let garch_recs = read_forecasts(open(&layout.garch_forecasts())?)?;
        for v in &cfg.garch.variants {
            let n = garch_recs.iter().filter(|r| r.model == v.name()).count();
            out.say(format!("{}: {n} forecasts", v.name()));
        }
        records.extend(garch_recs.into_iter().filter(|r| cfg.garch.variants.iter().any(|v| v.name() == r.model)));
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("no models configured".into()));
    }
    let mut w = create(&layout.forecasts())?;
    write_forecasts(&records, &mut w)?;
    w.flush().map_err(|e| Error::io(layout.forecasts(), e))?;
    out.artifacts.push(layout.forecasts());
    Ok(out)
}

fn test_realized(set: &SampleSet, plan: &SplitPlan) -> Vec<Realized> {
    let test: Vec<FeatureSample> = set.samples.iter().filter(|s| plan.test.contains(s.label_date)).cloned().collect();
    Realized::from_samples(&test)
}

#[derive(Serialize, Deserialize)]
struct LossRow {
    code: String,
    date: NaiveDate,
    model: String,
    crps: f64,
    mse: f64,
    qlike: f64,
}

/// Score all forecasts on the shared test samples.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Outcome> {
    let layout = Layout::new(&cfg.output_dir);
    let (set, plan) = load_features(&layout)?;
    require(&layout.forecasts(), "forecast")?;
    let forecasts = read_forecasts(open(&layout.forecasts())?)?;
    let realized = test_realized(&set, &plan);
    if realized.is_empty() {
        return Err(Error::EmptyInput("no test samples with realized range volatility".into()));
    }
    let losses = score_paired(&realized, &forecasts, &cfg.eval, seed::derive(cfg.seed, "eval"))?;
    let report = bucket_by_volatility(&losses, &cfg.eval);
    let dir = layout.dir("eval");
    let csv_path = dir.join("report.csv");
    let json_path = dir.join("report.json");
    let mut w = create(&csv_path)?;
    report.write_csv(&mut w)?;
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    write_json(&json_path, &report)?;

    let mut w = csv::Writer::from_writer(create(&layout.losses())?);
    for (k, name) in losses.models.iter().enumerate() {
        for (i, (code, date)) in losses.keys.iter().enumerate() {
            w.serialize(LossRow {
                code: code.clone(),
                date: *date,
                model: name.clone(),
                crps: losses.crps[k][i],
                mse: losses.mse[k][i],
                qlike: losses.qlike[k][i],
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(layout.losses(), e))?;

    let mut out = Outcome::default();
    out.say(format!("{} paired test samples, {} models", losses.keys.len(), losses.models.len()));
    for name in &losses.models {
        let m = |metric| report.value("total", name, metric).unwrap_or(f64::NAN);
        out.say(format!(
            "{name:>7}: CRPS(%) {:.4}  MSE {:.4}  QLIKE {:.4}",
            m(Metric::Crps),
            m(Metric::Mse),
            m(Metric::Qlike)
        ));
    }
    for g in report.groups.iter().filter(|g| g.flag.is_some()) {
        out.say(format!("bucket {}: {}", g.group, g.flag.as_deref().unwrap_or_default()));
    }
    out.artifacts.extend([csv_path, json_path, layout.losses()]);
    Ok(out)
}

/// Rebuild per-sample losses from `eval/losses.csv`.
pub fn read_losses(layout: &Layout) -> Result<PairedLosses> {
    require(&layout.losses(), "evaluate")?;
    let mut rdr = csv::Reader::from_reader(open(&layout.losses())?);
    let mut models: Vec<String> = Vec::new();
    let mut by_model: Vec<Vec<LossRow>> = Vec::new();
    for row in rdr.deserialize() {
        let row: LossRow = row?;
        let k = match models.iter().position(|m| *m == row.model) {
            Some(k) => k,
            None => {
                models.push(row.model.clone());
                by_model.push(Vec::new());
                models.len() - 1
            }
        };
        by_model[k].push(row);
    }
    let keys: Vec<(String, NaiveDate)> = by_model
        .first()
        .map(|rows| rows.iter().map(|r| (r.code.clone(), r.date)).collect())
        .unwrap_or_default();
    for rows in &by_model {
        if rows.len() != keys.len() || rows.iter().zip(&keys).any(|(r, k)| r.code != k.0 || r.date != k.1) {
            return Err(Error::Schema("losses.csv is not paired across models".into()));
        }
    }
    let col = |f: fn(&LossRow) -> f64| by_model.iter().map(|rows| rows.iter().map(f).collect()).collect();
    Ok(PairedLosses {
        keys,
        rrv: Vec::new(),
        models,
        crps: col(|r| r.crps),
        mse: col(|r| r.mse),
        qlike: col(|r| r.qlike),
    })
}

/// Pairwise Diebold-Mariano statistics for the MSE and QLIKE losses.
pub fn cmd_dm(cfg: &RunConfig) -> Result<Outcome> {
    let layout = Layout::new(&cfg.output_dir);
    let losses = read_losses(&layout)?;
    let dir = layout.dir("dm");
    let mut out = Outcome::default();
    let mut matrices = Vec::new();
    for metric in [Metric::Mse, Metric::Qlike] {
        let m = DmMatrix::compute(&losses, metric, cfg.dm.lag)?;
        let path = dir.join(format!("dm_{}.csv", serde_json::to_value(metric)?.as_str().unwrap_or("loss")));
        let mut w = create(&path)?;
        m.write_csv(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        let n = losses.models.len();
        out.say(format!("{}: {}×{} lower-triangular matrix", metric.label(), n.saturating_sub(1), n.saturating_sub(1)));
        out.artifacts.push(path);
        matrices.push(m);
    }
    let json = dir.join("dm.json");
    write_json(&json, &matrices)?;
    out.artifacts.push(json);
    Ok(out)
}

/// Attribute values per code over the trailing window that ends on the last
/// test day.
pub fn attribute_values(
    panel: &MarketPanel,
    codes: &[String],
    attribute: &str,
    range: DateRange,
) -> Vec<(String, Option<f64>)> {
    codes
        .iter()
        .map(|c| {
            let a = compute_attributes(panel, c, range);
            let v = a.and_then(|a| match attribute {
                "std60" => Some(a.std60),
                "turnover" => a.turnover,
                "bias5" => Some(a.bias5),
                _ => None,
            });
            (c.clone(), v)
        })
        .collect()
}

/// t-SNE of the last roll's code embeddings, colored by stock attributes.
pub fn cmd_embed_viz(cfg: &RunConfig, attribute: Option<&str>) -> Result<Outcome> {
    let layout = Layout::new(&cfg.output_dir);
    let panel = load_panel(&layout)?;
    let (_, plan) = load_features(&layout)?;
    let name = &cfg.viz.model;
    let last = plan.rolling_boundaries.len().saturating_sub(1);
    let dir = layout.roll_dir(name, last);
    require(&dir.join("checkpoint.json"), "train")?;
    let sidecar: ModelSidecar = read_json(&dir.join("sidecar.json"))?;
    let model = MdnModel::from_parts(sidecar, Checkpoint::load(&dir.join("checkpoint.json"))?.params)?;
    let embeddings = model.export_embeddings()?;
    let codes: Vec<String> = embeddings.keys().cloned().collect();
    let points: Vec<Vec<f64>> = embeddings.values().cloned().collect();

    let vdir = layout.dir("viz");
    let emb_path = vdir.join("embeddings.csv");
    let mut w = csv::Writer::from_writer(create(&emb_path)?);
    let dim = points.first().map_or(0, Vec::len);
    let mut header = vec!["code".to_string()];
    header.extend((0..dim).map(|k| format!("e{k}")));
    w.write_record(&header)?;
    for (c, v) in &embeddings {
        let mut row = vec![c.clone()];
        row.extend(v.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&emb_path, e))?;

    let mut out = Outcome::default();
    let mut tsne_opts = cfg.viz.tsne.clone();
    let cap = (codes.len() as f64 / 3.0).floor();
    if tsne_opts.perplexity > cap {
        if cap < 2.0 {
            return Err(Error::EmptyInput(format!("t-SNE needs at least 6 codes, the model has {}", codes.len())));
        }
        out.say(format!("perplexity lowered from {} to {cap} for {} codes", tsne_opts.perplexity, codes.len()));
        tsne_opts.perplexity = cap;
    }
    let result = tsne(&points, &tsne_opts, seed::derive(cfg.seed, "tsne"))?;
    let coords: BTreeMap<&str, [f64; 2]> = codes.iter().map(String::as_str).zip(result.coords.iter().copied()).collect();
    out.say(format!("t-SNE of {} codes, final KL {:.4}", codes.len(), result.kl));

    let end = plan.test.end;
    let start = end.checked_sub_months(Months::new(12 * cfg.viz.attribute_years)).unwrap_or(end);
    let range = DateRange { start, end };
    let attributes: Vec<String> = match attribute {
        Some(a) => vec![a.to_string()],
        None => cfg.viz.attributes.clone(),
    };
    for attr in &attributes {
        let (colors, omitted) = rank_colors(&attribute_values(&panel, &codes, attr, range));
        if !omitted.is_empty() {
            out.say(format!("{attr}: {} code(s) without the attribute omitted", omitted.len()));
        }
        let scatter: Vec<ScatterPoint> = colors
            .into_iter()
            .map(|(code, c)| {
                let [x, y] = coords[code.as_str()];
                ScatterPoint { code, x, y, color_value: c }
            })
            .collect();
        let csv_path = vdir.join(format!("tsne_{attr}.csv"));
        let svg_path = vdir.join(format!("tsne_{attr}.svg"));
        let mut w = create(&csv_path)?;
        write_scatter_csv(&scatter, &mut w)?;
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        let mut w = create(&svg_path)?;
        write_scatter_svg(&scatter, attr, &mut w)?;
        w.flush().map_err(|e| Error::io(&svg_path, e))?;
        out.artifacts.extend([csv_path, svg_path]);
    }
    out.artifacts.push(emb_path);
    Ok(out)
}

/// Mean test CRPS of one network trained with `run_seed`; the scoring draws
/// depend on the root seed only.
pub fn robust_run(cfg: &RunConfig, set: &SampleSet, plan: &SplitPlan, model: &str, run_seed: u64) -> Result<f64> {
    let calendar = sample_calendar(set);
    let rolls = train_rolling(&set.samples, plan, &calendar, &cfg.network(model), &cfg.train, run_seed)?;
    let data = rolling_data(&set.samples, plan, &calendar);
    let mut records = Vec::new();
    for (roll, d) in rolls.iter().zip(&data) {
        records.extend(roll.trained.model.predict(&d.test)?);
    }
    let losses = score_paired(&test_realized(set, plan), &records, &cfg.eval, seed::derive(cfg.seed, "eval"))?;
    Ok(losses.crps[0].iter().sum::<f64>() / losses.crps[0].len() as f64)
}

/// Repeat training with `runs` different seeds and summarize the CRPS spread.
pub fn cmd_robust(cfg: &RunConfig, runs: Option<usize>) -> Result<Outcome> {
    let layout = Layout::new(&cfg.output_dir);
    let (set, plan) = load_features(&layout)?;
    let n = runs.unwrap_or(cfg.robust.runs);
    if n < 2 {
        return Err(Error::Config("robust needs at least 2 runs".into()));
    }
    let model = &cfg.robust.model;
    let seeds: Vec<u64> = (0..n).map(|r| seed::derive_indexed(cfg.seed, "robust-run", r as u64)).collect();
    let crps = par::map(&seeds, |&s| robust_run(cfg, &set, &plan, model, s));
    let mut rows = Vec::new();
    for (run, (s, c)) in seeds.iter().zip(crps).enumerate() {
        rows.push(RobustRun { model: model.clone(), run, seed: *s, crps: c? });
    }
    let values: Vec<f64> = rows.iter().map(|r| r.crps).collect();
    let summary = robustness_summary(&values)?;
    let dir = layout.dir("robust");
    let runs_path = dir.join("runs.csv");
    let summary_path = dir.join("summary.csv");
    let mut w = create(&runs_path)?;
    write_robust_runs(&rows, &mut w)?;
    w.flush().map_err(|e| Error::io(&runs_path, e))?;
    let mut w = create(&summary_path)?;
    write_robust_summary(&[(model.clone(), summary.clone())], &mut w)?;
    w.flush().map_err(|e| Error::io(&summary_path, e))?;
    let mut out = Outcome::default();
    out.say(format!(
        "{model}: {n} runs, median CRPS(%) {:.4}, IQR {:.4} (IQR/median {:.3}), range {:.4}..{:.4}",
        summary.median, summary.iqr, summary.iqr_over_median, summary.min, summary.max
    ));
    out.artifacts.extend([runs_path, summary_path]);
    Ok(out)
}
