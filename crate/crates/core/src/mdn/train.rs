use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig};
use super::model::MdnModel;
use super::vocab::CodeVocabulary;
use crate::error::{Error, Result};
use crate::features::FeatureSample;
use crate::ingest::{DateRange, SplitPlan};
use crate::nn::{Adam, Checkpoint, Graph};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sample-weighted mean of the mini-batch losses during the epoch.
    pub train_nll: f64,
    pub validation_nll: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    /// Parameters of the epoch with the best validation NLL.
    pub model: MdnModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Training stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
    /// Optimiser and shuffle state after the last completed epoch.
    pub optimizer: Adam,
    pub rng: ChaCha8Rng,
}

impl TrainedModel {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.best_epoch, &self.model.params, &self.optimizer, &self.rng)
    }
}

/// Population std of the labels, the unit of the raw head outputs.
pub fn label_scale(samples: &[&FeatureSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no training samples".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.label_return).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.label_return - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::Numerical(format!("training label variance {var}")));
    }
    Ok(var.sqrt())
}

/// Mini-batch NLL minimisation with early stopping on validation NLL.
pub fn fit(
    train: &[&FeatureSample],
    validation: &[&FeatureSample],
    config: &ModelConfig,
    opts: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    opts.validate()?;
    if validation.is_empty() {
        return Err(Error::EmptyInput("no validation samples".into()));
    }
    let vocab = CodeVocabulary::new(train.iter().map(|s| s.code.as_str()));
    let mut model = MdnModel::init(config, vocab, label_scale(train)?, seed::derive(seed, "mdn-init"))?;
    let mut optimizer = Adam::new(&model.params, opts.learning_rate, opts.beta1, opts.beta2);
    let mut rng = seed::rng(seed::derive(seed, "mdn-shuffle"));
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut log = Vec::new();
    let mut diverged = None;
    let mut stale = 0;
    'epochs: for epoch in 1..=opts.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<&FeatureSample> = chunk.iter().map(|&i| train[i]).collect();
            let mut g = Graph::new();
            let loss = model.loss(&mut g, &batch)?;
            let value = g.value(loss).data[0];
            if !value.is_finite() {
                diverged = Some(format!("non-finite training loss in epoch {epoch}"));
                break 'epochs;
            }
            let grads = g.backward(loss)?;
            let pg = g.param_gradients(&grads, &model.params);
            if let Err(e) = optimizer.update(&mut model.params, &pg) {
                diverged = Some(format!("epoch {epoch}: {e}"));
                break 'epochs;
            }
            total += value * batch.len() as f64;
        }
        let validation_nll = model.mean_nll(validation, opts.batch_size)?;
        log.push(EpochLog {
            epoch,
            train_nll: total / train.len() as f64,
            validation_nll,
        });
        if !validation_nll.is_finite() {
            diverged = Some(format!("non-finite validation loss in epoch {epoch}"));
            break;
        }
        if validation_nll < best.0 {
            best = (validation_nll, epoch, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= opts.patience {
                break;
            }
        }
    }
    model.params = best.2;
    Ok(TrainedModel {
        model,
        log,
        best_epoch: best.1,
        diverged,
        optimizer,
        rng,
    })
}

/// Samples assigned to one rolling window.
#[derive(Debug, Clone)]
pub struct RollData<'a> {
    pub index: usize,
    pub boundary: NaiveDate,
    /// First label date after the window.
    pub end: NaiveDate,
    pub validation_range: DateRange,
    pub train: Vec<&'a FeatureSample>,
    pub validation: Vec<&'a FeatureSample>,
    pub test: Vec<&'a FeatureSample>,
}

/// Partition samples by label date for every rolling boundary. Training uses
/// every label from the training start up to the boundary, minus the
/// validation window of that roll.
pub fn rolling_data<'a>(
    samples: &'a [FeatureSample],
    plan: &SplitPlan,
    calendar: &[NaiveDate],
) -> Vec<RollData<'a>> {
    plan.rolls()
        .into_iter()
        .enumerate()
        .map(|(index, (boundary, end))| {
            let validation_range = plan.validation_before(boundary, calendar);
            let mut data = RollData {
                index,
                boundary,
                end,
                validation_range,
                train: Vec::new(),
                validation: Vec::new(),
                test: Vec::new(),
            };
            for s in samples {
                let d = s.label_date;
                if d >= boundary && d < end {
                    data.test.push(s);
                } else if d >= plan.train.start && d < boundary {
                    if validation_range.contains(d) {
                        data.validation.push(s);
                    } else {
                        data.train.push(s);
                    }
                }
            }
            data
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RollResult {
    pub index: usize,
    pub boundary: NaiveDate,
    pub end: NaiveDate,
    pub trained: TrainedModel,
}

/// Retrain from scratch at every rolling boundary.
pub fn train_rolling(
    samples: &[FeatureSample],
    plan: &SplitPlan,
    calendar: &[NaiveDate],
    config: &ModelConfig,
    opts: &TrainConfig,
    seed: u64,
) -> Result<Vec<RollResult>> {
    rolling_data(samples, plan, calendar)
        .into_iter()
        .map(|roll| {
            let trained = fit(
                &roll.train,
                &roll.validation,
                config,
                opts,
                seed::derive_indexed(seed, "mdn-roll", roll.index as u64),
            )
            .map_err(|e| match e {
                Error::EmptyInput(m) => Error::EmptyInput(format!("roll starting {}: {m}", roll.boundary)),
                other => other,
            })?;
            Ok(RollResult {
                index: roll.index,
                boundary: roll.boundary,
                end: roll.end,
                trained,
            })
        })
        .collect()
}
