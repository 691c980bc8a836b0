use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::vocab::CodeVocabulary;
use crate::error::{Error, Result};
use crate::features::{FeatureSample, IndicatorMatrix, N_INDICATORS};
use crate::gmm::GaussianMixture;
use crate::nn::{head_transform, Graph, Init, ParamStore, Tensor, Var};
use crate::{par, seed};

/// Code → post-reduction embedding vector.
pub type EmbeddingMap = BTreeMap<String, Vec<f64>>;

/// One predictive distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub code: String,
    /// The forecast (label) day.
    pub date: NaiveDate,
    pub model: String,
    pub mixture: GaussianMixture,
    /// `sqrt(mixture.variance())`, in return units.
    pub volatility: f64,
    /// The code was outside the training vocabulary.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub oov: bool,
}

impl ForecastRecord {
    pub fn new(code: &str, date: NaiveDate, model: &str, mixture: GaussianMixture, oov: bool) -> Self {
        Self {
            code: code.to_string(),
            date,
            model: model.to_string(),
            volatility: mixture.volatility(),
            mixture,
            oov,
        }
    }
}

/// Metadata stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub model: String,
    pub use_code_embedding: bool,
    pub config: ModelConfig,
    pub vocab: CodeVocabulary,
    /// Std of training labels; head outputs are expressed in these units.
    pub y_scale: f64,
}

/// Raw head outputs for a batch.
#[derive(Debug, Clone, Copy)]
pub struct Heads {
    pub logits: Var,
    pub mu: Var,
    pub sigma: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdnModel {
    pub config: ModelConfig,
    pub vocab: CodeVocabulary,
    pub y_scale: f64,
    pub params: ParamStore,
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut rand_chacha::ChaCha8Rng,
}

impl Builder<'_> {
    fn add(&mut self, name: &str, init: Init, rows: usize, cols: usize) -> Result<()> {
        self.store.add(name, init, rows, cols, self.rng).map(|_| ())
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        self.add(&format!("{name}.weight"), Init::FanInUniform { fan_in }, fan_in, fan_out)?;
        self.add(&format!("{name}.bias"), Init::Constant { value: 0.0 }, 1, fan_out)
    }

    fn norm(&mut self, name: &str, width: usize) -> Result<()> {
        self.add(&format!("{name}.gain"), Init::Constant { value: 1.0 }, 1, width)?;
        self.add(&format!("{name}.bias"), Init::Constant { value: 0.0 }, 1, width)
    }

    fn ffn(&mut self, name: &str, width: usize, mult: usize) -> Result<()> {
        self.dense(&format!("{name}.fc1"), width, width * mult)?;
        self.dense(&format!("{name}.fc2"), width * mult, width)
    }

    fn attention_block(&mut self, name: &str, width: usize, mult: usize) -> Result<()> {
        for proj in ["query", "key", "value", "out"] {
            self.dense(&format!("{name}.{proj}"), width, width)?;
        }
        self.norm(&format!("{name}.norm1"), width)?;
        self.ffn(&format!("{name}.ffn"), width, mult)?;
        self.norm(&format!("{name}.norm2"), width)
    }
}

impl MdnModel {
    /// Fresh parameters for `vocab` (the OOV row included).
    pub fn init(config: &ModelConfig, vocab: CodeVocabulary, y_scale: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        if !(y_scale > 0.0 && y_scale.is_finite()) {
            return Err(Error::Numerical(format!("label scale {y_scale}")));
        }
        let mut rng = seed::rng(seed);
        let mut b = Builder {
            store: ParamStore::new(),
            rng: &mut rng,
        };
        let (w, m) = (config.model_width, config.ffn_multiplier);
        let rows = N_INDICATORS * config.segments();
        b.dense("segment_embed", config.segment_length, w)?;
        b.add("segment_embed.position", Init::Uniform { bound: 0.05 }, rows, w)?;
        for l in 0..config.encoder_layers {
            b.attention_block(&format!("encoder{l}.time"), w, m)?;
            b.attention_block(&format!("encoder{l}.cross"), w, m)?;
        }
        let mut fused_in = w;
        if config.use_code_embedding {
            let e = config.embedding_dim;
            b.add("code.table", Init::Uniform { bound: 0.05 }, vocab.len() + 1, e)?;
            b.ffn("code.ffn", e, m)?;
            b.norm("code.norm", e)?;
            b.dense("code.reduce", e, config.embedding_out_dim)?;
            fused_in += config.embedding_out_dim;
        }
        b.dense("fusion.input", fused_in, w)?;
        for k in 0..config.fusion_layers {
            b.ffn(&format!("fusion{k}.ffn"), w, m)?;
            b.norm(&format!("fusion{k}.norm"), w)?;
        }
        for head in ["head.weight", "head.mean", "head.scale"] {
            b.dense(head, w, config.n_components)?;
        }
        let params = b.store;
        Ok(Self {
            config: config.clone(),
            vocab,
            y_scale,
            params,
        })
    }

    /// Rebuild from a sidecar and stored parameters, checking the layout.
    pub fn from_parts(sidecar: ModelSidecar, params: ParamStore) -> Result<Self> {
        let fresh = Self::init(&sidecar.config, sidecar.vocab, sidecar.y_scale, 0)?;
        if !fresh.params.same_layout(&params) {
            return Err(Error::Config(
                "checkpoint parameters do not match the model configuration and vocabulary".into(),
            ));
        }
        Ok(Self { params, ..fresh })
    }

    pub fn sidecar(&self) -> ModelSidecar {
        ModelSidecar {
            model: self.name().to_string(),
            use_code_embedding: self.config.use_code_embedding,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            y_scale: self.y_scale,
        }
    }

    pub fn name(&self) -> &'static str {
        self.config.model_name()
    }

    fn p(&self, g: &mut Graph, name: &str) -> Var {
        let id = self
            .params
            .find(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from a validated store"));
        g.param(&self.params, id)
    }

    fn dense(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let w = self.p(g, &format!("{name}.weight"));
        let b = self.p(g, &format!("{name}.bias"));
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }

    fn ffn(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let h = self.dense(g, x, &format!("{name}.fc1"))?;
        let h = g.gelu(h);
        self.dense(g, h, &format!("{name}.fc2"))
    }

    fn add_norm(&self, g: &mut Graph, x: Var, y: Var, name: &str) -> Result<Var> {
        let s = g.add(x, y)?;
        let n = g.layer_norm(s);
        let gain = self.p(g, &format!("{name}.gain"));
        let bias = self.p(g, &format!("{name}.bias"));
        let n = g.mul_bias(n, gain)?;
        g.add_bias(n, bias)
    }

    fn attention_block(&self, g: &mut Graph, x: Var, name: &str, group: usize) -> Result<Var> {
        let q = self.dense(g, x, &format!("{name}.query"))?;
        let k = self.dense(g, x, &format!("{name}.key"))?;
        let v = self.dense(g, x, &format!("{name}.value"))?;
        let a = g.attention(q, k, v, group, self.config.heads)?;
        let o = self.dense(g, a, &format!("{name}.out"))?;
        let x = self.add_norm(g, x, o, &format!("{name}.norm1"))?;
        let f = self.ffn(g, x, &format!("{name}.ffn"))?;
        self.add_norm(g, x, f, &format!("{name}.norm2"))
    }

    /// Segment rows ordered (sample, indicator, segment).
    fn segment_input(&self, matrices: &[&IndicatorMatrix]) -> Result<Tensor> {
        let (t, seg) = (self.config.window, self.config.segment_length);
        let mut data = Vec::with_capacity(matrices.len() * N_INDICATORS * t);
        for m in matrices {
            if m.window != t || m.values.len() != N_INDICATORS * t {
                return Err(Error::Config(format!(
                    "indicator matrix for {} has window {} (model expects {t})",
                    m.code, m.window
                )));
            }
            data.extend_from_slice(&m.values);
        }
        Tensor::from_vec(data.len() / seg, seg, data)
    }

    /// Encoder output, one `model_width` row per matrix.
    pub fn encode(&self, g: &mut Graph, matrices: &[&IndicatorMatrix]) -> Result<Var> {
        let (c, s) = (N_INDICATORS, self.config.segments());
        let x = self.segment_input(matrices)?;
        let x = g.input("segments", x);
        let x = self.dense(g, x, "segment_embed")?;
        let pos = self.p(g, "segment_embed.position");
        let mut x = g.add_tiled(x, pos)?;
        let b = matrices.len();
        // (sample, indicator, segment) ↔ (sample, segment, indicator)
        let mut to_cross = Vec::with_capacity(b * c * s);
        let mut to_time = vec![0; b * c * s];
        for bi in 0..b {
            for si in 0..s {
                for ci in 0..c {
                    let old = bi * c * s + ci * s + si;
                    to_time[old] = to_cross.len();
                    to_cross.push(old);
                }
            }
        }
        for l in 0..self.config.encoder_layers {
            x = self.attention_block(g, x, &format!("encoder{l}.time"), s)?;
            let y = g.gather(x, to_cross.clone())?;
            let y = self.attention_block(g, y, &format!("encoder{l}.cross"), c)?;
            x = g.gather(y, to_time.clone())?;
        }
        g.mean_pool(x, c * s)
    }

    /// Reduced code embeddings, one row per vocabulary index.
    pub fn embed_codes(&self, g: &mut Graph, index: &[usize]) -> Result<Var> {
        if !self.config.use_code_embedding {
            return Err(Error::Unsupported("model has no code embedding".into()));
        }
        let table = self.p(g, "code.table");
        let e = g.gather(table, index.to_vec())?;
        let f = self.ffn(g, e, "code.ffn")?;
        let h = self.add_norm(g, e, f, "code.norm")?;
        self.dense(g, h, "code.reduce")
    }

    /// Fusion network and raw mixture heads.
    pub fn fuse_and_head(&self, g: &mut Graph, hidden: Var, code: Option<Var>) -> Result<Heads> {
        let x = match code {
            Some(c) => g.concat(hidden, c)?,
            None => hidden,
        };
        let mut x = self.dense(g, x, "fusion.input")?;
        for k in 0..self.config.fusion_layers {
            let f = self.ffn(g, x, &format!("fusion{k}.ffn"))?;
            x = self.add_norm(g, x, f, &format!("fusion{k}.norm"))?;
        }
        Ok(Heads {
            logits: self.dense(g, x, "head.weight")?,
            mu: self.dense(g, x, "head.mean")?,
            sigma: self.dense(g, x, "head.scale")?,
        })
    }

    pub fn forward(&self, g: &mut Graph, batch: &[&FeatureSample]) -> Result<Heads> {
        let matrices: Vec<&IndicatorMatrix> = batch.iter().map(|s| &s.indicators).collect();
        let hidden = self.encode(g, &matrices)?;
        let code = if self.config.use_code_embedding {
            let idx: Vec<usize> = batch.iter().map(|s| self.vocab.index(&s.code)).collect();
            Some(self.embed_codes(g, &idx)?)
        } else {
            None
        };
        self.fuse_and_head(g, hidden, code)
    }

    /// Mean NLL node of a batch.
    pub fn loss(&self, g: &mut Graph, batch: &[&FeatureSample]) -> Result<Var> {
        let h = self.forward(g, batch)?;
        let target = batch.iter().map(|s| s.label_return).collect();
        g.mixture_nll(h.logits, h.mu, h.sigma, target, self.y_scale, self.config.sigma_floor)
    }

    pub fn mixtures(&self, g: &Graph, heads: Heads) -> Result<Vec<GaussianMixture>> {
        let (l, m, s) = (g.value(heads.logits), g.value(heads.mu), g.value(heads.sigma));
        (0..l.rows)
            .map(|r| {
                let (w, mu, sd) = head_transform(l.row(r), m.row(r), s.row(r), self.y_scale, self.config.sigma_floor);
                GaussianMixture::new(w, mu, sd)
            })
            .collect()
    }

    /// Forecasts for `samples`, evaluated in independent chunks.
    pub fn predict(&self, samples: &[&FeatureSample]) -> Result<Vec<ForecastRecord>> {
        let chunks: Vec<&[&FeatureSample]> = samples.chunks(256).collect();
        let parts = par::map(&chunks, |chunk| -> Result<Vec<ForecastRecord>> {
            let mut g = Graph::new();
            let h = self.forward(&mut g, chunk)?;
            let mixtures = self.mixtures(&g, h)?;
            Ok(chunk
                .iter()
                .zip(mixtures)
                .map(|(s, m)| {
                    let oov = self.config.use_code_embedding && self.vocab.get(&s.code).is_none();
                    ForecastRecord::new(&s.code, s.label_date, self.name(), m, oov)
                })
                .collect())
        });
        let mut out = Vec::with_capacity(samples.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Mean NLL over `samples` in chunks of `batch` (no gradients).
    pub fn mean_nll(&self, samples: &[&FeatureSample], batch: usize) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("no samples to score".into()));
        }
        let chunks: Vec<&[&FeatureSample]> = samples.chunks(batch.max(1)).collect();
        let parts = par::map(&chunks, |chunk| -> Result<f64> {
            let mut g = Graph::new();
            let loss = self.loss(&mut g, chunk)?;
            Ok(g.value(loss).data[0] * chunk.len() as f64)
        });
        let mut total = 0.0;
        for p in parts {
            total += p?;
        }
        Ok(total / samples.len() as f64)
    }

    /// Post-reduction embedding of every vocabulary code.
    pub fn export_embeddings(&self) -> Result<EmbeddingMap> {
        if !self.config.use_code_embedding {
            return Err(Error::Unsupported(
                "embeddings requested from a model without code embedding".into(),
            ));
        }
        let mut g = Graph::new();
        let idx: Vec<usize> = (0..self.vocab.len()).collect();
        let e = self.embed_codes(&mut g, &idx)?;
        let t = g.value(e);
        Ok(self
            .vocab
            .codes()
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), t.row(i).to_vec()))
            .collect())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::features::{build_samples, FillPolicy, SampleSet};
    use crate::ingest::{generate_synthetic_market, ReturnProcess, StockGroup, SynthSpec};
    use rand::Rng;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_components: 2,
            window: 20,
            segment_length: 5,
            model_width: 8,
            heads: 2,
            encoder_layers: 1,
            embedding_dim: 4,
            embedding_out_dim: 4,
            fusion_layers: 1,
            ..ModelConfig::default()
        }
    }

    pub(crate) fn tiny_samples(seed: u64) -> SampleSet {
        let spec = SynthSpec {
            days: 60,
            intervals_per_day: 0,
            groups: vec![StockGroup {
                prefix: "T".into(),
                count: 3,
                process: ReturnProcess::Garch { omega: 0.05, alpha: 0.1, beta: 0.85, scale: 0.01 },
            }],
            ..Default::default()
        };
        let m = generate_synthetic_market(&spec, seed).unwrap();
        build_samples(&m.panel, None, 20, FillPolicy::ForwardThenZero).unwrap()
    }

    fn tiny_model(seed: u64) -> (MdnModel, SampleSet) {
        let set = tiny_samples(seed);
        let vocab = CodeVocabulary::new(&set.codes);
        (MdnModel::init(&tiny_config(), vocab, 0.01, seed).unwrap(), set)
    }

    #[test]
    fn encoder_shape_and_zero_input() {
        let (model, set) = tiny_model(1);
        let mut g = Graph::new();
        let ms: Vec<&IndicatorMatrix> = set.samples.iter().take(4).map(|s| &s.indicators).collect();
        let h = model.encode(&mut g, &ms).unwrap();
        assert_eq!(g.value(h).shape(), (4, 8));
        let zero = IndicatorMatrix {
            values: vec![0.0; N_INDICATORS * 20],
            ..set.samples[0].indicators.clone()
        };
        let mut g = Graph::new();
        let h = model.encode(&mut g, &[&zero, &zero]).unwrap();
        let t = g.value(h);
        assert!(t.is_finite());
        assert_eq!(t.row(0), t.row(1));
    }

    #[test]
    fn window_mismatch_is_config_error() {
        let (model, set) = tiny_model(1);
        let mut bad = set.samples[0].indicators.clone();
        bad.window = 10;
        bad.values.truncate(N_INDICATORS * 10);
        let mut g = Graph::new();
        assert!(matches!(model.encode(&mut g, &[&bad]), Err(Error::Config(_))));
    }

    #[test]
    fn code_embedding_lookup() {
        let (model, _) = tiny_model(2);
        let mut g = Graph::new();
        let e = model.embed_codes(&mut g, &[0, 0, 1, 3]).unwrap();
        let t = g.value(e);
        assert_eq!(t.cols, 4);
        assert_eq!(t.row(0), t.row(1));
        assert_ne!(t.row(0), t.row(2));
        assert!(t.row(3).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn heads_satisfy_constraints() {
        let (model, set) = tiny_model(3);
        let batch: Vec<&FeatureSample> = set.samples.iter().take(7).collect();
        let mut g = Graph::new();
        let h = model.forward(&mut g, &batch).unwrap();
        for m in model.mixtures(&g, h).unwrap() {
            assert_eq!(m.n_components(), 2);
            assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(m.stds().iter().all(|s| *s >= 1e-4));
        }
        let desk = MdnModel::init(&ModelConfig { window: 20, ..ModelConfig::default() }, model.vocab.clone(), 0.01, 3).unwrap();
        let recs = desk.predict(&batch).unwrap();
        assert!(recs.iter().all(|r| r.mixture.n_components() == 9));
    }

    #[test]
    fn batch_predict_matches_single() {
        let (model, set) = tiny_model(4);
        let batch: Vec<&FeatureSample> = set.samples.iter().take(5).collect();
        let all = model.predict(&batch).unwrap();
        for (s, r) in batch.iter().zip(&all) {
            let one = model.predict(&[*s]).unwrap();
            let (a, b) = (&one[0].mixture, &r.mixture);
            for k in 0..2 {
                assert!((a.weights()[k] - b.weights()[k]).abs() < 1e-12);
                assert!((a.means()[k] - b.means()[k]).abs() < 1e-12);
                assert!((a.stds()[k] - b.stds()[k]).abs() < 1e-12);
            }
            assert_eq!(r.volatility, r.mixture.variance().sqrt());
        }
        let twice = model.predict(&batch).unwrap();
        assert_eq!(twice, all);
    }

    #[test]
    fn oov_flagged() {
        let (model, set) = tiny_model(5);
        let mut s = set.samples[0].clone();
        s.code = "UNSEEN".into();
        let r = model.predict(&[&s]).unwrap();
        assert!(r[0].oov);
        let json = serde_json::to_string(&r[0]).unwrap();
        assert!(json.contains("\"oov\":true"));
        let back: ForecastRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r[0]);
    }

    #[test]
    fn embeddings_export() {
        let (model, _) = tiny_model(6);
        let map = model.export_embeddings().unwrap();
        assert_eq!(map.len(), 3);
        assert!(map.values().all(|v| v.len() == 4));
        let json = serde_json::to_string(&map).unwrap();
        assert_eq!(serde_json::from_str::<EmbeddingMap>(&json).unwrap(), map);

        let plain = MdnModel::init(
            &ModelConfig { use_code_embedding: false, ..tiny_config() },
            model.vocab.clone(),
            0.01,
            6,
        )
        .unwrap();
        assert!(matches!(plain.export_embeddings(), Err(Error::Unsupported(_))));
    }

    #[test]
    fn layout_checked_on_restore() {
        let (model, _) = tiny_model(7);
        let back = MdnModel::from_parts(model.sidecar(), model.params.clone()).unwrap();
        assert_eq!(back, model);
        let mut side = model.sidecar();
        side.vocab = CodeVocabulary::new(["X"]);
        assert!(MdnModel::from_parts(side, model.params.clone()).is_err());
    }

    /// Central-difference check of every parameter of the full graph.
    pub(crate) fn full_gradient_error(seed: u64) -> f64 {
        let (mut model, set) = tiny_model(seed);
        // move off the symmetric initial point
        let mut rng = crate::seed::rng(seed ^ 0xabc);
        for p in 0..model.params.len() {
            let id = model.params.iter().nth(p).unwrap().0;
            for v in model.params.get_mut(id).data.iter_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let batch: Vec<&FeatureSample> = set.samples.iter().step_by(7).take(10).collect();
        let loss_of = |m: &MdnModel| {
            let mut g = Graph::new();
            let l = m.loss(&mut g, &batch).unwrap();
            g.value(l).data[0]
        };
        let mut g = Graph::new();
        let l = model.loss(&mut g, &batch).unwrap();
        let grads = g.backward(l).unwrap();
        let analytic = g.param_gradients(&grads, &model.params);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let ids: Vec<_> = model.params.iter().map(|(id, _, _)| id).collect();
        for (pi, id) in ids.into_iter().enumerate() {
            for k in 0..model.params.get(id).len() {
                let orig = model.params.get(id).data[k];
                model.params.get_mut(id).data[k] = orig + h;
                let fp = loss_of(&model);
                model.params.get_mut(id).data[k] = orig - h;
                let fm = loss_of(&model);
                model.params.get_mut(id).data[k] = orig;
                let numeric = (fp - fm) / (2.0 * h);
                let a = analytic[pi].data[k];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn full_graph_gradient() {
        let err = full_gradient_error(11);
        assert!(err < 1e-4, "max relative error {err}");
    }
}
