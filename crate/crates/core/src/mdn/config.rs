use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the mixture density network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_components: usize,
    /// History window `T` in trading days.
    pub window: usize,
    /// Days per embedded segment; must divide `window`.
    pub segment_length: usize,
    pub model_width: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    /// Width of the code lookup table.
    pub embedding_dim: usize,
    /// Width of the reduced code embedding that enters the fusion network.
    pub embedding_out_dim: usize,
    pub fusion_layers: usize,
    /// Hidden width of feed-forward blocks as a multiple of their input width.
    pub ffn_multiplier: usize,
    pub use_code_embedding: bool,
    /// Lower bound added to every component std, in return units.
    pub sigma_floor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_components: 9,
            window: 60,
            segment_length: 10,
            model_width: 64,
            heads: 4,
            encoder_layers: 2,
            embedding_dim: 16,
            embedding_out_dim: 16,
            fusion_layers: 2,
            ffn_multiplier: 2,
            use_code_embedding: true,
            sigma_floor: 1e-4,
        }
    }
}

impl ModelConfig {
    /// A small configuration for quick experiments and tests.
    pub fn smoke() -> Self {
        Self {
            n_components: 3,
            window: 20,
            segment_length: 5,
            model_width: 16,
            heads: 2,
            encoder_layers: 1,
            embedding_dim: 8,
            embedding_out_dim: 8,
            fusion_layers: 1,
            ..Self::default()
        }
    }

    pub fn segments(&self) -> usize {
        self.window / self.segment_length
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_components == 0 {
            return fail("n_components must be ≥ 1".into());
        }
        if self.window == 0 || self.segment_length == 0 || !self.window.is_multiple_of(self.segment_length) {
            return fail(format!(
                "segment_length {} must divide window {}",
                self.segment_length, self.window
            ));
        }
        if self.model_width == 0 || self.heads == 0 || !self.model_width.is_multiple_of(self.heads) {
            return fail(format!(
                "model_width {} not divisible by {} heads",
                self.model_width, self.heads
            ));
        }
        if self.use_code_embedding && (self.embedding_dim == 0 || self.embedding_out_dim == 0) {
            return fail("embedding dimensions must be > 0 with code embedding".into());
        }
        if self.ffn_multiplier == 0 {
            return fail("ffn_multiplier must be ≥ 1".into());
        }
        if !(self.sigma_floor > 0.0 && self.sigma_floor.is_finite()) {
            return fail("sigma_floor must be > 0".into());
        }
        Ok(())
    }

    pub fn model_name(&self) -> &'static str {
        if self.use_code_embedding {
            "MDNe"
        } else {
            "MDN"
        }
    }
}

/// Optimisation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 256,
            max_epochs: 100,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::smoke().validate().unwrap();
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = ModelConfig { segment_length: 7, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { heads: 5, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { n_components: 0, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { embedding_dim: 0, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
        let ok = ModelConfig { embedding_dim: 0, use_code_embedding: false, ..ModelConfig::default() };
        ok.validate().unwrap();
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(toml::from_str::<ModelConfig>("n_components = 4\nbogus = 1").is_err());
        let c: ModelConfig = toml::from_str("n_components = 4").unwrap();
        assert_eq!(c.n_components, 4);
        assert_eq!(c.window, 60);
    }
}
