use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    pub max_position: usize,
    pub type_vocab_size: usize,
    pub hidden_dropout_prob: f64,
    pub attention_dropout_prob: f64,
    pub layer_norm_eps: f64,
    pub initializer_range: f64,
}

impl Default for ModelConfig {
    /// Desk-scale encoder: H=64, 2 layers, 4 heads.
    fn default() -> Self {
        Self {
            vocab_size: 2000,
            hidden_size: 64,
            num_layers: 2,
            num_heads: 4,
            intermediate_size: 128,
            max_position: 128,
            type_vocab_size: 2,
            hidden_dropout_prob: 0.1,
            attention_dropout_prob: 0.1,
            layer_norm_eps: 1e-12,
            initializer_range: 0.02,
        }
    }
}

impl ModelConfig {
    /// BERT-base sized encoder (768 hidden, 12 layers, 12 heads, vocabulary
    /// of 16,424 tokens).
    pub fn bert_base() -> Self {
        Self {
            vocab_size: 16_424,
            hidden_size: 768,
            num_layers: 12,
            num_heads: 12,
            intermediate_size: 3072,
            max_position: 512,
            ..Self::default()
        }
    }

    pub fn head_size(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("vocab_size", self.vocab_size),
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("intermediate_size", self.intermediate_size),
            ("max_position", self.max_position),
            ("type_vocab_size", self.type_vocab_size),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        for (name, p) in [
            ("hidden_dropout_prob", self.hidden_dropout_prob),
            ("attention_dropout_prob", self.attention_dropout_prob),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {p}")));
            }
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        if !(self.initializer_range >= 0.0) || !self.initializer_range.is_finite() {
            return Err(Error::Config("initializer_range must be finite and non-negative".into()));
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
        let b = ModelConfig::bert_base();
        b.validate().unwrap();
        assert_eq!(b.head_size(), 64);
        assert_eq!(b.layer_norm_eps, 1e-12);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = ModelConfig {
            num_heads: 3,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            num_layers: 0,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            hidden_dropout_prob: 1.0,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
