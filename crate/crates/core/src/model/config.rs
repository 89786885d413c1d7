use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Layer count for the encoder and, separately, the decoder.
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults for a given vocabulary size.
    pub fn small(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            ffn_dim: 128,
            max_src_len: 256,
            max_tgt_len: 256,
            dropout_rate: 0.0,
            seed: 0,
        }
    }

    /// The configuration used for gradient verification (well under 10k
    /// parameters for a vocabulary of a few dozen ids).
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            ffn_dim: 16,
            max_src_len: 16,
            max_tgt_len: 16,
            dropout_rate: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("ffn_dim", self.ffn_dim),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.max_src_len < 8 || self.max_tgt_len < 8 {
            return bad("max_src_len and max_tgt_len must be at least 8".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
