//! Bidirectional transformer encoder with masked-LM, sequence and token
//! classification heads.
//!
//! Arithmetic is `f64` throughout. The encoder is post-norm with learned
//! absolute positions and exact GELU; attention ignores masked keys exactly,
//! so padding never influences real positions.

mod checkpoint;
mod encoder;
mod heads;
mod ops;
mod params;

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointMeta, NoiseRecord, FORMAT_VERSION};
pub use heads::{cross_entropy, mlm_loss, Objective};
pub use ops::{gelu, gelu_grad};
pub use params::{ClassifierHead, EncoderLayer, Gradients, LayerNorm, Linear, MlmHead, Parameters, INIT_STD};

use crate::{Error, Result};

/// Label value for positions that carry no loss.
pub const IGNORE_LABEL: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub intermediate_dim: usize,
    pub max_seq_len: usize,
    pub vocab_capacity: usize,
    pub dropout_rate: f64,
    /// Share the token embedding matrix with the MLM output projection.
    pub tie_weights: bool,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// Laptop-sized profile: 2 layers, 4 heads, hidden 64, sequences up to
    /// 128 tokens, 2,000-entry vocabulary.
    pub fn desk() -> Self {
        Self {
            num_layers: 2,
            num_heads: 4,
            hidden_dim: 64,
            intermediate_dim: 256,
            max_seq_len: 128,
            vocab_capacity: 2000,
            dropout_rate: 0.1,
            tie_weights: true,
            layer_norm_eps: 1e-5,
        }
    }

    /// RoBERTa-base dimensions: 12 layers, 12 heads, hidden 768, 512
    /// positions, 50,265 tokens.
    pub fn full_scale() -> Self {
        Self {
            num_layers: 12,
            num_heads: 12,
            hidden_dim: 768,
            intermediate_dim: 3072,
            max_seq_len: 512,
            vocab_capacity: 50_265,
            dropout_rate: 0.1,
            tie_weights: true,
            layer_norm_eps: 1e-5,
        }
    }

    /// Small model used by gradient checks: 2 layers, hidden 32, no dropout.
    pub fn tiny(vocab_capacity: usize) -> Self {
        Self {
            num_layers: 2,
            num_heads: 4,
            hidden_dim: 32,
            intermediate_dim: 64,
            max_seq_len: 16,
            vocab_capacity,
            dropout_rate: 0.0,
            tie_weights: true,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.num_layers == 0 || self.num_heads == 0 || self.hidden_dim == 0 || self.intermediate_dim == 0 {
            return bad(format!("layer, head and dimension counts must be positive: {self:?}"));
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.max_seq_len < 2 {
            return bad(format!("max_seq_len must be at least 2, got {}", self.max_seq_len));
        }
        if self.vocab_capacity == 0 {
            return bad("vocab_capacity must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad(format!("layer_norm_eps must be positive, got {}", self.layer_norm_eps));
        }
        Ok(())
    }
}

/// A rectangular batch of token ids with its attention mask (`true` on real
/// tokens, `false` on padding). Stored row-major, `batch_size × seq_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    token_ids: Vec<u32>,
    attention_mask: Vec<bool>,
    batch_size: usize,
    seq_len: usize,
}

impl Batch {
    pub fn new(token_ids: Vec<u32>, attention_mask: Vec<bool>, batch_size: usize, seq_len: usize) -> Result<Self> {
        if token_ids.len() != batch_size * seq_len || attention_mask.len() != token_ids.len() {
            return Err(Error::InvalidBatch(format!(
                "{} ids and {} mask entries for a {batch_size}×{seq_len} batch",
                token_ids.len(),
                attention_mask.len()
            )));
        }
        Ok(Self { token_ids, attention_mask, batch_size, seq_len })
    }

    /// Right-pads `sequences` with `pad_id` to the longest one.
    pub fn padded(sequences: &[Vec<u32>], pad_id: u32) -> Result<Self> {
        let seq_len = sequences.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(sequences.len() * seq_len);
        let mut mask = Vec::with_capacity(ids.capacity());
        for s in sequences {
            ids.extend_from_slice(s);
            mask.extend(core::iter::repeat_n(true, s.len()));
            ids.extend(core::iter::repeat_n(pad_id, seq_len - s.len()));
            mask.extend(core::iter::repeat_n(false, seq_len - s.len()));
        }
        Self::new(ids, mask, sequences.len(), seq_len)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    pub fn attention_mask(&self) -> &[bool] {
        &self.attention_mask
    }

    pub fn ids(&self, row: usize) -> &[u32] {
        &self.token_ids[row * self.seq_len..(row + 1) * self.seq_len]
    }

    pub fn mask(&self, row: usize) -> &[bool] {
        &self.attention_mask[row * self.seq_len..(row + 1) * self.seq_len]
    }

    pub(crate) fn ids_mut(&mut self) -> &mut [u32] {
        &mut self.token_ids
    }

    /// Checks ids and length against `config`.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.batch_size == 0 || self.seq_len == 0 {
            return Err(Error::InvalidBatch("batch is empty".into()));
        }
        if self.seq_len > config.max_seq_len {
            return Err(Error::InvalidBatch(format!(
                "sequence length {} exceeds max_seq_len {}",
                self.seq_len, config.max_seq_len
            )));
        }
        if let Some(&id) = self.token_ids.iter().find(|&&id| id as usize >= config.vocab_capacity) {
            return Err(Error::TokenOutOfRange { id, capacity: config.vocab_capacity });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
