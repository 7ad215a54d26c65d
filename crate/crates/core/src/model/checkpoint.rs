use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::heads::{self, Objective};
use super::params::{ClassifierHead, Gradients, Parameters};
use super::{Batch, ModelConfig};
use crate::pretrain::Variant;
use crate::rng::{self, Rng};
use crate::{Error, Matrix, Result};

/// Version of the checkpoint layout written by the file-format layer.
pub const FORMAT_VERSION: u32 = 1;

/// Parameters of the multiplicative noise applied to embedding rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub mu: f64,
    pub sigma: f64,
    pub seed: u64,
    pub applied: bool,
}

/// Provenance carried alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// Generator behind every seeded draw.
    pub rng: String,
    pub init_seed: Option<u64>,
    /// Reference to the tokenizer the ids belong to (a path or digest).
    #[serde(default)]
    pub tokenizer: Option<String>,
    #[serde(default)]
    pub variant: Option<Variant>,
    #[serde(default)]
    pub noise: Option<NoiseRecord>,
    #[serde(default)]
    pub xavier_seed: Option<u64>,
    #[serde(default)]
    pub train_seed: Option<u64>,
    /// Optimizer updates applied so far.
    #[serde(default)]
    pub steps: u64,
}

impl Default for CheckpointMeta {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            rng: String::from(rng::RNG_ALGORITHM),
            init_seed: None,
            tokenizer: None,
            variant: None,
            noise: None,
            xavier_seed: None,
            train_seed: None,
            steps: 0,
        }
    }
}

/// Model configuration, weights and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Parameters,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    /// Freshly initialized model.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = Parameters::init(&config, seed)?;
        let meta = CheckpointMeta { init_seed: Some(seed), ..CheckpointMeta::default() };
        Ok(Self { config, params, meta })
    }

    /// Assembles a checkpoint from named tensors, validating shapes and
    /// finiteness.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Matrix)>, meta: CheckpointMeta) -> Result<Self> {
        let params = Parameters::from_named(&config, tensors)?;
        if !params.is_finite() {
            return Err(Error::NonFinite("checkpoint parameter"));
        }
        Ok(Self { config, params, meta })
    }

    /// Final hidden states (inference mode), `seq_len × hidden_dim` per
    /// sequence.
    pub fn forward(&self, batch: &Batch) -> Result<Vec<Matrix>> {
        heads::encode(&self.params, &self.config, batch)
    }

    /// Vocabulary logits for every position of every sequence.
    pub fn mlm_logits(&self, hidden: &[Matrix]) -> Result<Vec<Matrix>> {
        if let Some(h) = hidden.iter().find(|h| h.cols() != self.config.hidden_dim) {
            return Err(Error::ShapeMismatch { expected: (h.rows(), self.config.hidden_dim), actual: h.shape() });
        }
        Ok(heads::mlm_logits(&self.params, &self.config, hidden))
    }

    /// `batch_size × num_classes` logits from the first-token state.
    pub fn classify(&self, batch: &Batch, head: &ClassifierHead) -> Result<Matrix> {
        heads::classify(&self.params, &self.config, batch, head)
    }

    /// `seq_len × num_tags` logits per sequence.
    pub fn token_classify(&self, batch: &Batch, head: &ClassifierHead) -> Result<Vec<Matrix>> {
        heads::token_classify(&self.params, &self.config, batch, head)
    }

    /// Inference-mode loss.
    pub fn loss(&self, batch: &Batch, objective: &Objective<'_>) -> Result<f64> {
        heads::run(&self.params, &self.config, batch, objective, None, false).map(|(l, _)| l)
    }

    /// Loss and exact gradients. Passing `dropout` trains with dropout
    /// active, drawing masks from that generator.
    pub fn gradients(
        &self,
        batch: &Batch,
        objective: &Objective<'_>,
        dropout: Option<&mut Rng>,
    ) -> Result<(f64, Gradients)> {
        let (loss, grads) = heads::run(&self.params, &self.config, batch, objective, dropout, true)?;
        let grads = grads.expect("gradients requested");
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        Ok((loss, grads))
    }
}
