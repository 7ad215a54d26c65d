use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::rng;
use crate::{Error, Matrix, Result};

/// Standard deviation of the normal initializer for dense weights.
pub const INIT_STD: f64 = 0.02;

/// Affine map `y = x·W + b` with `W` stored inputs × outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Matrix::zeros(inputs, outputs), bias: Matrix::zeros(1, outputs) }
    }

    /// Normal(0, 0.02) weights and zero bias.
    pub fn random(inputs: usize, outputs: usize, seed: u64) -> Self {
        let mut l = Self::zeros(inputs, outputs);
        fill_normal(&mut l.weight, seed, INIT_STD);
        l
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul(&self.weight);
        y.add_row_broadcast(&self.bias);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub(crate) fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Linear) -> Matrix {
        x.t_matmul_acc(dy, &mut grad.weight);
        dy.col_sums_acc(&mut grad.bias);
        dy.matmul_t(&self.weight)
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs(), self.outputs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Matrix,
    pub beta: Matrix,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self { gamma: Matrix::filled(1, dim, 1.0), beta: Matrix::zeros(1, dim) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attention_output: Linear,
    pub attention_norm: LayerNorm,
    pub ffn_input: Linear,
    pub ffn_output: Linear,
    pub ffn_norm: LayerNorm,
}

/// Dense → GELU → LayerNorm → projection onto the vocabulary.
///
/// With tied weights the projection is the token embedding matrix itself and
/// `decoder` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmHead {
    pub dense: Linear,
    pub norm: LayerNorm,
    pub decoder: Option<Matrix>,
    pub bias: Matrix,
}

/// Every trainable tensor of the encoder and its masked-LM head.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub embedding_norm: LayerNorm,
    pub layers: Vec<EncoderLayer>,
    pub mlm_head: MlmHead,
}

fn fill_normal(m: &mut Matrix, seed: u64, std: f64) {
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut r = rng::substream(seed, 0);
    for x in m.as_mut_slice() {
        *x = normal.sample(&mut r);
    }
}

impl Parameters {
    /// Random initialization: normal(0, 0.02) for embeddings and dense
    /// weights, zero biases, unit LayerNorm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        for (i, (_, m)) in p.named_mut().into_iter().enumerate() {
            let is_bias_or_norm = m.rows() == 1;
            if !is_bias_or_norm {
                fill_normal(m, rng::derive_seed(seed, i as u64), INIT_STD);
            }
        }
        Ok(p)
    }

    /// Zero weights and identity LayerNorms shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden_dim;
        let layer = EncoderLayer {
            query: Linear::zeros(h, h),
            key: Linear::zeros(h, h),
            value: Linear::zeros(h, h),
            attention_output: Linear::zeros(h, h),
            attention_norm: LayerNorm::new(h),
            ffn_input: Linear::zeros(h, config.intermediate_dim),
            ffn_output: Linear::zeros(config.intermediate_dim, h),
            ffn_norm: LayerNorm::new(h),
        };
        Self {
            token_embedding: Matrix::zeros(config.vocab_capacity, h),
            position_embedding: Matrix::zeros(config.max_seq_len, h),
            embedding_norm: LayerNorm::new(h),
            layers: alloc::vec![layer; config.num_layers],
            mlm_head: MlmHead {
                dense: Linear::zeros(h, h),
                norm: LayerNorm::new(h),
                decoder: (!config.tie_weights).then(|| Matrix::zeros(config.vocab_capacity, h)),
                bias: Matrix::zeros(1, config.vocab_capacity),
            },
        }
    }

    /// Zero tensors of identical shapes (LayerNorm gains zero too); the
    /// accumulator layout for gradients.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, m) in z.named_mut() {
            m.fill(0.0);
        }
        z
    }

    /// The `V × hidden` matrix the MLM head projects onto.
    pub fn mlm_decoder(&self) -> &Matrix {
        self.mlm_head.decoder.as_ref().unwrap_or(&self.token_embedding)
    }

    pub fn is_tied(&self) -> bool {
        self.mlm_head.decoder.is_none()
    }

    /// Tensors in a fixed order under stable dotted names.
    pub fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        out.push((String::from("embeddings.token"), &self.token_embedding));
        out.push((String::from("embeddings.position"), &self.position_embedding));
        push_norm(&mut out, "embeddings.norm", &self.embedding_norm);
        for (i, l) in self.layers.iter().enumerate() {
            push_linear(&mut out, &format!("layers.{i}.attention.query"), &l.query);
            push_linear(&mut out, &format!("layers.{i}.attention.key"), &l.key);
            push_linear(&mut out, &format!("layers.{i}.attention.value"), &l.value);
            push_linear(&mut out, &format!("layers.{i}.attention.output"), &l.attention_output);
            push_norm(&mut out, &format!("layers.{i}.attention.norm"), &l.attention_norm);
            push_linear(&mut out, &format!("layers.{i}.ffn.input"), &l.ffn_input);
            push_linear(&mut out, &format!("layers.{i}.ffn.output"), &l.ffn_output);
            push_norm(&mut out, &format!("layers.{i}.ffn.norm"), &l.ffn_norm);
        }
        push_linear(&mut out, "mlm_head.dense", &self.mlm_head.dense);
        push_norm(&mut out, "mlm_head.norm", &self.mlm_head.norm);
        if let Some(d) = &self.mlm_head.decoder {
            out.push((String::from("mlm_head.decoder"), d));
        }
        out.push((String::from("mlm_head.bias"), &self.mlm_head.bias));
        out
    }

    /// Mutable counterpart of [`Self::named`], same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        out.push((String::from("embeddings.token"), &mut self.token_embedding));
        out.push((String::from("embeddings.position"), &mut self.position_embedding));
        push_norm_mut(&mut out, "embeddings.norm", &mut self.embedding_norm);
        for (i, l) in self.layers.iter_mut().enumerate() {
            push_linear_mut(&mut out, &format!("layers.{i}.attention.query"), &mut l.query);
            push_linear_mut(&mut out, &format!("layers.{i}.attention.key"), &mut l.key);
            push_linear_mut(&mut out, &format!("layers.{i}.attention.value"), &mut l.value);
            push_linear_mut(&mut out, &format!("layers.{i}.attention.output"), &mut l.attention_output);
            push_norm_mut(&mut out, &format!("layers.{i}.attention.norm"), &mut l.attention_norm);
            push_linear_mut(&mut out, &format!("layers.{i}.ffn.input"), &mut l.ffn_input);
            push_linear_mut(&mut out, &format!("layers.{i}.ffn.output"), &mut l.ffn_output);
            push_norm_mut(&mut out, &format!("layers.{i}.ffn.norm"), &mut l.ffn_norm);
        }
        push_linear_mut(&mut out, "mlm_head.dense", &mut self.mlm_head.dense);
        push_norm_mut(&mut out, "mlm_head.norm", &mut self.mlm_head.norm);
        if let Some(d) = &mut self.mlm_head.decoder {
            out.push((String::from("mlm_head.decoder"), d));
        }
        out.push((String::from("mlm_head.bias"), &mut self.mlm_head.bias));
        out
    }

    /// Rebuilds parameters from named tensors, checking every name and
    /// shape against `config`.
    pub fn from_named(config: &ModelConfig, tensors: Vec<(String, Matrix)>) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let mut slots = p.named_mut();
        if slots.len() != tensors.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} tensors, found {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (name, m) in tensors {
            let slot = slots
                .iter_mut()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| Error::InvalidConfig(format!("unexpected tensor {name:?}")))?;
            if slot.1.shape() != m.shape() {
                return Err(Error::ShapeMismatch { expected: slot.1.shape(), actual: m.shape() });
            }
            *slot.1 = m;
        }
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.is_finite())
    }

    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, m)| m.as_slice().len()).sum()
    }
}

fn push_linear<'a>(out: &mut Vec<(String, &'a Matrix)>, prefix: &str, l: &'a Linear) {
    out.push((format!("{prefix}.weight"), &l.weight));
    out.push((format!("{prefix}.bias"), &l.bias));
}

fn push_norm<'a>(out: &mut Vec<(String, &'a Matrix)>, prefix: &str, n: &'a LayerNorm) {
    out.push((format!("{prefix}.gamma"), &n.gamma));
    out.push((format!("{prefix}.beta"), &n.beta));
}

fn push_linear_mut<'a>(out: &mut Vec<(String, &'a mut Matrix)>, prefix: &str, l: &'a mut Linear) {
    out.push((format!("{prefix}.weight"), &mut l.weight));
    out.push((format!("{prefix}.bias"), &mut l.bias));
}

fn push_norm_mut<'a>(out: &mut Vec<(String, &'a mut Matrix)>, prefix: &str, n: &'a mut LayerNorm) {
    out.push((format!("{prefix}.gamma"), &mut n.gamma));
    out.push((format!("{prefix}.beta"), &mut n.beta));
}

/// Output head for sequence or per-token classification.
pub type ClassifierHead = Linear;

impl ClassifierHead {
    pub fn num_classes(&self) -> usize {
        self.outputs()
    }
}

/// Gradient of a scalar loss, laid out like the parameters it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Parameters,
    pub head: Option<ClassifierHead>,
}

impl Gradients {
    pub(crate) fn zeros(params: &Parameters, head: Option<&ClassifierHead>) -> Self {
        Self { params: params.zeros_like(), head: head.map(Linear::zeros_like) }
    }

    pub fn is_finite(&self) -> bool {
        self.params.is_finite() && self.head.as_ref().is_none_or(|h| h.weight.is_finite() && h.bias.is_finite())
    }
}
