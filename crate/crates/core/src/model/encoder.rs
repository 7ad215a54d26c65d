//! Post-norm transformer encoder: forward pass with saved activations and
//! the matching reverse pass.

use alloc::vec::Vec;

use super::ops::{dropout, dropout_backward, gelu_backward, gelu_matrix, layer_norm, layer_norm_backward, NormCache};
use super::params::{EncoderLayer, Parameters};
use super::ModelConfig;
use crate::rng::Rng;
use crate::tensor::{dot, softmax_in_place};
use crate::Matrix;

pub(crate) struct LayerCache {
    input: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Per head, `L × L` attention weights; rows of fully masked queries
    /// and columns of masked keys are zero.
    probs: Vec<Matrix>,
    context: Matrix,
    attention_drop: Option<Vec<f64>>,
    attention_norm: NormCache,
    y1: Matrix,
    ffn_pre: Matrix,
    ffn_act: Matrix,
    ffn_drop: Option<Vec<f64>>,
    ffn_norm: NormCache,
}

pub(crate) struct SequenceCache {
    ids: Vec<u32>,
    embedding_norm: NormCache,
    embedding_drop: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
}

/// Encodes one sequence. `rng` enables dropout (training mode).
pub(crate) fn forward_sequence(
    p: &Parameters,
    cfg: &ModelConfig,
    ids: &[u32],
    mask: &[bool],
    mut rng: Option<&mut Rng>,
) -> (Matrix, SequenceCache) {
    let h = cfg.hidden_dim;
    let mut x = Matrix::zeros(ids.len(), h);
    for (t, &id) in ids.iter().enumerate() {
        let tok = p.token_embedding.row(id as usize);
        let pos = p.position_embedding.row(t);
        for ((o, a), b) in x.row_mut(t).iter_mut().zip(tok).zip(pos) {
            *o = a + b;
        }
    }
    let (mut x, embedding_norm) = layer_norm(&x, &p.embedding_norm, cfg.layer_norm_eps);
    let embedding_drop = dropout(&mut x, cfg.dropout_rate, rng.as_deref_mut());
    let mut layers = Vec::with_capacity(p.layers.len());
    for layer in &p.layers {
        let (y, cache) = layer_forward(layer, cfg, x, mask, rng.as_deref_mut());
        layers.push(cache);
        x = y;
    }
    (x, SequenceCache { ids: ids.to_vec(), embedding_norm, embedding_drop, layers })
}

/// Accumulates the gradient of the encoder given `∂L/∂output`.
pub(crate) fn backward_sequence(
    p: &Parameters,
    cfg: &ModelConfig,
    cache: &SequenceCache,
    mut d: Matrix,
    grads: &mut Parameters,
) {
    for ((layer, lc), g) in p.layers.iter().zip(&cache.layers).zip(grads.layers.iter_mut()).rev() {
        d = layer_backward(layer, cfg, lc, &d, g);
    }
    dropout_backward(&mut d, &cache.embedding_drop);
    let d = layer_norm_backward(&d, &p.embedding_norm, &cache.embedding_norm, &mut grads.embedding_norm);
    for (t, &id) in cache.ids.iter().enumerate() {
        let dr = d.row(t);
        for (g, v) in grads.token_embedding.row_mut(id as usize).iter_mut().zip(dr) {
            *g += v;
        }
        for (g, v) in grads.position_embedding.row_mut(t).iter_mut().zip(dr) {
            *g += v;
        }
    }
}

fn layer_forward(
    layer: &EncoderLayer,
    cfg: &ModelConfig,
    input: Matrix,
    mask: &[bool],
    mut rng: Option<&mut Rng>,
) -> (Matrix, LayerCache) {
    let q = layer.query.forward(&input);
    let k = layer.key.forward(&input);
    let v = layer.value.forward(&input);
    let (context, probs) = attention(&q, &k, &v, mask, cfg.num_heads);

    let mut a = layer.attention_output.forward(&context);
    let attention_drop = dropout(&mut a, cfg.dropout_rate, rng.as_deref_mut());
    a.add_assign(&input);
    let (y1, attention_norm) = layer_norm(&a, &layer.attention_norm, cfg.layer_norm_eps);

    let ffn_pre = layer.ffn_input.forward(&y1);
    let ffn_act = gelu_matrix(&ffn_pre);
    let mut f = layer.ffn_output.forward(&ffn_act);
    let ffn_drop = dropout(&mut f, cfg.dropout_rate, rng);
    f.add_assign(&y1);
    let (out, ffn_norm) = layer_norm(&f, &layer.ffn_norm, cfg.layer_norm_eps);

    let cache = LayerCache {
        input,
        q,
        k,
        v,
        probs,
        context,
        attention_drop,
        attention_norm,
        y1,
        ffn_pre,
        ffn_act,
        ffn_drop,
        ffn_norm,
    };
    (out, cache)
}

fn layer_backward(layer: &EncoderLayer, cfg: &ModelConfig, c: &LayerCache, dout: &Matrix, g: &mut EncoderLayer) -> Matrix {
    let mut df = layer_norm_backward(dout, &layer.ffn_norm, &c.ffn_norm, &mut g.ffn_norm);
    let mut dy1 = df.clone();
    dropout_backward(&mut df, &c.ffn_drop);
    let dact = layer.ffn_output.backward(&c.ffn_act, &df, &mut g.ffn_output);
    let dpre = gelu_backward(&c.ffn_pre, &dact);
    dy1.add_assign(&layer.ffn_input.backward(&c.y1, &dpre, &mut g.ffn_input));

    let mut da = layer_norm_backward(&dy1, &layer.attention_norm, &c.attention_norm, &mut g.attention_norm);
    let mut dinput = da.clone();
    dropout_backward(&mut da, &c.attention_drop);
    let dctx = layer.attention_output.backward(&c.context, &da, &mut g.attention_output);
    let (dq, dk, dv) = attention_backward(c, &dctx, cfg.num_heads);
    dinput.add_assign(&layer.query.backward(&c.input, &dq, &mut g.query));
    dinput.add_assign(&layer.key.backward(&c.input, &dk, &mut g.key));
    dinput.add_assign(&layer.value.backward(&c.input, &dv, &mut g.value));
    dinput
}

/// Multi-head scaled dot-product attention over the unmasked keys only. A
/// query with no unmasked key gets a zero context vector.
fn attention(q: &Matrix, k: &Matrix, v: &Matrix, mask: &[bool], heads: usize) -> (Matrix, Vec<Matrix>) {
    let (len, hidden) = q.shape();
    let dh = hidden / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let keys: Vec<usize> = (0..len).filter(|&j| mask[j]).collect();
    let mut context = Matrix::zeros(len, hidden);
    let mut probs = Vec::with_capacity(heads);
    let mut scores = Vec::with_capacity(keys.len());
    for head in 0..heads {
        let cols = head * dh..(head + 1) * dh;
        let mut p = Matrix::zeros(len, len);
        if !keys.is_empty() {
            for i in 0..len {
                let qi = &q.row(i)[cols.clone()];
                scores.clear();
                scores.extend(keys.iter().map(|&j| dot(qi, &k.row(j)[cols.clone()]) * scale));
                softmax_in_place(&mut scores);
                let ctx = &mut context.row_mut(i)[cols.clone()];
                for (&j, &w) in keys.iter().zip(&scores) {
                    p.set(i, j, w);
                    for (o, x) in ctx.iter_mut().zip(&v.row(j)[cols.clone()]) {
                        *o += w * x;
                    }
                }
            }
        }
        probs.push(p);
    }
    (context, probs)
}

fn attention_backward(c: &LayerCache, dctx: &Matrix, heads: usize) -> (Matrix, Matrix, Matrix) {
    let (len, hidden) = c.q.shape();
    let dh = hidden / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut dq = Matrix::zeros(len, hidden);
    let mut dk = Matrix::zeros(len, hidden);
    let mut dv = Matrix::zeros(len, hidden);
    let mut dp = alloc::vec![0.0; len];
    for (head, p) in c.probs.iter().enumerate() {
        let cols = head * dh..(head + 1) * dh;
        for i in 0..len {
            let pi = p.row(i);
            let dci = &dctx.row(i)[cols.clone()];
            let mut weighted = 0.0;
            for j in 0..len {
                if pi[j] == 0.0 {
                    dp[j] = 0.0;
                    continue;
                }
                dp[j] = dot(dci, &c.v.row(j)[cols.clone()]);
                weighted += pi[j] * dp[j];
                for (o, x) in dv.row_mut(j)[cols.clone()].iter_mut().zip(dci) {
                    *o += pi[j] * x;
                }
            }
            for j in 0..len {
                if pi[j] == 0.0 {
                    continue;
                }
                let ds = pi[j] * (dp[j] - weighted) * scale;
                for (o, x) in dq.row_mut(i)[cols.clone()].iter_mut().zip(&c.k.row(j)[cols.clone()]) {
                    *o += ds * x;
                }
                for (o, x) in dk.row_mut(j)[cols.clone()].iter_mut().zip(&c.q.row(i)[cols.clone()]) {
                    *o += ds * x;
                }
            }
        }
    }
    (dq, dk, dv)
}
