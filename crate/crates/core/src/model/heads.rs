//! Output heads, their losses, and the full loss/gradient driver.

use alloc::vec::Vec;

use super::encoder::{backward_sequence, forward_sequence, SequenceCache};
use super::ops::{gelu_backward, gelu_matrix, layer_norm, layer_norm_backward, NormCache};
use super::params::{ClassifierHead, Gradients, Parameters};
use super::{Batch, ModelConfig, IGNORE_LABEL};
use crate::rng::Rng;
use crate::tensor::{log_sum_exp, softmax_in_place};
use crate::{Error, Matrix, Result};

/// What the scalar loss is computed from.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Masked-LM cross entropy; `labels` is `batch_size × seq_len`, with
    /// [`IGNORE_LABEL`] at positions that carry no loss.
    MaskedLm { labels: &'a [u32] },
    /// One class per sequence, read from the first token.
    Sequence { head: &'a ClassifierHead, labels: &'a [u32] },
    /// One tag per position, `batch_size × seq_len`; padding and
    /// [`IGNORE_LABEL`] positions are skipped.
    Tokens { head: &'a ClassifierHead, labels: &'a [u32] },
}

impl Objective<'_> {
    fn head(&self) -> Option<&ClassifierHead> {
        match self {
            Objective::MaskedLm { .. } => None,
            Objective::Sequence { head, .. } | Objective::Tokens { head, .. } => Some(head),
        }
    }
}

/// Mean cross entropy over rows whose label is not [`IGNORE_LABEL`].
pub fn cross_entropy(logits: &Matrix, labels: &[u32]) -> Result<f64> {
    cross_entropy_impl(logits, labels, false).map(|(l, _)| l)
}

/// [`cross_entropy`] over per-sequence `L × V` logits with flattened labels.
pub fn mlm_loss(logits: &[Matrix], labels: &[u32]) -> Result<f64> {
    let stacked = stack(logits);
    if labels.len() != stacked.rows() {
        return Err(Error::InvalidBatch(alloc::format!(
            "{} labels for {} positions",
            labels.len(),
            stacked.rows()
        )));
    }
    cross_entropy(&stacked, labels)
}

fn cross_entropy_impl(logits: &Matrix, labels: &[u32], grad: bool) -> Result<(f64, Option<Matrix>)> {
    let classes = logits.cols();
    let mut count = 0usize;
    for &y in labels {
        if y == IGNORE_LABEL {
            continue;
        }
        if y as usize >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyLoss);
    }
    let n = count as f64;
    let mut total = 0.0;
    let mut d = grad.then(|| Matrix::zeros(logits.rows(), classes));
    for (r, &y) in labels.iter().enumerate() {
        if y == IGNORE_LABEL {
            continue;
        }
        let row = logits.row(r);
        total += log_sum_exp(row) - row[y as usize];
        if let Some(d) = d.as_mut() {
            let dr = d.row_mut(r);
            dr.copy_from_slice(row);
            softmax_in_place(dr);
            dr[y as usize] -= 1.0;
            dr.iter_mut().for_each(|v| *v /= n);
        }
    }
    Ok((total / n, d))
}

fn stack(parts: &[Matrix]) -> Matrix {
    let cols = parts.first().map_or(0, Matrix::cols);
    let mut data = Vec::with_capacity(parts.iter().map(|m| m.as_slice().len()).sum());
    for m in parts {
        data.extend_from_slice(m.as_slice());
    }
    Matrix::from_vec(data.len() / cols.max(1), cols, data).expect("uniform widths")
}

struct MlmCache {
    input: Matrix,
    pre: Matrix,
    norm: NormCache,
    normed: Matrix,
}

fn mlm_head_forward(p: &Parameters, cfg: &ModelConfig, hidden: Matrix) -> (Matrix, MlmCache) {
    let head = &p.mlm_head;
    let pre = head.dense.forward(&hidden);
    let act = gelu_matrix(&pre);
    let (normed, norm) = layer_norm(&act, &head.norm, cfg.layer_norm_eps);
    let mut logits = normed.matmul_t(p.mlm_decoder());
    logits.add_row_broadcast(&head.bias);
    (logits, MlmCache { input: hidden, pre, norm, normed })
}

fn mlm_head_backward(p: &Parameters, c: &MlmCache, dlogits: &Matrix, g: &mut Parameters) -> Matrix {
    dlogits.col_sums_acc(&mut g.mlm_head.bias);
    match g.mlm_head.decoder.as_mut() {
        Some(dd) => dlogits.t_matmul_acc(&c.normed, dd),
        None => dlogits.t_matmul_acc(&c.normed, &mut g.token_embedding),
    }
    let dnormed = dlogits.matmul(p.mlm_decoder());
    let dact = layer_norm_backward(&dnormed, &p.mlm_head.norm, &c.norm, &mut g.mlm_head.norm);
    let dpre = gelu_backward(&c.pre, &dact);
    p.mlm_head.dense.backward(&c.input, &dpre, &mut g.mlm_head.dense)
}

/// Encoder output for every sequence, `seq_len × hidden_dim` each.
pub(crate) fn encode(p: &Parameters, cfg: &ModelConfig, batch: &Batch) -> Result<Vec<Matrix>> {
    batch.validate(cfg)?;
    Ok((0..batch.batch_size()).map(|b| forward_sequence(p, cfg, batch.ids(b), batch.mask(b), None).0).collect())
}

pub(crate) fn mlm_logits(p: &Parameters, cfg: &ModelConfig, hidden: &[Matrix]) -> Vec<Matrix> {
    hidden.iter().map(|h| mlm_head_forward(p, cfg, h.clone()).0).collect()
}

fn check_head(cfg: &ModelConfig, head: &ClassifierHead) -> Result<()> {
    if head.inputs() != cfg.hidden_dim || head.bias.cols() != head.outputs() {
        return Err(Error::ShapeMismatch {
            expected: (cfg.hidden_dim, head.outputs()),
            actual: head.weight.shape(),
        });
    }
    Ok(())
}

fn first_tokens(hidden: &[Matrix]) -> Matrix {
    let cols = hidden.first().map_or(0, Matrix::cols);
    let mut pooled = Matrix::zeros(hidden.len(), cols);
    for (b, h) in hidden.iter().enumerate() {
        pooled.row_mut(b).copy_from_slice(h.row(0));
    }
    pooled
}

pub(crate) fn classify(p: &Parameters, cfg: &ModelConfig, batch: &Batch, head: &ClassifierHead) -> Result<Matrix> {
    check_head(cfg, head)?;
    let hidden = encode(p, cfg, batch)?;
    Ok(head.forward(&first_tokens(&hidden)))
}

pub(crate) fn token_classify(
    p: &Parameters,
    cfg: &ModelConfig,
    batch: &Batch,
    head: &ClassifierHead,
) -> Result<Vec<Matrix>> {
    check_head(cfg, head)?;
    Ok(encode(p, cfg, batch)?.iter().map(|h| head.forward(h)).collect())
}

/// Loss of `objective` on `batch`, with gradients when `want_grad`. `rng`
/// switches on dropout.
pub(crate) fn run(
    p: &Parameters,
    cfg: &ModelConfig,
    batch: &Batch,
    objective: &Objective<'_>,
    mut rng: Option<&mut Rng>,
    want_grad: bool,
) -> Result<(f64, Option<Gradients>)> {
    batch.validate(cfg)?;
    let (bsz, len) = (batch.batch_size(), batch.seq_len());
    if let Some(head) = objective.head() {
        check_head(cfg, head)?;
    }
    let expected_labels = match objective {
        Objective::Sequence { .. } => bsz,
        _ => bsz * len,
    };
    let labels = match objective {
        Objective::MaskedLm { labels } | Objective::Sequence { labels, .. } | Objective::Tokens { labels, .. } => {
            *labels
        }
    };
    if labels.len() != expected_labels {
        return Err(Error::InvalidBatch(alloc::format!(
            "expected {expected_labels} labels, got {}",
            labels.len()
        )));
    }

    let mut hidden = Vec::with_capacity(bsz);
    let mut caches: Vec<SequenceCache> = Vec::with_capacity(bsz);
    for b in 0..bsz {
        let (h, c) = forward_sequence(p, cfg, batch.ids(b), batch.mask(b), rng.as_deref_mut());
        hidden.push(h);
        if want_grad {
            caches.push(c);
        }
    }

    let mut grads = want_grad.then(|| Gradients::zeros(p, objective.head()));
    let mut dhidden: Vec<Matrix> = Vec::new();
    let loss = match objective {
        Objective::MaskedLm { labels } => {
            let positions: Vec<usize> = (0..bsz * len).filter(|&i| labels[i] != IGNORE_LABEL).collect();
            if positions.is_empty() {
                return Err(Error::EmptyLoss);
            }
            let mut selected = Matrix::zeros(positions.len(), cfg.hidden_dim);
            let mut sel_labels = Vec::with_capacity(positions.len());
            for (r, &i) in positions.iter().enumerate() {
                selected.row_mut(r).copy_from_slice(hidden[i / len].row(i % len));
                sel_labels.push(labels[i]);
            }
            let (logits, cache) = mlm_head_forward(p, cfg, selected);
            let (loss, dlogits) = cross_entropy_impl(&logits, &sel_labels, want_grad)?;
            check_finite(loss)?;
            if let (Some(g), Some(dl)) = (grads.as_mut(), dlogits) {
                let dsel = mlm_head_backward(p, &cache, &dl, &mut g.params);
                dhidden = hidden.iter().map(Matrix::zeros_like).collect();
                for (r, &i) in positions.iter().enumerate() {
                    dhidden[i / len].row_mut(i % len).copy_from_slice(dsel.row(r));
                }
            }
            loss
        }
        Objective::Sequence { head, labels } => {
            let pooled = first_tokens(&hidden);
            let logits = head.forward(&pooled);
            let (loss, dlogits) = cross_entropy_impl(&logits, labels, want_grad)?;
            check_finite(loss)?;
            if let (Some(g), Some(dl)) = (grads.as_mut(), dlogits) {
                let dpooled = head.backward(&pooled, &dl, g.head.as_mut().expect("head gradient slot"));
                dhidden = hidden.iter().map(Matrix::zeros_like).collect();
                for (b, d) in dhidden.iter_mut().enumerate() {
                    d.row_mut(0).copy_from_slice(dpooled.row(b));
                }
            }
            loss
        }
        Objective::Tokens { head, labels } => {
            let stacked = stack(&hidden);
            let logits = head.forward(&stacked);
            let effective: Vec<u32> = labels
                .iter()
                .zip(batch.attention_mask())
                .map(|(&y, &real)| if real { y } else { IGNORE_LABEL })
                .collect();
            let (loss, dlogits) = cross_entropy_impl(&logits, &effective, want_grad)?;
            check_finite(loss)?;
            if let (Some(g), Some(dl)) = (grads.as_mut(), dlogits) {
                let dstacked = head.backward(&stacked, &dl, g.head.as_mut().expect("head gradient slot"));
                dhidden = (0..bsz)
                    .map(|b| {
                        let rows = dstacked.as_slice()[b * len * cfg.hidden_dim..(b + 1) * len * cfg.hidden_dim].to_vec();
                        Matrix::from_vec(len, cfg.hidden_dim, rows).expect("slice shape")
                    })
                    .collect();
            }
            loss
        }
    };

    if let Some(g) = grads.as_mut() {
        for (cache, d) in caches.iter().zip(dhidden) {
            backward_sequence(p, cfg, cache, d, &mut g.params);
        }
    }
    Ok((loss, grads))
}

fn check_finite(loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("loss"))
    }
}
