//! End-to-end fine-tuning of the encoder with a classification head.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{micro_prf_excluding, ConfusionMatrix, Prf, NerSentence, NerTag, SentimentExample, SENTIMENT_CLASSES};
use crate::model::{Batch, Checkpoint, ClassifierHead, Linear, Objective, IGNORE_LABEL};
use crate::optim::{AdamW, AdamWConfig};
use crate::pretrain::{BatchCursor, LossRecord};
use crate::rng::{self, derive_seed};
use crate::tokenizer::Tokenizer;
use crate::{Error, Result};

const SPLIT_TAG: u64 = 0x5350_4c54;
const HEAD_TAG: u64 = 0x4845_4144;
const SHUFFLE_TAG: u64 = 0x4654_5348;
const DROPOUT_TAG: u64 = 0x4654_4450;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainLength {
    Steps(u64),
    /// Passes over the training split, rounded up to whole batches.
    Epochs(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub length: TrainLength,
    pub seed: u64,
    pub log_every: u64,
    pub optimizer: AdamWConfig,
}

impl FineTuneConfig {
    /// 1,500 steps at 1e-5 with batches of 32.
    pub fn sentiment() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 32,
            length: TrainLength::Steps(1500),
            seed: 0,
            log_every: 10,
            optimizer: AdamWConfig::default(),
        }
    }

    /// Three epochs at 2e-5 with batches of 8.
    pub fn ner() -> Self {
        Self { learning_rate: 2e-5, batch_size: 8, length: TrainLength::Epochs(3), ..Self::sentiment() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidTrainConfig(msg.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if matches!(self.length, TrainLength::Steps(0) | TrainLength::Epochs(0)) {
            return bad("training length must be at least 1");
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1");
        }
        self.optimizer.validate()
    }

    fn steps(&self, train_examples: usize) -> u64 {
        match self.length {
            TrainLength::Steps(s) => s,
            TrainLength::Epochs(e) => e * train_examples.div_ceil(self.batch_size) as u64,
        }
    }
}

/// Seeded 90/10 split of `0..n` into (train, held-out), each ascending.
/// The held-out part has `round(n / 10)` items, at least one.
pub fn split_holdout(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidRecord(alloc::format!("need at least 2 examples to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(derive_seed(seed, SPLIT_TAG), 0));
    let held = ((n + 5) / 10).max(1);
    let mut eval = order.split_off(n - held);
    order.sort_unstable();
    eval.sort_unstable();
    Ok((order, eval))
}

/// `<s> text </s>`, truncated to `max_len` ids with the end marker kept.
pub fn encode_sentence(tok: &Tokenizer, text: &str, max_len: usize) -> Vec<u32> {
    let mut ids = tok.encode(text).ids;
    if ids.len() > max_len {
        ids.truncate(max_len.saturating_sub(1));
        ids.push(tok.specials().eos);
    }
    ids
}

/// A tokenized NER sentence. Each word's tag sits on its first subword;
/// continuation subwords and the markers carry [`IGNORE_LABEL`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedSentence {
    pub ids: Vec<u32>,
    pub labels: Vec<u32>,
    /// Position of each word's first subword, `None` for words cut off by
    /// the length limit.
    pub word_starts: Vec<Option<usize>>,
}

/// Words are encoded one at a time, each after a space except the first.
pub fn align_first_subword(tok: &Tokenizer, sentence: &NerSentence, max_len: usize) -> AlignedSentence {
    let sp = tok.specials();
    let room = max_len.saturating_sub(1);
    let mut ids = alloc::vec![sp.bos];
    let mut labels = alloc::vec![IGNORE_LABEL];
    let mut word_starts = Vec::with_capacity(sentence.tokens.len());
    let mut full = false;
    for (i, (word, tag)) in sentence.tokens.iter().zip(&sentence.tags).enumerate() {
        let pieces =
            if i == 0 { tok.encode_fragment(word) } else { tok.encode_fragment(&alloc::format!(" {word}")) };
        if full || ids.len() + pieces.len() > room {
            full = true;
            word_starts.push(None);
            continue;
        }
        word_starts.push(Some(ids.len()));
        labels.push(tag.index());
        labels.extend(core::iter::repeat_n(IGNORE_LABEL, pieces.len() - 1));
        ids.extend(pieces);
    }
    ids.push(sp.eos);
    labels.push(IGNORE_LABEL);
    AlignedSentence { ids, labels, word_starts }
}

fn argmax(row: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Arg-max class per sequence, ties to the lower class.
pub fn predict_classes(
    ckpt: &Checkpoint,
    head: &ClassifierHead,
    sequences: &[Vec<u32>],
    pad_id: u32,
    batch_size: usize,
) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(sequences.len());
    for chunk in sequences.chunks(batch_size.max(1)) {
        let logits = ckpt.classify(&Batch::padded(chunk, pad_id)?, head)?;
        out.extend((0..logits.rows()).map(|r| argmax(logits.row(r))));
    }
    Ok(out)
}

/// Arg-max tag per word. Words beyond the length limit are tagged `O`.
pub fn predict_tags(
    ckpt: &Checkpoint,
    head: &ClassifierHead,
    sentences: &[AlignedSentence],
    pad_id: u32,
    batch_size: usize,
) -> Result<Vec<Vec<NerTag>>> {
    let mut out = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(batch_size.max(1)) {
        let ids: Vec<Vec<u32>> = chunk.iter().map(|s| s.ids.clone()).collect();
        let logits = ckpt.token_classify(&Batch::padded(&ids, pad_id)?, head)?;
        for (s, l) in chunk.iter().zip(&logits) {
            out.push(
                s.word_starts
                    .iter()
                    .map(|p| p.map_or(NerTag::O, |p| NerTag::from_index(argmax(l.row(p))).unwrap_or(NerTag::O)))
                    .collect(),
            );
        }
    }
    Ok(out)
}

#[derive(Clone, Copy)]
enum HeadKind {
    Sequence,
    Tokens,
}

/// Updates encoder and head together with AdamW at a constant rate.
fn finetune_loop(
    ckpt: &mut Checkpoint,
    head: &mut ClassifierHead,
    cfg: &FineTuneConfig,
    train_examples: usize,
    kind: HeadKind,
    mut batch_for: impl FnMut(&[usize]) -> Result<(Batch, Vec<u32>)>,
) -> Result<Vec<LossRecord>> {
    let steps = cfg.steps(train_examples);
    let mut opt = AdamW::new(cfg.optimizer, &ckpt.params, Some(head));
    let mut cursor = BatchCursor::new(derive_seed(cfg.seed, SHUFFLE_TAG), train_examples);
    let mut history = Vec::new();
    for step in 1..=steps {
        let (batch, labels) = batch_for(&cursor.take(cfg.batch_size.min(train_examples)))?;
        let objective = match kind {
            HeadKind::Sequence => Objective::Sequence { head, labels: &labels },
            HeadKind::Tokens => Objective::Tokens { head, labels: &labels },
        };
        let mut dropout = rng::substream(derive_seed(cfg.seed, DROPOUT_TAG), step);
        let (loss, grads) = match ckpt.gradients(&batch, &objective, Some(&mut dropout)) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(Error::NonFiniteLoss { step }),
            Err(e) => return Err(e),
        };
        let mut params = ckpt.params.clone();
        let mut new_head = head.clone();
        opt.step(&mut params, Some(&mut new_head), &grads, cfg.learning_rate);
        if !params.is_finite() || !new_head.weight.is_finite() || !new_head.bias.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        ckpt.params = params;
        *head = new_head;
        if step % cfg.log_every == 0 || step == steps {
            history.push(LossRecord { step, loss, lr: cfg.learning_rate });
        }
    }
    Ok(history)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    /// Mean cross entropy on the held-out split.
    pub loss: f64,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub train_examples: usize,
    pub eval_examples: usize,
}

#[derive(Debug, Clone)]
pub struct ClassifierRun {
    pub checkpoint: Checkpoint,
    pub head: ClassifierHead,
    pub metrics: ClassifierMetrics,
    pub history: Vec<LossRecord>,
}

/// Fine-tunes a copy of `base` on 90% of `data` and scores the rest.
pub fn finetune_classifier(
    base: &Checkpoint,
    tok: &Tokenizer,
    data: &[SentimentExample],
    cfg: &FineTuneConfig,
) -> Result<ClassifierRun> {
    cfg.validate()?;
    let (train, held) = split_holdout(data.len(), cfg.seed)?;
    let max_len = base.config.max_seq_len;
    let pad = tok.specials().pad;
    let encoded: Vec<Vec<u32>> = data.iter().map(|e| encode_sentence(tok, &e.text, max_len)).collect();

    let mut ckpt = base.clone();
    let mut head = Linear::random(base.config.hidden_dim, SENTIMENT_CLASSES, derive_seed(cfg.seed, HEAD_TAG));
    let history = finetune_loop(&mut ckpt, &mut head, cfg, train.len(), HeadKind::Sequence, |idx| {
        let rows: Vec<Vec<u32>> = idx.iter().map(|&i| encoded[train[i]].clone()).collect();
        Ok((Batch::padded(&rows, pad)?, idx.iter().map(|&i| data[train[i]].label).collect()))
    })?;

    let eval_seqs: Vec<Vec<u32>> = held.iter().map(|&i| encoded[i].clone()).collect();
    let gold: Vec<u32> = held.iter().map(|&i| data[i].label).collect();
    let predicted = predict_classes(&ckpt, &head, &eval_seqs, pad, cfg.batch_size)?;
    let mut loss = 0.0;
    for (seqs, labels) in eval_seqs.chunks(cfg.batch_size).zip(gold.chunks(cfg.batch_size)) {
        let batch = Batch::padded(seqs, pad)?;
        loss += ckpt.loss(&batch, &Objective::Sequence { head: &head, labels })? * labels.len() as f64;
    }
    let confusion = ConfusionMatrix::from_pairs(SENTIMENT_CLASSES, &gold, &predicted)?;
    let metrics = ClassifierMetrics {
        loss: loss / held.len() as f64,
        accuracy: confusion.accuracy()?,
        weighted_f1: confusion.weighted_f1()?,
        train_examples: train.len(),
        eval_examples: held.len(),
    };
    Ok(ClassifierRun { checkpoint: ckpt, head, metrics, history })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NerMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Words in the held-out split; every word is scored once.
    pub scored_words: usize,
    pub train_sentences: usize,
    pub eval_sentences: usize,
}

#[derive(Debug, Clone)]
pub struct NerRun {
    pub checkpoint: Checkpoint,
    pub head: ClassifierHead,
    pub metrics: NerMetrics,
    pub history: Vec<LossRecord>,
}

/// Scores per-word predictions against gold tags with `O` excluded.
pub fn ner_scores(gold: &[Vec<NerTag>], predicted: &[Vec<NerTag>]) -> Result<Prf> {
    if gold.len() != predicted.len() || gold.iter().zip(predicted).any(|(g, p)| g.len() != p.len()) {
        return Err(Error::InvalidBatch("gold and predicted tag sequences differ in shape".into()));
    }
    let flat = |v: &[Vec<NerTag>]| v.iter().flatten().map(|t| t.index()).collect::<Vec<_>>();
    micro_prf_excluding(&flat(gold), &flat(predicted), NerTag::O.index())
}

/// Fine-tunes a copy of `base` for tagging on 90% of `data` and scores the
/// rest at the word level.
pub fn finetune_ner(base: &Checkpoint, tok: &Tokenizer, data: &[NerSentence], cfg: &FineTuneConfig) -> Result<NerRun> {
    cfg.validate()?;
    let (train, held) = split_holdout(data.len(), cfg.seed)?;
    let max_len = base.config.max_seq_len;
    let pad = tok.specials().pad;
    let aligned: Vec<AlignedSentence> = data.iter().map(|s| align_first_subword(tok, s, max_len)).collect();

    let mut ckpt = base.clone();
    let mut head = Linear::random(base.config.hidden_dim, NerTag::ALL.len(), derive_seed(cfg.seed, HEAD_TAG));
    let history = finetune_loop(&mut ckpt, &mut head, cfg, train.len(), HeadKind::Tokens, |idx| {
        let rows: Vec<&AlignedSentence> = idx.iter().map(|&i| &aligned[train[i]]).collect();
        let batch = Batch::padded(&rows.iter().map(|s| s.ids.clone()).collect::<Vec<_>>(), pad)?;
        let len = batch.seq_len();
        let mut labels = Vec::with_capacity(rows.len() * len);
        for s in rows {
            labels.extend_from_slice(&s.labels);
            labels.extend(core::iter::repeat_n(IGNORE_LABEL, len - s.labels.len()));
        }
        Ok((batch, labels))
    })?;

    let eval: Vec<AlignedSentence> = held.iter().map(|&i| aligned[i].clone()).collect();
    let predicted = predict_tags(&ckpt, &head, &eval, pad, cfg.batch_size)?;
    let gold: Vec<Vec<NerTag>> = held.iter().map(|&i| data[i].tags.clone()).collect();
    let scores = ner_scores(&gold, &predicted)?;
    let metrics = NerMetrics {
        precision: scores.precision,
        recall: scores.recall,
        f1: scores.f1,
        scored_words: predicted.iter().map(Vec::len).sum(),
        train_sentences: train.len(),
        eval_sentences: held.len(),
    };
    Ok(NerRun { checkpoint: ckpt, head, metrics, history })
}
