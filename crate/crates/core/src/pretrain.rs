//! Continual MLM pretraining: dynamic masking, the training loop and the
//! ablation wirings.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedding::{adapt_checkpoint, apply_noise, AdaptOptions, EmbeddingMatrix};
use crate::model::{Batch, Checkpoint, Objective, IGNORE_LABEL};
use crate::optim::{AdamW, AdamWConfig, LinearSchedule};
use crate::rng;
use crate::tokenizer::{MergePlan, Tokenizer};
use crate::{Error, Result};

/// Which tokenizer and embedding initialization a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Merged domain tokenizer, noise on mutual rows.
    Modified,
    /// Merged domain tokenizer, mutual rows copied unchanged.
    Raw,
    /// Pretrained tokenizer, noise on every row.
    PretrainedTok,
    /// Pretrained tokenizer and weights unchanged.
    PretrainedTokRaw,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Modified, Variant::Raw, Variant::PretrainedTok, Variant::PretrainedTokRaw];

    pub fn from_flags(custom_tokenizer: bool, apply_noise: bool) -> Self {
        match (custom_tokenizer, apply_noise) {
            (true, true) => Variant::Modified,
            (true, false) => Variant::Raw,
            (false, true) => Variant::PretrainedTok,
            (false, false) => Variant::PretrainedTokRaw,
        }
    }

    pub fn custom_tokenizer(self) -> bool {
        matches!(self, Variant::Modified | Variant::Raw)
    }

    pub fn apply_noise(self) -> bool {
        matches!(self, Variant::Modified | Variant::PretrainedTok)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Modified => "modified",
            Variant::Raw => "raw",
            Variant::PretrainedTok => "pretrained-tok",
            Variant::PretrainedTokRaw => "pretrained-tok-raw",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }
}

impl core::fmt::Display for Variant {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ids the masking procedure needs to know about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskingVocab {
    pub mask_id: u32,
    /// Never selected for masking.
    pub special_ids: BTreeSet<u32>,
    /// Pool for random replacements: every assigned non-special id.
    pub replacement_ids: Vec<u32>,
}

impl MaskingVocab {
    pub fn from_tokenizer(tok: &Tokenizer) -> Self {
        Self {
            mask_id: tok.specials().mask,
            special_ids: tok.vocabulary().specials().iter().map(|(_, id)| *id).collect(),
            replacement_ids: tok.regular_ids(),
        }
    }
}

/// What happened to a selected position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAction {
    /// Replaced by the mask token (80%).
    Masked,
    /// Replaced by a random regular token (10%).
    Random,
    /// Left as is but still predicted (10%).
    Kept,
}

/// A batch after masking, with the original ids as labels at selected
/// positions and [`IGNORE_LABEL`] everywhere else.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub batch: Batch,
    pub labels: Vec<u32>,
    pub actions: Vec<Option<MaskAction>>,
    /// No position was selected, even after one redraw.
    pub empty: bool,
}

impl MaskedBatch {
    pub fn selected(&self) -> usize {
        self.actions.iter().filter(|a| a.is_some()).count()
    }
}

/// Selects each real, non-special position independently with probability
/// `rate`, then applies the 80/10/10 mask/random/keep split. A draw that
/// selects nothing is repeated once with a derived seed; if that is empty
/// too the batch is returned unmasked with `empty` set.
pub fn dynamic_mask(batch: &Batch, vocab: &MaskingVocab, rate: f64, epoch_seed: u64) -> Result<MaskedBatch> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidTrainConfig(alloc::format!("mask rate must be in (0, 1), got {rate}")));
    }
    if vocab.replacement_ids.is_empty() {
        return Err(Error::InvalidTrainConfig("no regular tokens to draw replacements from".into()));
    }
    let first = mask_draw(batch, vocab, rate, epoch_seed);
    if first.selected() > 0 {
        return Ok(first);
    }
    let mut second = mask_draw(batch, vocab, rate, rng::derive_seed(epoch_seed, 1));
    second.empty = second.selected() == 0;
    Ok(second)
}

fn mask_draw(batch: &Batch, vocab: &MaskingVocab, rate: f64, seed: u64) -> MaskedBatch {
    let mut r = rng::substream(seed, 0);
    let mut out = batch.clone();
    let n = batch.token_ids().len();
    let mut labels = alloc::vec![IGNORE_LABEL; n];
    let mut actions = alloc::vec![None; n];
    let ids = out.ids_mut();
    for i in 0..n {
        let original = batch.token_ids()[i];
        if !batch.attention_mask()[i] || vocab.special_ids.contains(&original) {
            continue;
        }
        if r.random::<f64>() >= rate {
            continue;
        }
        labels[i] = original;
        let u = r.random::<f64>();
        actions[i] = Some(if u < 0.8 {
            ids[i] = vocab.mask_id;
            MaskAction::Masked
        } else if u < 0.9 {
            ids[i] = vocab.replacement_ids[r.random_range(0..vocab.replacement_ids.len())];
            MaskAction::Random
        } else {
            MaskAction::Kept
        });
    }
    MaskedBatch { batch: out, labels, actions, empty: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub seed: u64,
    pub mask_rate: f64,
    /// Record the loss every this many steps (the last step is always
    /// recorded).
    pub log_every: u64,
    /// Hand the checkpoint to the observer every this many steps; 0 turns
    /// periodic checkpoints off.
    pub checkpoint_every: u64,
    pub optimizer: AdamWConfig,
}

impl TrainConfig {
    /// Desk-scale defaults.
    pub fn desk() -> Self {
        Self {
            steps: 500,
            batch_size: 16,
            learning_rate: 1e-3,
            warmup_steps: 50,
            seed: 0,
            mask_rate: 0.15,
            log_every: 10,
            checkpoint_every: 0,
            optimizer: AdamWConfig::default(),
        }
    }

    /// The recorded large-scale run: 250,000 steps with batches of 18.
    pub fn full_scale() -> Self {
        Self { steps: 250_000, batch_size: 18, learning_rate: 5e-5, warmup_steps: 10_000, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidTrainConfig(msg));
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(alloc::format!("mask_rate must be in (0, 1), got {}", self.mask_rate));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(alloc::format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.warmup_steps > self.steps {
            return bad(alloc::format!("warmup_steps {} exceeds steps {}", self.warmup_steps, self.steps));
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1".into());
        }
        self.optimizer.validate()
    }

    pub fn schedule(&self) -> LinearSchedule {
        LinearSchedule { peak: self.learning_rate, warmup: self.warmup_steps, total: self.steps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Receives progress from [`train_mlm`].
pub trait TrainObserver {
    fn on_loss(&mut self, _record: &LossRecord) {}
    fn on_checkpoint(&mut self, _step: u64, _ckpt: &Checkpoint) {}
}

impl TrainObserver for () {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<LossRecord>,
    /// Steps whose batch had no maskable position and were skipped.
    pub skipped_steps: u64,
}

const SHUFFLE_TAG: u64 = 0x5348_5546;
const MASK_TAG: u64 = 0x4d41_534b;
const DROPOUT_TAG: u64 = 0x4452_4f50;

/// Encodes `text` and cuts it into `<s> … </s>` sequences of at most
/// `max_len` ids. Documents that fit are left whole; nothing is packed
/// across documents.
pub fn encode_windows(tok: &Tokenizer, text: &str, max_len: usize) -> Vec<Vec<u32>> {
    let ids = tok.encode_fragment(text);
    let sp = tok.specials();
    let body = max_len.saturating_sub(2).max(1);
    ids.chunks(body)
        .map(|c| {
            let mut s = Vec::with_capacity(c.len() + 2);
            s.push(sp.bos);
            s.extend_from_slice(c);
            s.push(sp.eos);
            s
        })
        .collect()
}

/// Deterministic batch order: each epoch is a seeded shuffle of all
/// sequences, consumed `batch_size` at a time.
pub(crate) struct BatchCursor {
    seed: u64,
    order: Vec<usize>,
    next: usize,
    epoch: u64,
}

impl BatchCursor {
    pub(crate) fn new(seed: u64, n: usize) -> Self {
        Self { seed, order: (0..n).collect(), next: n, epoch: 0 }
    }

    pub(crate) fn take(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.next == self.order.len() {
                self.order.sort_unstable();
                self.order.shuffle(&mut rng::substream(rng::derive_seed(self.seed, SHUFFLE_TAG), self.epoch));
                self.epoch += 1;
                self.next = 0;
            }
            out.push(self.order[self.next]);
            self.next += 1;
        }
        out
    }
}

/// Runs `cfg.steps` AdamW updates of the MLM objective on `sequences`
/// (already tokenized, each at most `max_seq_len` ids).
///
/// Every random choice (batch order, masks, dropout) derives from
/// `cfg.seed`, so a run is reproducible. On a non-finite loss the
/// checkpoint is left at its last good state and the error names the step.
pub fn train_mlm(
    ckpt: &mut Checkpoint,
    sequences: &[Vec<u32>],
    vocab: &MaskingVocab,
    pad_id: u32,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainReport> {
    cfg.validate()?;
    if sequences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(s) = sequences.iter().find(|s| s.len() > ckpt.config.max_seq_len || s.is_empty()) {
        return Err(Error::InvalidBatch(alloc::format!(
            "sequence of length {} does not fit max_seq_len {}",
            s.len(),
            ckpt.config.max_seq_len
        )));
    }
    let schedule = cfg.schedule();
    let mut opt = AdamW::new(cfg.optimizer, &ckpt.params, None);
    let mut cursor = BatchCursor::new(cfg.seed, sequences.len());
    let mut report = TrainReport { history: Vec::new(), skipped_steps: 0 };
    let start = ckpt.meta.steps;
    for step in 1..=cfg.steps {
        let rows: Vec<Vec<u32>> =
            cursor.take(cfg.batch_size.min(sequences.len())).into_iter().map(|i| sequences[i].clone()).collect();
        let batch = Batch::padded(&rows, pad_id)?;
        let masked = dynamic_mask(&batch, vocab, cfg.mask_rate, rng::derive_seed(cfg.seed ^ MASK_TAG, step))?;
        if masked.empty {
            report.skipped_steps += 1;
            continue;
        }
        let lr = schedule.lr(step);
        let mut dropout = rng::substream(rng::derive_seed(cfg.seed, DROPOUT_TAG), step);
        let objective = Objective::MaskedLm { labels: &masked.labels };
        let (loss, grads) = match ckpt.gradients(&masked.batch, &objective, Some(&mut dropout)) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(Error::NonFiniteLoss { step: start + step }),
            Err(e) => return Err(e),
        };
        let mut updated = ckpt.params.clone();
        opt.step(&mut updated, None, &grads, lr);
        if !updated.is_finite() {
            return Err(Error::NonFiniteLoss { step: start + step });
        }
        ckpt.params = updated;
        ckpt.meta.steps = start + step;
        if step % cfg.log_every == 0 || step == cfg.steps {
            let record = LossRecord { step: start + step, loss, lr };
            observer.on_loss(&record);
            report.history.push(record);
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            observer.on_checkpoint(start + step, ckpt);
        }
    }
    ckpt.meta.train_seed = Some(cfg.seed);
    Ok(report)
}

/// Mean inference-mode MLM loss over `sequences` under a fixed masking
/// seed, in batches of `batch_size`. Batches with nothing masked are
/// skipped; the loss is averaged over masked positions.
pub fn mlm_eval_loss(
    ckpt: &Checkpoint,
    sequences: &[Vec<u32>],
    vocab: &MaskingVocab,
    pad_id: u32,
    mask_rate: f64,
    seed: u64,
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, chunk) in sequences.chunks(batch_size.max(1)).enumerate() {
        let batch = Batch::padded(chunk, pad_id)?;
        let masked = dynamic_mask(&batch, vocab, mask_rate, rng::derive_seed(seed, i as u64))?;
        if masked.empty {
            continue;
        }
        let n = masked.selected();
        total += ckpt.loss(&masked.batch, &Objective::MaskedLm { labels: &masked.labels })? * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok(total / count as f64)
}

/// Builds the starting checkpoint for one ablation wiring.
///
/// Custom-tokenizer variants run the full merge-plan adaptation (noise on
/// mutual rows iff the variant asks for it). Pretrained-tokenizer variants
/// keep the pretrained vocabulary and skip transplantation; with noise
/// they perturb every embedding row. The variant is recorded in the
/// metadata.
pub fn assemble_variant(
    variant: Variant,
    pretrained: &Checkpoint,
    plan: Option<&MergePlan>,
    opts: &AdaptOptions,
) -> Result<Checkpoint> {
    let mut out = if variant.custom_tokenizer() {
        let plan = plan.ok_or(Error::MissingMergePlan(variant.name()))?;
        adapt_checkpoint(pretrained, plan, &AdaptOptions { apply_noise: variant.apply_noise(), ..*opts })?
    } else {
        let mut out = pretrained.clone();
        if variant.apply_noise() {
            let mut emb = EmbeddingMatrix::new(out.params.token_embedding.clone());
            let rows = emb.rows() as u32;
            apply_noise(&mut emb, 0..rows, &opts.noise)?;
            out.params.token_embedding = emb.into_matrix()?;
        }
        out.meta.noise = Some(crate::model::NoiseRecord {
            mu: opts.noise.mu,
            sigma: opts.noise.sigma,
            seed: opts.noise.seed,
            applied: variant.apply_noise(),
        });
        out
    };
    out.meta.variant = Some(variant);
    Ok(out)
}
