//! Initial token embeddings for continual pretraining on a merged
//! vocabulary.
//!
//! Rows of mutual tokens are copied from the pretrained matrix (their ids
//! are unchanged), optionally perturbed with multiplicative Gaussian noise
//! `w' = w + w·ε`, `ε ~ N(μ, σ)`. Rows handed to distinct tokens are drawn
//! fresh from a uniform Xavier distribution.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::{Checkpoint, NoiseRecord};
use crate::rng;
use crate::tokenizer::MergePlan;
use crate::{Error, Matrix, Result};

/// Mean and standard deviation of `ε` plus the seed of its generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub mu: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { mu: 0.0, sigma: 0.01, seed: 0 }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::InvalidNoise(alloc::format!("mu must be finite, got {}", self.mu)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidNoise(alloc::format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// A `|V| × d` matrix that tracks which rows hold meaningful values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    matrix: Matrix,
    initialized: Vec<bool>,
}

impl EmbeddingMatrix {
    /// Wraps a fully initialized matrix.
    pub fn new(matrix: Matrix) -> Self {
        let initialized = alloc::vec![true; matrix.rows()];
        Self { matrix, initialized }
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.matrix.row(id)
    }

    pub fn is_initialized(&self, id: usize) -> bool {
        self.initialized[id]
    }

    pub fn uninitialized_rows(&self) -> Vec<usize> {
        (0..self.rows()).filter(|&r| !self.initialized[r]).collect()
    }

    /// The underlying matrix, provided every row is initialized.
    pub fn into_matrix(self) -> Result<Matrix> {
        match self.initialized.iter().position(|ok| !ok) {
            Some(r) => Err(Error::UninitializedRow(r)),
            None => Ok(self.matrix),
        }
    }

    fn check_row(&self, id: usize) -> Result<()> {
        if id >= self.rows() {
            return Err(Error::RowOutOfRange { row: id, rows: self.rows() });
        }
        Ok(())
    }
}

/// Copies the pretrained matrix and flags the rows of distinct tokens as
/// uninitialized (zeroed). Mutual rows stay bit-identical; ids the plan
/// leaves unassigned keep their pretrained rows.
pub fn transplant_rows(pretrained: &EmbeddingMatrix, plan: &MergePlan) -> Result<EmbeddingMatrix> {
    if pretrained.rows() != plan.pretrained_capacity {
        return Err(Error::ShapeMismatch {
            expected: (plan.pretrained_capacity, pretrained.dim()),
            actual: pretrained.matrix.shape(),
        });
    }
    let mut out = pretrained.clone();
    for id in plan.distinct_ids() {
        let id = id as usize;
        out.check_row(id)?;
        out.matrix.row_mut(id).fill(0.0);
        out.initialized[id] = false;
    }
    Ok(out)
}

/// The `ε` values [`apply_noise`] multiplies row `row` by, replayed from the
/// row's own seeded substream.
pub fn noise_draws(cfg: &NoiseConfig, row: u32, dim: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    let normal = Normal::new(cfg.mu, cfg.sigma).map_err(|e| Error::InvalidNoise(alloc::format!("{e}")))?;
    let mut r = rng::substream(cfg.seed, row as u64);
    Ok((0..dim).map(|_| normal.sample(&mut r)).collect())
}

/// Applies `w' = w + w·ε` element-wise to the selected rows. Each row draws
/// from a substream keyed by its id, so the result does not depend on the
/// order rows are processed in.
pub fn apply_noise(matrix: &mut EmbeddingMatrix, rows: impl IntoIterator<Item = u32>, cfg: &NoiseConfig) -> Result<()> {
    cfg.validate()?;
    let rows: BTreeSet<u32> = rows.into_iter().collect();
    for &id in &rows {
        matrix.check_row(id as usize)?;
        if !matrix.initialized[id as usize] {
            return Err(Error::UninitializedRow(id as usize));
        }
    }
    let dim = matrix.dim();
    for id in rows {
        let eps = noise_draws(cfg, id, dim)?;
        for (w, e) in matrix.matrix.row_mut(id as usize).iter_mut().zip(eps) {
            *w += *w * e;
        }
    }
    Ok(())
}

/// `sqrt(6 / (fan_in + fan_out))` with both fans equal to `dim`.
pub fn xavier_bound(dim: usize) -> f64 {
    libm::sqrt(6.0 / (2 * dim) as f64)
}

/// Fills the selected rows uniformly from `[-b, b]`, `b = xavier_bound(d)`,
/// and marks them initialized.
pub fn xavier_init_rows(matrix: &mut EmbeddingMatrix, rows: impl IntoIterator<Item = u32>, seed: u64) -> Result<()> {
    let rows: BTreeSet<u32> = rows.into_iter().collect();
    for &id in &rows {
        matrix.check_row(id as usize)?;
    }
    let b = xavier_bound(matrix.dim());
    for id in rows {
        let mut r = rng::substream(seed, id as u64);
        for w in matrix.matrix.row_mut(id as usize) {
            *w = r.random_range(-b..=b);
        }
        matrix.initialized[id as usize] = true;
    }
    Ok(())
}

/// Options for [`adapt_checkpoint`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptOptions {
    pub noise: NoiseConfig,
    pub apply_noise: bool,
    pub xavier_seed: u64,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        Self { noise: NoiseConfig::default(), apply_noise: true, xavier_seed: 1 }
    }
}

/// Transplant, then noise on mutual rows if requested, then Xavier on
/// distinct rows. Everything except the token embedding is copied
/// unchanged; a tied output projection follows the new embedding.
pub fn adapt_checkpoint(pretrained: &Checkpoint, plan: &MergePlan, opts: &AdaptOptions) -> Result<Checkpoint> {
    let cfg = &pretrained.config;
    if cfg.vocab_capacity != plan.pretrained_capacity {
        return Err(Error::ShapeMismatch {
            expected: (plan.pretrained_capacity, cfg.hidden_dim),
            actual: pretrained.params.token_embedding.shape(),
        });
    }
    let source = EmbeddingMatrix::new(pretrained.params.token_embedding.clone());
    let mut emb = transplant_rows(&source, plan)?;
    if opts.apply_noise {
        apply_noise(&mut emb, plan.mutual_ids(), &opts.noise)?;
    }
    xavier_init_rows(&mut emb, plan.distinct_ids(), opts.xavier_seed)?;

    let mut out = pretrained.clone();
    out.params.token_embedding = emb.into_matrix()?;
    out.meta.noise = Some(NoiseRecord {
        mu: opts.noise.mu,
        sigma: opts.noise.sigma,
        seed: opts.noise.seed,
        applied: opts.apply_noise,
    });
    out.meta.xavier_seed = Some(opts.xavier_seed);
    out.meta.rng = alloc::string::String::from(rng::RNG_ALGORITHM);
    Ok(out)
}
