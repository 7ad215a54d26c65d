//! Declarative pipeline configuration.
//!
//! A run is described by one TOML file. Any value can be overridden from
//! the command line with `--set section.key=value`, where `value` is a TOML
//! literal (bare words are taken as strings).

use std::path::{Path, PathBuf};

use dapt_core::embedding::NoiseConfig;
use dapt_core::model::ModelConfig;
use dapt_core::optim::AdamWConfig;
use dapt_core::pretrain::{TrainConfig, Variant};
use dapt_core::tokenizer::DEFAULT_SPECIALS;
use serde::{Deserialize, Serialize};

use crate::error::{DaptError, Result};
use crate::ingest::RawSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage derives its own seeds from it.
    pub seed: u64,
    /// Where artifacts go. Relative paths resolve against the output root.
    pub output_dir: PathBuf,
    pub corpus: CorpusSection,
    #[serde(default)]
    pub base: BaseSection,
    #[serde(default)]
    pub tokenizer: TokenizerSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub adapt: AdaptSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub inputs: Vec<RawSource>,
    #[serde(default = "default_target_words")]
    pub target_words: usize,
}

fn default_target_words() -> usize {
    dapt_core::corpus::DEFAULT_TARGET_WORDS
}

/// The pretrained starting point: either existing artifacts, or a stand-in
/// trained from scratch on general text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseSection {
    pub tokenizer: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub inputs: Vec<RawSource>,
    /// Defaults to `tokenizer.vocab_size`.
    pub vocab_size: Option<usize>,
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
}

impl Default for BaseSection {
    fn default() -> Self {
        Self {
            tokenizer: None,
            checkpoint: None,
            inputs: Vec::new(),
            vocab_size: None,
            steps: 200,
            batch_size: 16,
            learning_rate: 1e-3,
            warmup_steps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSection {
    pub vocab_size: usize,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        Self { vocab_size: 2000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Desk,
    FullScale,
}

/// Architecture: a named profile plus optional per-field overrides. The
/// vocabulary capacity always comes from the base tokenizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub profile: Profile,
    pub num_layers: Option<usize>,
    pub num_heads: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub intermediate_dim: Option<usize>,
    pub max_seq_len: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub tie_weights: Option<bool>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            profile: Profile::Desk,
            num_layers: None,
            num_heads: None,
            hidden_dim: None,
            intermediate_dim: None,
            max_seq_len: None,
            dropout_rate: None,
            tie_weights: None,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self, vocab_capacity: usize) -> ModelConfig {
        let mut c = match self.profile {
            Profile::Desk => ModelConfig::desk(),
            Profile::FullScale => ModelConfig::full_scale(),
        };
        c.vocab_capacity = vocab_capacity;
        c.num_layers = self.num_layers.unwrap_or(c.num_layers);
        c.num_heads = self.num_heads.unwrap_or(c.num_heads);
        c.hidden_dim = self.hidden_dim.unwrap_or(c.hidden_dim);
        c.intermediate_dim = self.intermediate_dim.unwrap_or(c.intermediate_dim);
        c.max_seq_len = self.max_seq_len.unwrap_or(c.max_seq_len);
        c.dropout_rate = self.dropout_rate.unwrap_or(c.dropout_rate);
        c.tie_weights = self.tie_weights.unwrap_or(c.tie_weights);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptSection {
    pub variant: Variant,
    /// Use this merge plan instead of computing one.
    pub plan: Option<PathBuf>,
    pub mu: f64,
    pub sigma: f64,
    /// Defaults to a seed derived from the master seed.
    pub noise_seed: Option<u64>,
    pub xavier_seed: Option<u64>,
}

impl Default for AdaptSection {
    fn default() -> Self {
        let n = NoiseConfig::default();
        Self { variant: Variant::Modified, plan: None, mu: n.mu, sigma: n.sigma, noise_seed: None, xavier_seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub mask_rate: f64,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let t = TrainConfig::desk();
        Self {
            steps: t.steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            warmup_steps: t.warmup_steps,
            mask_rate: t.mask_rate,
            log_every: t.log_every,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

impl PretrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            warmup_steps: self.warmup_steps,
            seed,
            mask_rate: self.mask_rate,
            log_every: self.log_every,
            checkpoint_every: self.checkpoint_every,
            optimizer: AdamWConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub mlm_testset: Option<PathBuf>,
    pub topn: Vec<usize>,
    pub sentiment: Option<PathBuf>,
    pub sentiment_steps: u64,
    pub sentiment_learning_rate: f64,
    pub sentiment_batch_size: usize,
    pub ner: Option<PathBuf>,
    pub ner_epochs: u64,
    pub ner_learning_rate: f64,
    pub ner_batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            mlm_testset: None,
            topn: vec![1, 3, 5, 10],
            sentiment: None,
            sentiment_steps: 1500,
            sentiment_learning_rate: 1e-5,
            sentiment_batch_size: 32,
            ner: None,
            ner_epochs: 3,
            ner_learning_rate: 2e-5,
            ner_batch_size: 8,
        }
    }
}

/// Sets `dotted.key` in `table` to `raw`, parsed as a TOML value when
/// possible and as a string otherwise.
fn set_path(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(DaptError::validation(format!("{key}: malformed key")));
    }
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        let entry = node.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| DaptError::validation(format!("{key}: {p} is not a section")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text, applying `key=value` overrides first. Relative
    /// input paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| DaptError::validation(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| DaptError::validation(format!("override {o:?} is not key=value")))?;
            set_path(&mut table, k.trim(), v.trim())?;
        }
        let mut cfg: RunConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| DaptError::validation(e.to_string()))?;
        cfg.resolve_inputs(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DaptError::io(path, e))?;
        Self::from_toml(&text, overrides, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_inputs(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.corpus.inputs.iter_mut().for_each(|s| fix(&mut s.path));
        self.base.inputs.iter_mut().for_each(|s| fix(&mut s.path));
        for p in [
            &mut self.base.tokenizer,
            &mut self.base.checkpoint,
            &mut self.adapt.plan,
            &mut self.eval.mlm_testset,
            &mut self.eval.sentiment,
            &mut self.eval.ner,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Field-level checks; every problem is reported, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut missing = Vec::new();
        let mut need = |field: &str, path: &Path| {
            if !path.exists() {
                missing.push(format!("{field}: {} does not exist", path.display()));
            }
        };
        if self.corpus.inputs.is_empty() {
            errs.push("corpus.inputs: at least one input is required".into());
        }
        for s in &self.corpus.inputs {
            need("corpus.inputs", &s.path);
        }
        match (&self.base.tokenizer, &self.base.checkpoint) {
            (Some(t), Some(c)) => {
                need("base.tokenizer", t);
                need("base.checkpoint", c);
            }
            (None, None) => {
                if self.base.inputs.is_empty() {
                    errs.push("base.inputs: required when no base tokenizer and checkpoint are given".into());
                }
                for s in &self.base.inputs {
                    need("base.inputs", &s.path);
                }
            }
            _ => errs.push("base.tokenizer and base.checkpoint must be given together".into()),
        }
        if let Some(p) = &self.adapt.plan {
            need("adapt.plan", p);
        }
        for (field, p) in
            [("eval.mlm_testset", &self.eval.mlm_testset), ("eval.sentiment", &self.eval.sentiment), ("eval.ner", &self.eval.ner)]
        {
            if let Some(p) = p {
                need(field, p);
            }
        }
        errs.append(&mut missing);

        if self.corpus.target_words == 0 {
            errs.push("corpus.target_words: must be at least 1".into());
        }
        let minimum = DEFAULT_SPECIALS.len() + 256;
        if self.tokenizer.vocab_size < minimum {
            errs.push(format!("tokenizer.vocab_size: must be at least {minimum}, got {}", self.tokenizer.vocab_size));
        }
        if let Some(v) = self.base.vocab_size {
            if v < self.tokenizer.vocab_size {
                errs.push(format!(
                    "base.vocab_size: {v} is smaller than tokenizer.vocab_size {}; the domain vocabulary must fit",
                    self.tokenizer.vocab_size
                ));
            }
        }
        if self.base.checkpoint.is_none() {
            let base = TrainConfig {
                steps: self.base.steps,
                batch_size: self.base.batch_size,
                learning_rate: self.base.learning_rate,
                warmup_steps: self.base.warmup_steps,
                ..TrainConfig::desk()
            };
            if let Err(e) = base.validate() {
                errs.push(format!("base: {e}"));
            }
        }
        if let Err(e) = self.model.resolve(self.tokenizer.vocab_size).validate() {
            errs.push(format!("model: {e}"));
        }
        if self.adapt.plan.is_some() && !self.adapt.variant.custom_tokenizer() {
            errs.push(format!(
                "adapt.plan: a merge plan needs a custom-tokenizer variant, but adapt.variant is {}",
                self.adapt.variant
            ));
        }
        let noise = NoiseConfig { mu: self.adapt.mu, sigma: self.adapt.sigma, seed: 0 };
        if noise.validate().is_err() {
            errs.push(format!("adapt.sigma: must be finite and non-negative, got {}", self.adapt.sigma));
        }
        let p = &self.pretrain;
        if !(p.mask_rate > 0.0 && p.mask_rate < 1.0) {
            errs.push(format!("pretrain.mask_rate: must be in (0, 1), got {}", p.mask_rate));
        }
        if p.steps == 0 {
            errs.push("pretrain.steps: must be at least 1".into());
        }
        if p.batch_size == 0 {
            errs.push("pretrain.batch_size: must be at least 1".into());
        }
        if !(p.learning_rate > 0.0 && p.learning_rate.is_finite()) {
            errs.push(format!("pretrain.learning_rate: must be positive, got {}", p.learning_rate));
        }
        if p.warmup_steps > p.steps {
            errs.push(format!("pretrain.warmup_steps: {} exceeds pretrain.steps {}", p.warmup_steps, p.steps));
        }
        if p.log_every == 0 {
            errs.push("pretrain.log_every: must be at least 1".into());
        }
        let e = &self.eval;
        if e.topn.is_empty() || e.topn.contains(&0) {
            errs.push("eval.topn: must be a non-empty list of positive integers".into());
        }
        for (field, lr) in [("eval.sentiment_learning_rate", e.sentiment_learning_rate), ("eval.ner_learning_rate", e.ner_learning_rate)] {
            if !(lr > 0.0 && lr.is_finite()) {
                errs.push(format!("{field}: must be positive, got {lr}"));
            }
        }
        for (field, v) in [
            ("eval.sentiment_steps", e.sentiment_steps),
            ("eval.sentiment_batch_size", e.sentiment_batch_size as u64),
            ("eval.ner_epochs", e.ner_epochs),
            ("eval.ner_batch_size", e.ner_batch_size as u64),
        ] {
            if v == 0 {
                errs.push(format!("{field}: must be at least 1"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(DaptError::Validation(errs))
        }
    }
}
