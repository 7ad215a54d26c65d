//! End-to-end runs driven by a [`RunConfig`].
//!
//! Stages run in order: corpus, base, tokenizer, adapt, pretrain, eval.
//! Every artifact is written under the run's output directory and listed in
//! `manifest.json` with its SHA-256 digest. The manifest is rewritten after
//! each stage, so a failed run leaves a partial manifest naming the stage
//! that failed.
//!
//! Artifacts never contain absolute paths or timestamps; a checkpoint
//! refers to its tokenizer by digest. Rerunning a configuration therefore
//! reproduces every digest.

use std::path::{Path, PathBuf};

use dapt_core::corpus::{corpus_stats, Document};
use dapt_core::embedding::{AdaptOptions, NoiseConfig};
use dapt_core::eval::{
    finetune_classifier, finetune_ner, score_record, FineTuneConfig, HitRateReport, MlmEvalRecord, TrainLength,
};
use dapt_core::model::Checkpoint;
use dapt_core::pretrain::{assemble_variant, encode_windows, train_mlm, MaskingVocab, TrainConfig, TrainObserver};
use dapt_core::rng::derive_seed;
use dapt_core::tokenizer::{build_merged_tokenizer, compute_merge_plan, train_bpe, MergePlan, Tokenizer, DEFAULT_SPECIALS};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::datasets;
use crate::error::{DaptError, Result};
use crate::formats;
use crate::ingest;

pub const MANIFEST_FILE: &str = "manifest.json";

const BASE_INIT_TAG: u64 = 0x4241_5345;
const BASE_TRAIN_TAG: u64 = 0x4254_524e;
const NOISE_TAG: u64 = 0x4e4f_4953;
const XAVIER_TAG: u64 = 0x5841_5649;
const PRETRAIN_TAG: u64 = 0x5054_524e;
const SENTIMENT_TAG: u64 = 0x5345_4e54;
const NER_TAG: u64 = 0x4e45_5254;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Corpus,
    Base,
    Tokenizer,
    Adapt,
    Pretrain,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Corpus, Stage::Base, Stage::Tokenizer, Stage::Adapt, Stage::Pretrain, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::Base => "base",
            Stage::Tokenizer => "tokenizer",
            Stage::Adapt => "adapt",
            Stage::Pretrain => "pretrain",
            Stage::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub stage: Stage,
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: RunStatus,
    pub seed: u64,
    pub variant: String,
    pub completed_stages: Vec<Stage>,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    /// Path → digest pairs, for comparing runs.
    pub fn digests(&self) -> Vec<(String, String)> {
        self.artifacts.iter().map(|a| (a.path.clone(), a.sha256.clone())).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| DaptError::io(path, e))?))
}

/// `sha256:` digest over a tokenizer directory's vocabulary then merges.
pub fn tokenizer_digest(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for name in [formats::VOCAB_FILE, formats::MERGES_FILE] {
        let p = dir.join(name);
        h.update(std::fs::read(&p).map_err(|e| DaptError::io(&p, e))?);
    }
    Ok(format!("sha256:{}", h.finalize().iter().map(|b| format!("{b:02x}")).collect::<String>()))
}

/// Resolves `output_dir` against `output_root` unless it is absolute.
pub fn output_dir(cfg: &RunConfig, output_root: &Path) -> PathBuf {
    if cfg.output_dir.is_absolute() { cfg.output_dir.clone() } else { output_root.join(&cfg.output_dir) }
}

/// Tokenizes documents into training windows, in document order.
pub fn encode_corpus(tok: &Tokenizer, docs: &[Document], max_len: usize) -> Vec<Vec<u32>> {
    let per_doc: Vec<Vec<Vec<u32>>> = docs.par_iter().map(|d| encode_windows(tok, &d.text, max_len)).collect();
    per_doc.into_iter().flatten().collect()
}

/// Hit@N with records scored concurrently.
pub fn parallel_hit_rate(ckpt: &Checkpoint, tok: &Tokenizer, records: &[MlmEvalRecord], ns: &[usize]) -> Result<HitRateReport> {
    let depth = ns.iter().copied().max().unwrap_or(0);
    let outcomes = records
        .par_iter()
        .map(|r| Ok((r.category, score_record(ckpt, tok, r, depth)?)))
        .collect::<std::result::Result<Vec<_>, dapt_core::Error>>()?;
    Ok(HitRateReport::tally(ns, outcomes)?)
}

/// `category,n,hit_count,total,rate` rows.
pub fn hit_rate_csv(report: &HitRateReport) -> String {
    let mut out = String::from("category,n,hit_count,total,rate\n");
    for c in &report.categories {
        for h in &c.hits {
            out.push_str(&format!("{},{},{},{},{}\n", c.category, h.n, h.hit_count, h.total, h.rate));
        }
    }
    out
}

/// Writes periodic checkpoints as `step-NNNNNN.ckpt`; the first failure is
/// kept and reported after training.
struct CheckpointSaver<'a> {
    dir: &'a Path,
    saved: Vec<PathBuf>,
    error: Option<DaptError>,
}

impl TrainObserver for CheckpointSaver<'_> {
    fn on_checkpoint(&mut self, step: u64, ckpt: &Checkpoint) {
        if self.error.is_some() {
            return;
        }
        let path = self.dir.join(format!("step-{step:06}.ckpt"));
        match formats::save_checkpoint(&path, ckpt) {
            Ok(()) => self.saved.push(path),
            Err(e) => self.error = Some(e),
        }
    }
}

struct Run<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    manifest: Manifest,
    progress: &'a dyn Fn(&str),
    docs: Vec<Document>,
    base_tok: Option<Tokenizer>,
    base_ckpt: Option<Checkpoint>,
    plan: Option<MergePlan>,
    tok: Option<(Tokenizer, String)>,
    ckpt: Option<Checkpoint>,
}

impl Run<'_> {
    fn record(&mut self, stage: Stage, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| DaptError::io(path, e))?;
        let rel = path.strip_prefix(&self.dir).unwrap_or(path);
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        self.manifest.artifacts.push(Artifact { stage, path: rel, sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    fn record_dir(&mut self, stage: Stage, dir: &Path) -> Result<()> {
        for name in [formats::VOCAB_FILE, formats::MERGES_FILE] {
            self.record(stage, &dir.join(name))?;
        }
        Ok(())
    }

    fn write_manifest(&self) -> Result<()> {
        formats::save_json(&self.dir.join(MANIFEST_FILE), &self.manifest)
    }

    fn stage(&mut self, stage: Stage) -> Result<()> {
        (self.progress)(&format!("stage {}", stage.name()));
        match stage {
            Stage::Corpus => self.corpus(),
            Stage::Base => self.base(),
            Stage::Tokenizer => self.tokenizer(),
            Stage::Adapt => self.adapt(),
            Stage::Pretrain => self.pretrain(),
            Stage::Eval => self.eval(),
        }
    }

    fn corpus(&mut self) -> Result<()> {
        let ingested = ingest::ingest_documents(&self.cfg.corpus.inputs)?;
        if !ingested.errors.is_empty() {
            (self.progress)(&format!("skipped {} malformed records", ingested.errors.len()));
        }
        self.docs = ingest::chunk_documents(&ingested.documents, self.cfg.corpus.target_words);
        if self.docs.is_empty() {
            return Err(dapt_core::Error::EmptyCorpus.into());
        }
        let corpus = self.dir.join("corpus/corpus.jsonl");
        std::fs::create_dir_all(self.dir.join("corpus")).map_err(|e| DaptError::io(&self.dir, e))?;
        ingest::write_corpus(&corpus, &self.docs)?;
        let stats = self.dir.join("corpus/stats.json");
        #[derive(Serialize)]
        struct Stats {
            #[serde(flatten)]
            stats: dapt_core::corpus::CorpusStats,
            skipped_records: usize,
        }
        formats::save_json(&stats, &Stats { stats: corpus_stats(&self.docs), skipped_records: ingested.errors.len() })?;
        self.record(Stage::Corpus, &corpus)?;
        self.record(Stage::Corpus, &stats)
    }

    fn base(&mut self) -> Result<()> {
        let b = &self.cfg.base;
        if let (Some(tok_dir), Some(ckpt)) = (&b.tokenizer, &b.checkpoint) {
            self.base_tok = Some(Tokenizer::new(formats::load_vocabulary(tok_dir)?)?);
            self.base_ckpt = Some(formats::load_checkpoint(ckpt)?);
            return Ok(());
        }
        let general = ingest::chunk_documents(&ingest::ingest_documents(&b.inputs)?.documents, self.cfg.corpus.target_words);
        let vocab_size = b.vocab_size.unwrap_or(self.cfg.tokenizer.vocab_size);
        let vocab = train_bpe(general.iter().map(|d| d.text.as_str()), vocab_size, &DEFAULT_SPECIALS)?;
        let tok_dir = self.dir.join("base/tokenizer");
        formats::save_vocabulary(&tok_dir, &vocab)?;
        let tok = Tokenizer::new(vocab)?;
        let config = self.cfg.model.resolve(tok.capacity());
        let mut ckpt = Checkpoint::init(config, derive_seed(self.cfg.seed, BASE_INIT_TAG))?;
        ckpt.meta.tokenizer = Some(tokenizer_digest(&tok_dir)?);
        let seqs = encode_corpus(&tok, &general, ckpt.config.max_seq_len);
        let train = TrainConfig {
            steps: b.steps,
            batch_size: b.batch_size,
            learning_rate: b.learning_rate,
            warmup_steps: b.warmup_steps,
            seed: derive_seed(self.cfg.seed, BASE_TRAIN_TAG),
            ..TrainConfig::desk()
        };
        let report =
            train_mlm(&mut ckpt, &seqs, &MaskingVocab::from_tokenizer(&tok), tok.specials().pad, &train, &mut ())?;
        // The stand-in base model starts every domain run from step 0.
        ckpt.meta.steps = 0;
        ckpt.meta.train_seed = None;
        let ckpt_path = self.dir.join("base/base.ckpt");
        formats::save_checkpoint(&ckpt_path, &ckpt)?;
        let loss = self.dir.join("base/loss.csv");
        formats::save_loss_csv(&loss, &report.history)?;
        self.record_dir(Stage::Base, &tok_dir)?;
        self.record(Stage::Base, &ckpt_path)?;
        self.record(Stage::Base, &loss)?;
        self.base_tok = Some(tok);
        self.base_ckpt = Some(ckpt);
        Ok(())
    }

    fn tokenizer(&mut self) -> Result<()> {
        let base = self.base_tok.as_ref().expect("base stage ran");
        if !self.cfg.adapt.variant.custom_tokenizer() {
            let digest = match &self.cfg.base.tokenizer {
                Some(dir) => tokenizer_digest(dir)?,
                None => tokenizer_digest(&self.dir.join("base/tokenizer"))?,
            };
            self.tok = Some((base.clone(), digest));
            return Ok(());
        }
        let domain = train_bpe(self.docs.iter().map(|d| d.text.as_str()), self.cfg.tokenizer.vocab_size, &DEFAULT_SPECIALS)?;
        let domain_dir = self.dir.join("tokenizer/domain");
        formats::save_vocabulary(&domain_dir, &domain)?;
        let plan = match &self.cfg.adapt.plan {
            Some(p) => {
                let plan = formats::load_merge_plan(p)?;
                plan.validate(base.vocabulary(), &domain)?;
                plan
            }
            None => compute_merge_plan(base.vocabulary(), &domain)?,
        };
        let plan_path = self.dir.join("tokenizer/merge_plan.json");
        formats::save_merge_plan(&plan_path, &plan)?;
        let merged = build_merged_tokenizer(&domain, &plan)?;
        let merged_dir = self.dir.join("tokenizer/merged");
        formats::save_vocabulary(&merged_dir, merged.vocabulary())?;
        (self.progress)(&format!("{} mutual, {} distinct tokens", plan.mutual.len(), plan.distinct.len()));
        self.record_dir(Stage::Tokenizer, &domain_dir)?;
        self.record(Stage::Tokenizer, &plan_path)?;
        self.record_dir(Stage::Tokenizer, &merged_dir)?;
        self.tok = Some((merged, tokenizer_digest(&merged_dir)?));
        self.plan = Some(plan);
        Ok(())
    }

    fn adapt(&mut self) -> Result<()> {
        let a = &self.cfg.adapt;
        let opts = AdaptOptions {
            noise: NoiseConfig {
                mu: a.mu,
                sigma: a.sigma,
                seed: a.noise_seed.unwrap_or_else(|| derive_seed(self.cfg.seed, NOISE_TAG)),
            },
            apply_noise: a.variant.apply_noise(),
            xavier_seed: a.xavier_seed.unwrap_or_else(|| derive_seed(self.cfg.seed, XAVIER_TAG)),
        };
        let base = self.base_ckpt.as_ref().expect("base stage ran");
        let mut ckpt = assemble_variant(a.variant, base, self.plan.as_ref(), &opts)?;
        ckpt.meta.tokenizer = Some(self.tok.as_ref().expect("tokenizer stage ran").1.clone());
        let path = self.dir.join("adapt/adapted.ckpt");
        formats::save_checkpoint(&path, &ckpt)?;
        self.record(Stage::Adapt, &path)?;
        self.ckpt = Some(ckpt);
        Ok(())
    }

    fn pretrain(&mut self) -> Result<()> {
        let (tok, _) = self.tok.as_ref().expect("tokenizer stage ran");
        let mut ckpt = self.ckpt.take().expect("adapt stage ran");
        let seqs = encode_corpus(tok, &self.docs, ckpt.config.max_seq_len);
        let train = self.cfg.pretrain.train_config(derive_seed(self.cfg.seed, PRETRAIN_TAG));
        let dir = self.dir.join("pretrain");
        let mut saver = CheckpointSaver { dir: &dir, saved: Vec::new(), error: None };
        let report = train_mlm(&mut ckpt, &seqs, &MaskingVocab::from_tokenizer(tok), tok.specials().pad, &train, &mut saver)?;
        if let Some(e) = saver.error {
            return Err(e);
        }
        if let Some(last) = report.history.last() {
            (self.progress)(&format!("pretrained {} steps, final loss {:.4}", last.step, last.loss));
        }
        let final_path = dir.join("final.ckpt");
        formats::save_checkpoint(&final_path, &ckpt)?;
        let loss = dir.join("loss.csv");
        formats::save_loss_csv(&loss, &report.history)?;
        for p in &saver.saved {
            self.record(Stage::Pretrain, p)?;
        }
        self.record(Stage::Pretrain, &final_path)?;
        self.record(Stage::Pretrain, &loss)?;
        self.ckpt = Some(ckpt);
        Ok(())
    }

    fn eval(&mut self) -> Result<()> {
        let e = &self.cfg.eval;
        let (tok, _) = self.tok.as_ref().expect("tokenizer stage ran");
        let ckpt = self.ckpt.as_ref().expect("pretrain stage ran");
        let dir = self.dir.join("eval");
        let mut written = Vec::new();
        if let Some(path) = &e.mlm_testset {
            let records = datasets::load_mlm_testset(path)?;
            let report = parallel_hit_rate(ckpt, tok, &records, &e.topn)?;
            let json = dir.join("mlm.json");
            formats::save_json(&json, &report)?;
            let csv = dir.join("mlm.csv");
            formats::write_bytes(&csv, hit_rate_csv(&report).as_bytes())?;
            written.extend([json, csv]);
        }
        if let Some(path) = &e.sentiment {
            let data = datasets::load_sentiment(path)?;
            let cfg = FineTuneConfig {
                learning_rate: e.sentiment_learning_rate,
                batch_size: e.sentiment_batch_size,
                length: TrainLength::Steps(e.sentiment_steps),
                seed: derive_seed(self.cfg.seed, SENTIMENT_TAG),
                ..FineTuneConfig::sentiment()
            };
            let run = finetune_classifier(ckpt, tok, &data, &cfg)?;
            let json = dir.join("sentiment.json");
            formats::save_json(&json, &run.metrics)?;
            written.push(json);
        }
        if let Some(path) = &e.ner {
            let data = datasets::load_ner(path)?;
            let cfg = FineTuneConfig {
                learning_rate: e.ner_learning_rate,
                batch_size: e.ner_batch_size,
                length: TrainLength::Epochs(e.ner_epochs),
                seed: derive_seed(self.cfg.seed, NER_TAG),
                ..FineTuneConfig::ner()
            };
            let run = finetune_ner(ckpt, tok, &data, &cfg)?;
            let json = dir.join("ner.json");
            formats::save_json(&json, &run.metrics)?;
            written.push(json);
        }
        for p in written {
            self.record(Stage::Eval, &p)?;
        }
        Ok(())
    }
}

/// Validates `cfg` and runs every stage up to and including `last`.
///
/// A validation problem is returned as an error before anything is
/// written. A stage failure is recorded in the manifest (status `failed`)
/// and then returned.
pub fn run(cfg: &RunConfig, output_root: &Path, last: Stage, progress: &dyn Fn(&str)) -> Result<Manifest> {
    cfg.validate()?;
    let dir = output_dir(cfg, output_root);
    std::fs::create_dir_all(&dir).map_err(|e| DaptError::io(&dir, e))?;
    let mut run = Run {
        cfg,
        dir,
        manifest: Manifest {
            status: RunStatus::Running,
            seed: cfg.seed,
            variant: cfg.adapt.variant.name().to_string(),
            completed_stages: Vec::new(),
            failed_stage: None,
            error: None,
            artifacts: Vec::new(),
        },
        progress,
        docs: Vec::new(),
        base_tok: None,
        base_ckpt: None,
        plan: None,
        tok: None,
        ckpt: None,
    };
    for stage in Stage::ALL.into_iter().filter(|s| *s <= last) {
        if let Err(e) = run.stage(stage) {
            run.manifest.status = RunStatus::Failed;
            run.manifest.failed_stage = Some(stage);
            run.manifest.error = Some(e.to_string());
            run.write_manifest()?;
            return Err(e);
        }
        run.manifest.completed_stages.push(stage);
        run.write_manifest()?;
    }
    run.manifest.status = RunStatus::Complete;
    run.write_manifest()?;
    Ok(run.manifest)
}

/// Re-reads every artifact and checks it against the manifest.
pub fn verify_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    for a in &manifest.artifacts {
        let path = dir.join(&a.path);
        let digest = file_digest(&path)?;
        if digest != a.sha256 {
            return Err(DaptError::format(&path, format!("digest {digest} does not match manifest {}", a.sha256)));
        }
    }
    Ok(())
}
