use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dapt::config::{ModelSection, Profile, RunConfig};
use dapt::error::{DaptError, Result};
use dapt::ingest::{RawSource, SourceFormat};
use dapt::pipeline::{self, Stage};
use dapt::{datasets, formats, ingest, synth};
use dapt_core::corpus::corpus_stats;
use dapt_core::embedding::{AdaptOptions, NoiseConfig};
use dapt_core::eval::{finetune_classifier, finetune_ner, FineTuneConfig, TrainLength};
use dapt_core::model::Checkpoint;
use dapt_core::pretrain::{assemble_variant, train_mlm, LossRecord, MaskingVocab, TrainConfig, TrainObserver, Variant};
use dapt_core::tokenizer::{build_merged_tokenizer, compute_merge_plan, train_bpe, Tokenizer, DEFAULT_SPECIALS};

/// Domain-adaptive continual pretraining of a transformer encoder.
///
/// Relative output paths are resolved against the output root.
#[derive(Parser)]
#[command(name = "dapt", version)]
struct Cli {
    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true, env = "DAPT_OUTPUT_ROOT", default_value = ".")]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and inspect corpus files.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Train, merge and apply tokenizers.
    #[command(subcommand)]
    Tok(TokCmd),
    /// Write a freshly initialized checkpoint.
    Init(InitArgs),
    /// Transplant embeddings onto a merged vocabulary.
    Adapt(AdaptArgs),
    /// Continue MLM pretraining of a checkpoint.
    Pretrain(PretrainArgs),
    /// Masked-word hit rate and downstream fine-tuning.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Run a whole pipeline from a configuration file.
    Run(RunArgs),
    /// Write the synthetic corpus and evaluation sets.
    Synth(SynthArgs),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Read raw sources, normalize and chunk them into a corpus file.
    Ingest {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "plain")]
        format: SourceFormat,
        #[arg(long, default_value_t = dapt_core::corpus::DEFAULT_TARGET_WORDS)]
        target_words: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Word and document counts of a corpus file.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum TokCmd {
    /// Train a byte-level BPE vocabulary on a corpus file.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition a domain vocabulary against a pretrained one.
    Plan {
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the merged tokenizer to this directory.
        #[arg(long)]
        merged_out: Option<PathBuf>,
    },
    /// Print the ids of a text.
    Encode {
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        text: String,
    },
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "desk")]
    profile: ProfileArg,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    intermediate: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Give the MLM head its own output projection.
    #[arg(long)]
    untie: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ProfileArg {
    Desk,
    FullScale,
}

#[derive(Args)]
struct InitArgs {
    /// Tokenizer whose id space the model covers.
    #[arg(long)]
    tokenizer: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mu: f64,
    #[arg(long, default_value_t = 0.01)]
    sigma: f64,
    /// Seed of the embedding noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the Xavier rows; defaults to `seed + 1`.
    #[arg(long)]
    xavier_seed: Option<u64>,
}

impl NoiseArgs {
    fn options(&self, apply_noise: bool) -> AdaptOptions {
        AdaptOptions {
            noise: NoiseConfig { mu: self.mu, sigma: self.sigma, seed: self.seed },
            apply_noise,
            xavier_seed: self.xavier_seed.unwrap_or(self.seed.wrapping_add(1)),
        }
    }
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    pretrained: PathBuf,
    #[arg(long)]
    plan: Option<PathBuf>,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Copy mutual rows without perturbing them.
    #[arg(long)]
    no_noise: bool,
    /// Ablation wiring; overrides `--no-noise`.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Tokenizer matching the checkpoint's id space after any `--variant`
    /// wiring.
    #[arg(long)]
    tokenizer: PathBuf,
    #[arg(long, default_value_t = 500)]
    steps: u64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    warmup: u64,
    #[arg(long, default_value_t = 0.15)]
    mask_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    log_every: u64,
    /// Save a checkpoint every this many steps (0 = off).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
    /// Build the starting point from `--ckpt` with this wiring first.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Merge plan for the custom-tokenizer variants.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mu: f64,
    #[arg(long, default_value_t = 0.01)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Top-N masked word prediction hit rate.
    Mlm {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        testset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,10")]
        topn: Vec<usize>,
        /// JSON report; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write `category,n,hit_count,total,rate` rows here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Fine-tune a five-class sentiment classifier and score it.
    Sentiment {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1500)]
        steps: u64,
        #[arg(long, default_value_t = 1e-5)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a token tagger and score it with `O` excluded.
    Ner {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 3)]
        epochs: u64,
        #[arg(long, default_value_t = 2e-5)]
        lr: f64,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration value, e.g. `--set pretrain.steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Stop after this stage.
    #[arg(long, value_enum, default_value = "eval")]
    until: Stage,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 160_000)]
    domain_words: usize,
    #[arg(long, default_value_t = 60_000)]
    general_words: usize,
    #[arg(long, default_value_t = 400)]
    mlm_records: usize,
    #[arg(long, default_value_t = 400)]
    sentiment_examples: usize,
    #[arg(long, default_value_t = 300)]
    ner_sentences: usize,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

struct Ctx {
    root: PathBuf,
}

impl Ctx {
    fn out(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.root.join(p) }
    }
}

fn load_tokenizer(dir: &Path) -> Result<Tokenizer> {
    Ok(Tokenizer::new(formats::load_vocabulary(dir)?)?)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable value"));
}

fn write_or_print<T: serde::Serialize>(ctx: &Ctx, out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => formats::save_json(&ctx.out(p), value),
        None => {
            print_json(value);
            Ok(())
        }
    }
}

struct StderrLog;

impl TrainObserver for StderrLog {
    fn on_loss(&mut self, r: &LossRecord) {
        eprintln!("step {:>7}  loss {:.5}  lr {:.3e}", r.step, r.loss, r.lr);
    }
}

fn corpus(ctx: &Ctx, cmd: CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::Ingest { inputs, format, target_words, out } => {
            if target_words == 0 {
                return Err(DaptError::validation("--target-words: must be at least 1"));
            }
            let sources: Vec<RawSource> = inputs.into_iter().map(|path| RawSource { path, format }).collect();
            let ingested = ingest::ingest_documents(&sources)?;
            for e in &ingested.errors {
                eprintln!("{}:{}: {}", e.path.display(), e.line, e.message);
            }
            let docs = ingest::chunk_documents(&ingested.documents, target_words);
            let out = ctx.out(&out);
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| DaptError::io(parent, e))?;
            }
            ingest::write_corpus(&out, &docs)?;
            eprintln!("{} documents, {} record errors", docs.len(), ingested.errors.len());
        }
        CorpusCmd::Stats { input } => print_json(&corpus_stats(&ingest::read_corpus(&input)?)),
    }
    Ok(())
}

fn tok(ctx: &Ctx, cmd: TokCmd) -> Result<()> {
    match cmd {
        TokCmd::Train { corpus, vocab_size, out } => {
            let docs = ingest::read_corpus(&corpus)?;
            let vocab = train_bpe(docs.iter().map(|d| d.text.as_str()), vocab_size, &DEFAULT_SPECIALS)?;
            formats::save_vocabulary(&ctx.out(&out), &vocab)?;
        }
        TokCmd::Plan { pretrained, domain, out, merged_out } => {
            let pretrained = formats::load_vocabulary(&pretrained)?;
            let domain = formats::load_vocabulary(&domain)?;
            let plan = compute_merge_plan(&pretrained, &domain)?;
            formats::save_merge_plan(&ctx.out(&out), &plan)?;
            if let Some(dir) = merged_out {
                formats::save_vocabulary(&ctx.out(&dir), build_merged_tokenizer(&domain, &plan)?.vocabulary())?;
            }
            eprintln!("{} mutual, {} distinct", plan.mutual.len(), plan.distinct.len());
        }
        TokCmd::Encode { tokenizer, text } => {
            let ids = load_tokenizer(&tokenizer)?.encode(&text).ids;
            println!("{}", ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" "));
        }
    }
    Ok(())
}

fn init(ctx: &Ctx, a: InitArgs) -> Result<()> {
    let tok = load_tokenizer(&a.tokenizer)?;
    let m = a.model;
    let section = ModelSection {
        profile: match m.profile {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::FullScale => Profile::FullScale,
        },
        num_layers: m.layers,
        num_heads: m.heads,
        hidden_dim: m.hidden,
        intermediate_dim: m.intermediate,
        max_seq_len: m.max_seq_len,
        dropout_rate: m.dropout,
        tie_weights: m.untie.then_some(false),
    };
    let mut ckpt = Checkpoint::init(section.resolve(tok.capacity()), a.seed)?;
    ckpt.meta.tokenizer = Some(pipeline::tokenizer_digest(&a.tokenizer)?);
    formats::save_checkpoint(&ctx.out(&a.out), &ckpt)
}

fn adapt(ctx: &Ctx, a: AdaptArgs) -> Result<()> {
    let variant = a.variant.unwrap_or(if a.no_noise { Variant::Raw } else { Variant::Modified });
    let plan = a.plan.as_deref().map(formats::load_merge_plan).transpose()?;
    if variant.custom_tokenizer() && plan.is_none() {
        return Err(DaptError::validation(format!("--plan: required for variant {variant}")));
    }
    if !variant.custom_tokenizer() && plan.is_some() {
        return Err(DaptError::validation(format!("--plan: variant {variant} keeps the pretrained tokenizer")));
    }
    let pretrained = formats::load_checkpoint(&a.pretrained)?;
    let mut ckpt = assemble_variant(variant, &pretrained, plan.as_ref(), &a.noise.options(variant.apply_noise()))?;
    if variant.custom_tokenizer() {
        // The merged tokenizer is recorded once pretraining pairs them.
        ckpt.meta.tokenizer = None;
    }
    formats::save_checkpoint(&ctx.out(&a.out), &ckpt)
}

fn pretrain(ctx: &Ctx, a: PretrainArgs) -> Result<()> {
    let tok = load_tokenizer(&a.tokenizer)?;
    let mut ckpt = formats::load_checkpoint(&a.ckpt)?;
    if let Some(variant) = a.variant {
        let plan = a.plan.as_deref().map(formats::load_merge_plan).transpose()?;
        if variant.custom_tokenizer() && plan.is_none() {
            return Err(DaptError::validation(format!("--plan: required for variant {variant}")));
        }
        if !variant.custom_tokenizer() && plan.is_some() {
            return Err(DaptError::validation(format!("--plan: variant {variant} keeps the pretrained tokenizer")));
        }
        let noise = NoiseArgs { mu: a.mu, sigma: a.sigma, seed: a.noise_seed, xavier_seed: None };
        ckpt = assemble_variant(variant, &ckpt, plan.as_ref(), &noise.options(variant.apply_noise()))?;
        if variant.custom_tokenizer() {
            ckpt.meta.tokenizer = None;
        }
    } else if a.plan.is_some() {
        return Err(DaptError::validation("--plan: only used together with --variant"));
    }
    if tok.capacity() > ckpt.config.vocab_capacity {
        return Err(DaptError::validation(format!(
            "--tokenizer: ids reach {} but the checkpoint has {} embedding rows",
            tok.capacity(),
            ckpt.config.vocab_capacity
        )));
    }
    let digest = pipeline::tokenizer_digest(&a.tokenizer)?;
    if ckpt.meta.tokenizer.as_ref().is_some_and(|d| *d != digest) {
        return Err(DaptError::validation("--tokenizer: not the tokenizer this checkpoint was built with"));
    }
    ckpt.meta.tokenizer = Some(digest);
    let docs = ingest::read_corpus(&a.corpus)?;
    let seqs = pipeline::encode_corpus(&tok, &docs, ckpt.config.max_seq_len);
    let cfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch,
        learning_rate: a.lr,
        warmup_steps: a.warmup,
        seed: a.seed,
        mask_rate: a.mask_rate,
        log_every: a.log_every,
        checkpoint_every: a.checkpoint_every,
        ..TrainConfig::desk()
    };
    let out = ctx.out(&a.out);
    struct Saver<'a> {
        dir: &'a Path,
        error: Option<DaptError>,
    }
    impl TrainObserver for Saver<'_> {
        fn on_loss(&mut self, r: &LossRecord) {
            StderrLog.on_loss(r);
        }
        fn on_checkpoint(&mut self, step: u64, ckpt: &Checkpoint) {
            if self.error.is_none() {
                self.error = formats::save_checkpoint(&self.dir.join(format!("step-{step:06}.ckpt")), ckpt).err();
            }
        }
    }
    let mut saver = Saver { dir: &out, error: None };
    let report = train_mlm(&mut ckpt, &seqs, &MaskingVocab::from_tokenizer(&tok), tok.specials().pad, &cfg, &mut saver)?;
    if let Some(e) = saver.error {
        return Err(e);
    }
    formats::save_checkpoint(&out.join("final.ckpt"), &ckpt)?;
    formats::save_loss_csv(&out.join("loss.csv"), &report.history)?;
    if report.skipped_steps > 0 {
        eprintln!("{} steps had nothing to mask and were skipped", report.skipped_steps);
    }
    Ok(())
}

fn eval(ctx: &Ctx, cmd: EvalCmd) -> Result<()> {
    match cmd {
        EvalCmd::Mlm { ckpt, tokenizer, testset, topn, out, csv } => {
            let tok = load_tokenizer(&tokenizer)?;
            let ckpt = formats::load_checkpoint(&ckpt)?;
            let records = datasets::load_mlm_testset(&testset)?;
            let report = pipeline::parallel_hit_rate(&ckpt, &tok, &records, &topn)?;
            if let Some(csv) = csv {
                let path = ctx.out(&csv);
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent).map_err(|e| DaptError::io(parent, e))?;
                }
                std::fs::write(&path, pipeline::hit_rate_csv(&report)).map_err(|e| DaptError::io(&path, e))?;
            }
            write_or_print(ctx, out.as_deref(), &report)
        }
        EvalCmd::Sentiment { ckpt, tokenizer, data, steps, lr, batch, seed, out } => {
            let tok = load_tokenizer(&tokenizer)?;
            let ckpt = formats::load_checkpoint(&ckpt)?;
            let data = datasets::load_sentiment(&data)?;
            let cfg = FineTuneConfig {
                learning_rate: lr,
                batch_size: batch,
                length: TrainLength::Steps(steps),
                seed,
                ..FineTuneConfig::sentiment()
            };
            write_or_print(ctx, out.as_deref(), &finetune_classifier(&ckpt, &tok, &data, &cfg)?.metrics)
        }
        EvalCmd::Ner { ckpt, tokenizer, data, epochs, lr, batch, seed, out } => {
            let tok = load_tokenizer(&tokenizer)?;
            let ckpt = formats::load_checkpoint(&ckpt)?;
            let data = datasets::load_ner(&data)?;
            let cfg = FineTuneConfig {
                learning_rate: lr,
                batch_size: batch,
                length: TrainLength::Epochs(epochs),
                seed,
                ..FineTuneConfig::ner()
            };
            write_or_print(ctx, out.as_deref(), &finetune_ner(&ckpt, &tok, &data, &cfg)?.metrics)
        }
    }
}

fn run(ctx: &Ctx, a: RunArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config, &a.overrides)?;
    let manifest = pipeline::run(&cfg, &ctx.root, a.until, &|m| eprintln!("{m}"))?;
    eprintln!(
        "{} artifacts in {}",
        manifest.artifacts.len(),
        pipeline::output_dir(&cfg, &ctx.root).join(pipeline::MANIFEST_FILE).display()
    );
    Ok(())
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let cfg = synth::SynthConfig {
        seed: a.seed,
        domain_words: a.domain_words,
        general_words: a.general_words,
        mlm_records: a.mlm_records,
        sentiment_examples: a.sentiment_examples,
        ner_sentences: a.ner_sentences,
    };
    for p in synth::generate(&ctx.out(&a.out), &cfg)? {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let ctx = Ctx { root: cli.output_root };
    let result = match cli.command {
        Command::Corpus(c) => corpus(&ctx, c),
        Command::Tok(c) => tok(&ctx, c),
        Command::Init(a) => init(&ctx, a),
        Command::Adapt(a) => adapt(&ctx, a),
        Command::Pretrain(a) => pretrain(&ctx, a),
        Command::Eval(c) => eval(&ctx, c),
        Command::Run(a) => run(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
