use std::path::Path;
use std::process::{Command, Output};

fn dapt(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dapt"))
        .args(args)
        .env("DAPT_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_every_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: &[(&[&str], &[&str])] = &[
        (&["--help"], &["corpus", "tok", "init", "adapt", "pretrain", "eval", "run", "synth", "--output-root", "DAPT_OUTPUT_ROOT"]),
        (&["corpus", "ingest", "--help"], &["--in", "--format", "--target-words", "--out"]),
        (&["corpus", "stats", "--help"], &["--in"]),
        (&["tok", "train", "--help"], &["--corpus", "--vocab-size", "--out"]),
        (&["tok", "plan", "--help"], &["--pretrained", "--domain", "--out", "--merged-out"]),
        (&["tok", "encode", "--help"], &["--tokenizer", "--text"]),
        (&["init", "--help"], &["--tokenizer", "--profile", "--layers", "--heads", "--hidden", "--max-seq-len", "--untie", "--seed"]),
        (&["adapt", "--help"], &["--pretrained", "--plan", "--mu", "--sigma", "--seed", "--xavier-seed", "--no-noise", "--variant", "--out"]),
        (
            &["pretrain", "--help"],
            &["--ckpt", "--corpus", "--tokenizer", "--steps", "--batch", "--lr", "--warmup", "--mask-rate", "--seed", "--variant", "--plan", "--checkpoint-every", "--out"],
        ),
        (&["eval", "mlm", "--help"], &["--ckpt", "--tokenizer", "--testset", "--topn", "--out", "--csv"]),
        (&["eval", "sentiment", "--help"], &["--ckpt", "--data", "--steps", "--lr", "--batch", "--seed"]),
        (&["eval", "ner", "--help"], &["--ckpt", "--data", "--epochs", "--lr", "--batch", "--seed"]),
        (&["run", "--help"], &["--config", "--set", "--until"]),
        (&["synth", "--help"], &["--out", "--seed", "--domain-words"]),
    ];
    for (args, flags) in cases {
        let out = dapt(args, tmp.path());
        assert!(out.status.success(), "{args:?}");
        let text = stdout(&out);
        for flag in *flags {
            assert!(text.contains(flag), "`dapt {}` does not mention {flag}:\n{text}", args.join(" "));
        }
    }
}

#[test]
fn exit_codes_distinguish_validation_from_runtime_failures() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(dapt(&["no-such-command"], tmp.path()).status.code(), Some(1));
    assert_eq!(dapt(&["corpus", "stats", "--in", "/nonexistent.jsonl"], tmp.path()).status.code(), Some(2));
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "seed = 1\noutput_dir = \"o\"\n[corpus]\ninputs = []\n").unwrap();
    let out = dapt(&["run", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("corpus.inputs"), "{}", stderr(&out));
}

#[test]
fn stage_commands_chain_together() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let ok = |args: &[&str]| {
        let out = dapt(args, root);
        assert!(out.status.success(), "dapt {}: {}", args.join(" "), stderr(&out));
        out
    };
    ok(&["synth", "--out", "data", "--domain-words", "4000", "--general-words", "4000", "--mlm-records", "20", "--sentiment-examples", "20", "--ner-sentences", "12"]);
    ok(&["corpus", "ingest", "--in", &p("data/domain.txt"), "--target-words", "64", "--out", "domain.jsonl"]);
    ok(&["corpus", "ingest", "--in", &p("data/general.txt"), "--out", "general.jsonl"]);
    let stats: serde_json::Value = serde_json::from_str(&stdout(&ok(&["corpus", "stats", "--in", &p("domain.jsonl")]))).unwrap();
    assert!(stats["total_words"].as_u64().unwrap() >= 4000);

    ok(&["tok", "train", "--corpus", &p("general.jsonl"), "--vocab-size", "380", "--out", "base_tok"]);
    ok(&["tok", "train", "--corpus", &p("domain.jsonl"), "--vocab-size", "320", "--out", "domain_tok"]);
    ok(&["tok", "plan", "--pretrained", &p("base_tok"), "--domain", &p("domain_tok"), "--out", "plan.json", "--merged-out", "merged"]);
    let ids = stdout(&ok(&["tok", "encode", "--tokenizer", &p("merged"), "--text", "The worm"]));
    assert!(ids.trim().starts_with("0 ") && ids.trim().ends_with(" 2"), "{ids}");

    ok(&["init", "--tokenizer", &p("base_tok"), "--layers", "1", "--hidden", "16", "--heads", "2", "--intermediate", "32", "--max-seq-len", "24", "--out", "base.ckpt"]);
    ok(&["adapt", "--pretrained", &p("base.ckpt"), "--plan", &p("plan.json"), "--seed", "5", "--out", "adapted.ckpt"]);
    ok(&[
        "pretrain", "--ckpt", &p("adapted.ckpt"), "--corpus", &p("domain.jsonl"), "--tokenizer", &p("merged"),
        "--steps", "3", "--batch", "2", "--warmup", "1", "--log-every", "1", "--out", "run",
    ]);
    let loss = std::fs::read_to_string(root.join("run/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4);

    // Building the wiring inside `pretrain` gives the same start as `adapt`.
    ok(&[
        "pretrain", "--ckpt", &p("base.ckpt"), "--corpus", &p("domain.jsonl"), "--tokenizer", &p("merged"),
        "--variant", "modified", "--plan", &p("plan.json"), "--noise-seed", "5",
        "--steps", "3", "--batch", "2", "--warmup", "1", "--out", "run2",
    ]);
    assert_eq!(std::fs::read(root.join("run/final.ckpt")).unwrap(), std::fs::read(root.join("run2/final.ckpt")).unwrap());

    ok(&["eval", "mlm", "--ckpt", &p("run/final.ckpt"), "--tokenizer", &p("merged"), "--testset", &p("data/mlm_test.tsv"), "--topn", "1,3", "--out", "mlm.json", "--csv", "mlm.csv"]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(root.join("mlm.json")).unwrap()).unwrap();
    assert_eq!(report["records"], 20);
    let m = stdout(&ok(&["eval", "sentiment", "--ckpt", &p("run/final.ckpt"), "--tokenizer", &p("merged"), "--data", &p("data/sentiment.tsv"), "--steps", "2", "--batch", "4"]));
    assert!(m.contains("weighted_f1"));
    let m = stdout(&ok(&["eval", "ner", "--ckpt", &p("run/final.ckpt"), "--tokenizer", &p("merged"), "--data", &p("data/ner.conll"), "--epochs", "1"]));
    assert!(m.contains("\"f1\""));

    // A pretrained-tokenizer variant must not be handed a plan.
    let out = dapt(&["adapt", "--pretrained", &p("base.ckpt"), "--plan", &p("plan.json"), "--variant", "pretrained-tok", "--out", "x.ckpt"], root);
    assert_eq!(out.status.code(), Some(1));
    // A tokenizer that does not match the checkpoint is refused.
    let out = dapt(&["pretrain", "--ckpt", &p("base.ckpt"), "--corpus", &p("domain.jsonl"), "--tokenizer", &p("domain_tok"), "--out", "bad"], root);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}
