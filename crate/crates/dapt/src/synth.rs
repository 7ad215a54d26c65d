//! Seeded generator for the bundled synthetic data: a security-flavoured
//! domain corpus, a general-English corpus for the stand-in base model, and
//! small evaluation sets in the loader formats.
//!
//! Sentences come from fixed templates over fixed word lists, so every file
//! is a pure function of the seed and the requested sizes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dapt_core::rng::{self, derive_seed, Rng};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::formats::write_bytes;

const SUBJECTS: &[&str] = &[
    "attacker", "adversary", "operator", "actor", "intruder", "insider", "botnet", "campaign", "group", "crew",
];
const ACTIONS: &[&str] = &[
    "deploys", "exfiltrates", "encrypts", "scans", "exploits", "injects", "harvests", "disables", "installs",
    "deletes", "spoofs", "compromises", "uploads", "downloads", "executes", "obfuscates",
];
const OBJECTS: &[&str] = &[
    "ransomware", "payload", "credentials", "firewall", "backdoor", "malware", "trojan", "rootkit", "keylogger",
    "exploit", "beacon", "shellcode", "dropper", "implant", "token", "certificate", "hash", "registry", "server",
    "endpoint", "database", "botnet", "worm", "virus", "phishing", "honeypot", "vulnerability", "patch",
];
const MODIFIERS: &[&str] = &[
    "remotely", "silently", "quickly", "repeatedly", "covertly", "manually", "automatically", "again", "daily",
];
const PLACES: &[&str] = &[
    "network", "domain", "subnet", "cluster", "mailbox", "host", "gateway", "router", "cloud", "workstation",
];
const DEFENDERS: &[&str] = &["analysts", "defenders", "responders", "researchers", "administrators", "engineers"];
const DEFENSE_VERBS: &[&str] =
    &["detected", "blocked", "isolated", "analyzed", "reported", "contained", "patched", "logged", "flagged"];

const GENERAL_SUBJECTS: &[&str] = &[
    "farmer", "teacher", "child", "neighbor", "doctor", "traveler", "musician", "baker", "student", "painter",
    "gardener", "carpenter", "fisherman", "grandmother", "librarian", "shepherd", "sailor", "nurse", "poet",
    "merchant", "tailor", "mechanic", "cyclist", "photographer", "chef",
];
const GENERAL_VERBS: &[&str] = &[
    "visits", "paints", "carries", "finds", "cooks", "reads", "plants", "builds", "sells", "cleans", "watches",
    "borrows", "repairs", "describes", "remembers", "decorates", "delivers", "polishes", "sketches", "admires",
    "measures", "gathers", "wraps", "opens",
];
const GENERAL_ADJECTIVES: &[&str] = &[
    "old", "quiet", "bright", "wooden", "famous", "narrow", "colorful", "heavy", "gentle", "ancient", "crowded",
    "peaceful", "sunny", "friendly", "golden", "small",
];
const GENERAL_OBJECTS: &[&str] = &[
    "garden", "bread", "letter", "river", "market", "window", "basket", "story", "bridge", "orchard", "kitchen",
    "blanket", "violin", "lantern", "umbrella", "notebook", "fountain", "painting", "bicycle", "harvest",
    "virus", "worm", "firewall", "server", "patch", "token", "hash", "database",
];
const GENERAL_PLACES: &[&str] = &[
    "village", "city", "park", "school", "harbor", "valley", "library", "station", "museum", "cottage", "island",
    "meadow", "theater", "bakery",
];
const GENERAL_TIMES: &[&str] = &["morning", "evening", "weekend", "summer", "winter", "afternoon", "holiday", "spring"];

/// Sentiment words by label, 0 the most negative.
const SENTIMENT_WORDS: [&[&str]; 5] = [
    &["catastrophic", "disastrous", "useless", "dreadful"],
    &["weak", "flawed", "poor", "slow"],
    &["adequate", "ordinary", "average", "acceptable"],
    &["solid", "reliable", "good", "helpful"],
    &["excellent", "outstanding", "superb", "flawless"],
];
const SENTIMENT_TOPICS: &[&str] = &["patch", "update", "scanner", "firewall", "audit", "report", "tool", "response"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Approximate size of the domain corpus in words.
    pub domain_words: usize,
    pub general_words: usize,
    pub mlm_records: usize,
    pub sentiment_examples: usize,
    pub ner_sentences: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            domain_words: 160_000,
            general_words: 60_000,
            mlm_records: 400,
            sentiment_examples: 400,
            ner_sentences: 300,
        }
    }
}

pub const DOMAIN_FILE: &str = "domain.txt";
pub const GENERAL_FILE: &str = "general.txt";
pub const MLM_FILE: &str = "mlm_test.tsv";
pub const SENTIMENT_FILE: &str = "sentiment.tsv";
pub const NER_FILE: &str = "ner.conll";

fn pick<'a>(r: &mut Rng, words: &[&'a str]) -> &'a str {
    words[r.random_range(0..words.len())]
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

/// One tagged domain sentence as (word, tag) pairs.
fn tagged_sentence(r: &mut Rng) -> Vec<(String, &'static str)> {
    let mut out: Vec<(String, &'static str)> = vec![("The".into(), "O")];
    out.push((pick(r, SUBJECTS).into(), "Subject"));
    out.push((pick(r, ACTIONS).into(), "Action"));
    out.push(("the".into(), "O"));
    out.push((pick(r, OBJECTS).into(), "Object"));
    if r.random_bool(0.6) {
        out.push((pick(r, MODIFIERS).into(), "Modifier"));
    }
    if r.random_bool(0.5) {
        out.push(("on".into(), "O"));
        out.push(("the".into(), "O"));
        out.push((pick(r, PLACES).into(), "O"));
    }
    out.push((".".into(), "O"));
    out
}

fn domain_sentence(r: &mut Rng) -> String {
    match r.random_range(0..4) {
        0 | 1 => {
            let words: Vec<String> = tagged_sentence(r).into_iter().map(|(w, _)| w).collect();
            let mut s = words[..words.len() - 1].join(" ");
            s.push('.');
            s
        }
        2 => format!(
            "{} {} the {} after the {} {} the {}.",
            capitalize(pick(r, DEFENDERS)),
            pick(r, DEFENSE_VERBS),
            pick(r, OBJECTS),
            pick(r, SUBJECTS),
            pick(r, ACTIONS),
            pick(r, PLACES)
        ),
        _ => format!(
            "The {} on the {} was {} by the {} {}.",
            pick(r, OBJECTS),
            pick(r, PLACES),
            pick(r, DEFENSE_VERBS),
            pick(r, DEFENDERS),
            pick(r, MODIFIERS)
        ),
    }
}

fn general_sentence(r: &mut Rng) -> String {
    match r.random_range(0..3) {
        0 => format!(
            "The {} {} the {} in the {} every {}.",
            pick(r, GENERAL_SUBJECTS),
            pick(r, GENERAL_VERBS),
            pick(r, GENERAL_OBJECTS),
            pick(r, GENERAL_PLACES),
            pick(r, GENERAL_TIMES)
        ),
        1 => format!(
            "A {} {} {} a {} {} near the {}.",
            pick(r, GENERAL_ADJECTIVES),
            pick(r, GENERAL_SUBJECTS),
            pick(r, GENERAL_VERBS),
            pick(r, GENERAL_ADJECTIVES),
            pick(r, GENERAL_OBJECTS),
            pick(r, GENERAL_PLACES)
        ),
        _ => format!(
            "In the {} the {} {} the {} {}.",
            pick(r, GENERAL_TIMES),
            pick(r, GENERAL_SUBJECTS),
            pick(r, GENERAL_VERBS),
            pick(r, GENERAL_ADJECTIVES),
            pick(r, GENERAL_OBJECTS)
        ),
    }
}

/// Paragraphs of 4 to 12 sentences separated by blank lines, until
/// `words` words have been written.
fn corpus(r: &mut Rng, words: usize, sentence: fn(&mut Rng) -> String) -> String {
    let mut out = String::new();
    let mut written = 0;
    while written < words {
        let n = r.random_range(4..=12);
        let para: Vec<String> = (0..n).map(|_| sentence(r)).collect();
        let para = para.join(" ");
        written += para.split_whitespace().count();
        out.push_str(&para);
        out.push_str("\n\n");
    }
    out
}

fn mlm_testset(r: &mut Rng, n: usize) -> String {
    let mut out = String::from("# sentence\tgold_word\tcategory\n");
    for i in 0..n {
        let (subject, action, object, place) = (pick(r, SUBJECTS), pick(r, ACTIONS), pick(r, OBJECTS), pick(r, PLACES));
        let (sentence, gold, category) = if i % 3 == 2 {
            (format!("The {subject} <mask> the {object} on the {place}."), action, "verb")
        } else {
            (format!("The {subject} {action} the <mask> on the {place}."), object, "noun")
        };
        let _ = writeln!(out, "{sentence}\t{gold}\t{category}");
    }
    out
}

fn sentiment(r: &mut Rng, n: usize) -> String {
    let mut out = String::new();
    for i in 0..n {
        let label = i % 5;
        let phrase = format!(
            "the {} was {} for the {}",
            pick(r, SENTIMENT_TOPICS),
            pick(r, SENTIMENT_WORDS[label]),
            pick(r, PLACES)
        );
        let _ = writeln!(out, "{phrase}\t{label}");
    }
    out
}

fn ner(r: &mut Rng, n: usize) -> String {
    let mut out = String::new();
    for _ in 0..n {
        for (w, t) in tagged_sentence(r) {
            let _ = writeln!(out, "{w}\t{t}");
        }
        out.push('\n');
    }
    out
}

/// Writes the five synthetic files into `dir` and returns their paths.
pub fn generate(dir: &Path, cfg: &SynthConfig) -> Result<Vec<PathBuf>> {
    let stream = |tag: u64| rng::substream(derive_seed(cfg.seed, tag), 0);
    let files = [
        (DOMAIN_FILE, corpus(&mut stream(1), cfg.domain_words, domain_sentence)),
        (GENERAL_FILE, corpus(&mut stream(2), cfg.general_words, general_sentence)),
        (MLM_FILE, mlm_testset(&mut stream(3), cfg.mlm_records)),
        (SENTIMENT_FILE, sentiment(&mut stream(4), cfg.sentiment_examples)),
        (NER_FILE, ner(&mut stream(5), cfg.ner_sentences)),
    ];
    let mut paths = Vec::new();
    for (name, content) in files {
        let path = dir.join(name);
        write_bytes(&path, content.as_bytes())?;
        paths.push(path);
    }
    Ok(paths)
}

/// `n` distinct short domain sentences.
pub fn fixed_sentences(seed: u64, n: usize) -> Vec<String> {
    let mut r = rng::substream(derive_seed(seed, 6), 0);
    let mut out: Vec<String> = Vec::with_capacity(n);
    while out.len() < n {
        let s = domain_sentence(&mut r);
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}
