//! Masked word prediction hit rate, sentiment classification and NER.

mod finetune;
mod metrics;

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{Batch, Checkpoint};
use crate::tokenizer::Tokenizer;
use crate::{Error, Matrix, Result};

pub use finetune::{
    align_first_subword, encode_sentence, finetune_classifier, finetune_ner, ner_scores, predict_classes, predict_tags,
    split_holdout, AlignedSentence, ClassifierMetrics, ClassifierRun, FineTuneConfig, NerMetrics, NerRun,
    TrainLength,
};
pub use metrics::{micro_prf_excluding, ConfusionMatrix, Prf};

/// Literal that marks the hidden word in a test sentence.
pub const MASK_PLACEHOLDER: &str = "<mask>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Noun,
    Verb,
}

impl Category {
    pub const ALL: [Category; 2] = [Category::Noun, Category::Verb];

    pub fn name(self) -> &'static str {
        match self {
            Category::Noun => "noun",
            Category::Verb => "verb",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One masked-word test item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlmEvalRecord {
    pub sentence: String,
    pub gold_word: String,
    pub category: Category,
}

impl MlmEvalRecord {
    pub fn new(sentence: &str, gold_word: &str, category: Category) -> Result<Self> {
        let marks = sentence.matches(MASK_PLACEHOLDER).count();
        if marks != 1 {
            return Err(Error::InvalidRecord(alloc::format!(
                "sentence must contain exactly one {MASK_PLACEHOLDER}, found {marks}"
            )));
        }
        let gold = gold_word.trim();
        if gold.is_empty() {
            return Err(Error::InvalidRecord("gold word is empty".into()));
        }
        Ok(Self { sentence: sentence.into(), gold_word: gold.into(), category })
    }

    /// Whether the hidden word follows whitespace, in which case its single
    /// token form carries the space marker.
    fn follows_space(&self) -> bool {
        let (prefix, _) = self.sentence.split_once(MASK_PLACEHOLDER).expect("validated record");
        prefix.ends_with(char::is_whitespace)
    }

    /// `<s> prefix <mask> suffix </s>` and the position of the mask. The
    /// whitespace before the placeholder is absorbed into the mask token.
    pub fn encode(&self, tok: &Tokenizer) -> (Vec<u32>, usize) {
        let (prefix, suffix) = self.sentence.split_once(MASK_PLACEHOLDER).expect("validated record");
        let sp = tok.specials();
        let mut ids = alloc::vec![sp.bos];
        ids.extend(tok.encode_fragment(prefix.trim_end()));
        let position = ids.len();
        ids.push(sp.mask);
        ids.extend(tok.encode_fragment(suffix));
        ids.push(sp.eos);
        (ids, position)
    }

    /// The id of the gold word when it is a single token in context.
    pub fn gold_id(&self, tok: &Tokenizer) -> Option<u32> {
        let form =
            if self.follows_space() { alloc::format!(" {}", self.gold_word) } else { self.gold_word.clone() };
        match tok.encode_fragment(&form).as_slice() {
            [id] if !tok.is_special(*id) => Some(*id),
            _ => None,
        }
    }
}

/// Anything that can score the vocabulary at one position of a sequence.
pub trait MaskedLanguageModel {
    /// Logits over token ids at `position` of `ids`.
    fn masked_logits(&self, ids: &[u32], position: usize) -> Result<Vec<f64>>;
}

impl MaskedLanguageModel for Checkpoint {
    /// Sequences longer than the model's window are cropped to a window
    /// centred on `position`.
    fn masked_logits(&self, ids: &[u32], position: usize) -> Result<Vec<f64>> {
        if position >= ids.len() {
            return Err(Error::InvalidBatch(alloc::format!(
                "position {position} outside a sequence of length {}",
                ids.len()
            )));
        }
        let max = self.config.max_seq_len;
        let start = if ids.len() > max { position.saturating_sub(max / 2).min(ids.len() - max) } else { 0 };
        let window = &ids[start..ids.len().min(start + max)];
        let batch = Batch::padded(&[window.to_vec()], 0)?;
        let hidden = self.forward(&batch)?;
        let row = Matrix::from_vec(1, hidden[0].cols(), hidden[0].row(position - start).to_vec())?;
        Ok(self.mlm_logits(&[row])?.remove(0).into_vec())
    }
}

/// The `n` best candidate ids by logit, ties going to the lower id.
pub fn top_n(logits: &[f64], n: usize, is_candidate: impl Fn(u32) -> bool) -> Result<Vec<u32>> {
    if logits.iter().any(|l| l.is_nan()) {
        return Err(Error::NonFinite("logit"));
    }
    let mut ranked: Vec<u32> = (0..logits.len() as u32).filter(|&id| is_candidate(id)).collect();
    let order = |a: &u32, b: &u32| {
        logits[*b as usize].partial_cmp(&logits[*a as usize]).unwrap_or(Ordering::Equal).then(a.cmp(b))
    };
    if n < ranked.len() {
        ranked.select_nth_unstable_by(n, order);
        ranked.truncate(n);
    }
    ranked.sort_unstable_by(order);
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u32,
    pub word: String,
    pub logit: f64,
}

/// Ranked predictions for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopN {
    pub candidates: Vec<Candidate>,
    /// `None` when the gold word is not a single token.
    pub gold: Option<u32>,
}

impl TopN {
    pub fn hit(&self) -> bool {
        self.gold.is_some_and(|g| self.candidates.iter().any(|c| c.id == g))
    }
}

fn is_candidate(tok: &Tokenizer, id: u32) -> bool {
    !tok.is_special(id) && tok.token(id).is_some()
}

/// The `n` highest scoring non-special tokens at the masked position.
pub fn predict_topn<M: MaskedLanguageModel + ?Sized>(
    model: &M,
    tok: &Tokenizer,
    record: &MlmEvalRecord,
    n: usize,
) -> Result<TopN> {
    if n == 0 {
        return Err(Error::InvalidConfig("top-N depth must be at least 1".into()));
    }
    let (ids, position) = record.encode(tok);
    let logits = model.masked_logits(&ids, position)?;
    let candidates = top_n(&logits, n, |id| is_candidate(tok, id))?
        .into_iter()
        .map(|id| {
            let word = tok.decode_lossy(&[id]).map(|w| w.trim().to_string()).unwrap_or_default();
            Candidate { id, word, logit: logits[id as usize] }
        })
        .collect();
    Ok(TopN { candidates, gold: record.gold_id(tok) })
}

/// Result of scoring one record to a fixed depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// The gold word is not a single token.
    Unscorable,
    /// Zero-based rank of the gold token, if within the depth.
    Scored(Option<usize>),
}

/// Ranks the gold token among the top `depth` candidates. Unscorable
/// records skip the model.
pub fn score_record<M: MaskedLanguageModel + ?Sized>(
    model: &M,
    tok: &Tokenizer,
    record: &MlmEvalRecord,
    depth: usize,
) -> Result<Outcome> {
    let Some(gold) = record.gold_id(tok) else {
        return Ok(Outcome::Unscorable);
    };
    let (ids, position) = record.encode(tok);
    let logits = model.masked_logits(&ids, position)?;
    let top = top_n(&logits, depth, |id| is_candidate(tok, id))?;
    Ok(Outcome::Scored(top.iter().position(|&id| id == gold)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitCount {
    pub n: usize,
    pub hit_count: usize,
    pub total: usize,
    /// `hit_count / total`, 0 for an empty category.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryHits {
    pub category: Category,
    /// Scorable records.
    pub total: usize,
    pub unscorable: usize,
    pub hits: Vec<HitCount>,
}

/// Hit@N per category. Unscorable records are excluded from every
/// denominator and counted separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRateReport {
    pub ns: Vec<usize>,
    pub records: usize,
    pub unscorable: usize,
    pub categories: Vec<CategoryHits>,
}

fn normalize_ns(ns: &[usize]) -> Result<Vec<usize>> {
    let mut ns = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();
    if ns.is_empty() || ns[0] == 0 {
        return Err(Error::InvalidConfig("top-N depths must be a non-empty set of positive integers".into()));
    }
    Ok(ns)
}

impl HitRateReport {
    /// Counts outcomes scored to at least the largest N.
    pub fn tally(ns: &[usize], outcomes: impl IntoIterator<Item = (Category, Outcome)>) -> Result<Self> {
        let ns = normalize_ns(ns)?;
        let mut categories: Vec<CategoryHits> = Category::ALL
            .into_iter()
            .map(|category| CategoryHits {
                category,
                total: 0,
                unscorable: 0,
                hits: ns.iter().map(|&n| HitCount { n, hit_count: 0, total: 0, rate: 0.0 }).collect(),
            })
            .collect();
        let mut records = 0;
        for (category, outcome) in outcomes {
            records += 1;
            let c = &mut categories[category as usize];
            match outcome {
                Outcome::Unscorable => c.unscorable += 1,
                Outcome::Scored(rank) => {
                    c.total += 1;
                    for h in &mut c.hits {
                        h.hit_count += usize::from(rank.is_some_and(|r| r < h.n));
                    }
                }
            }
        }
        if records == 0 {
            return Err(Error::EmptyRecords);
        }
        for c in &mut categories {
            for h in &mut c.hits {
                h.total = c.total;
                h.rate = if c.total == 0 { 0.0 } else { h.hit_count as f64 / c.total as f64 };
            }
        }
        let unscorable = categories.iter().map(|c| c.unscorable).sum();
        Ok(Self { ns, records, unscorable, categories })
    }

    pub fn category(&self, category: Category) -> &CategoryHits {
        &self.categories[category as usize]
    }

    pub fn rate(&self, category: Category, n: usize) -> Option<f64> {
        self.category(category).hits.iter().find(|h| h.n == n).map(|h| h.rate)
    }
}

/// Scores every record to the largest N and tallies hit@N.
pub fn hit_rate<M: MaskedLanguageModel + ?Sized>(
    model: &M,
    tok: &Tokenizer,
    records: &[MlmEvalRecord],
    ns: &[usize],
) -> Result<HitRateReport> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let depth = *normalize_ns(ns)?.last().expect("non-empty");
    let outcomes = records
        .iter()
        .map(|r| Ok((r.category, score_record(model, tok, r, depth)?)))
        .collect::<Result<Vec<_>>>()?;
    HitRateReport::tally(ns, outcomes)
}

/// The closed NER tag set. `O` marks words outside any entity and is
/// excluded from scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NerTag {
    Action,
    Subject,
    Object,
    Modifier,
    O,
}

impl NerTag {
    pub const ALL: [NerTag; 5] = [NerTag::Action, NerTag::Subject, NerTag::Object, NerTag::Modifier, NerTag::O];

    pub fn index(self) -> u32 {
        self as u32
    }

    pub fn from_index(i: u32) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            NerTag::Action => "Action",
            NerTag::Subject => "Subject",
            NerTag::Object => "Object",
            NerTag::Modifier => "Modifier",
            NerTag::O => "O",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<NerTag>,
}

impl NerSentence {
    pub fn new(tokens: Vec<String>, tags: Vec<NerTag>) -> Result<Self> {
        if tokens.len() != tags.len() {
            return Err(Error::InvalidRecord(alloc::format!("{} words but {} tags", tokens.len(), tags.len())));
        }
        if tokens.is_empty() {
            return Err(Error::InvalidRecord("sentence has no words".into()));
        }
        if tokens.iter().any(|t| t.is_empty() || t.contains(char::is_whitespace)) {
            return Err(Error::InvalidRecord("words must be non-empty and contain no whitespace".into()));
        }
        Ok(Self { tokens, tags })
    }
}

pub const SENTIMENT_CLASSES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentExample {
    pub text: String,
    pub label: u32,
}

impl SentimentExample {
    pub fn new(text: &str, label: u32) -> Result<Self> {
        if label as usize >= SENTIMENT_CLASSES {
            return Err(Error::LabelOutOfRange { label, classes: SENTIMENT_CLASSES });
        }
        Ok(Self { text: text.into(), label })
    }
}
