//! Text normalization, document chunking and corpus statistics.
//!
//! Words are whitespace-delimited everywhere in this module.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Default chunk size in words.
pub const DEFAULT_TARGET_WORDS: usize = 512;

/// A normalized pretraining document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub text: String,
    pub word_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tag: Option<String>,
}

impl Document {
    /// Normalizes `raw` and counts its words.
    pub fn new(raw: &str, source_tag: Option<String>) -> Self {
        let text = normalize_text(raw);
        let word_count = count_words(&text);
        Self { text, word_count, source_tag }
    }

    fn from_words(words: &[&str], source_tag: Option<String>) -> Self {
        let mut text = String::new();
        for (i, w) in words.iter().enumerate() {
            if i > 0 {
                text.push(' ');
            }
            text.push_str(w);
        }
        Self { text, word_count: words.len(), source_tag }
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }
}

pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Collapses whitespace runs (newlines included) to one space, trims both
/// ends and drops any remaining control characters. Case and punctuation are
/// kept as is.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else if c.is_control() {
            continue;
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

fn ends_sentence(word: &str) -> bool {
    matches!(word.chars().last(), Some('.' | '!' | '?'))
}

/// Splits a document into chunks of at most `target_words` words.
///
/// Sentences (ending in `.`, `!` or `?`) are packed greedily; a sentence
/// longer than the target is hard-split, and its remainder opens the next
/// chunk. `target_words` must be at least 1.
pub fn split_into_chunks(doc: &Document, target_words: usize) -> Vec<Document> {
    assert!(target_words >= 1, "target_words must be at least 1");
    if doc.word_count <= target_words {
        return alloc::vec![doc.clone()];
    }

    let words: Vec<&str> = doc.words().collect();
    let mut sentences: Vec<&[&str]> = Vec::new();
    let mut start = 0;
    for (i, w) in words.iter().enumerate() {
        if ends_sentence(w) {
            sentences.push(&words[start..=i]);
            start = i + 1;
        }
    }
    if start < words.len() {
        sentences.push(&words[start..]);
    }

    let mut chunks = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let tag = &doc.source_tag;
    for sentence in sentences {
        if current.len() + sentence.len() <= target_words {
            current.extend_from_slice(sentence);
            continue;
        }
        if !current.is_empty() {
            chunks.push(Document::from_words(&current, tag.clone()));
            current.clear();
        }
        let mut rest = sentence;
        while rest.len() > target_words {
            chunks.push(Document::from_words(&rest[..target_words], tag.clone()));
            rest = &rest[target_words..];
        }
        current.extend_from_slice(rest);
    }
    if !current.is_empty() {
        chunks.push(Document::from_words(&current, tag.clone()));
    }
    chunks
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_words: u64,
    pub unique_words: u64,
    pub document_count: u64,
}

/// Streaming accumulator behind [`corpus_stats`].
#[derive(Debug, Default)]
pub struct StatsAccumulator {
    total_words: u64,
    document_count: u64,
    vocabulary: BTreeSet<String>,
}

impl StatsAccumulator {
    pub fn add(&mut self, doc: &Document) {
        self.document_count += 1;
        for w in doc.words() {
            self.total_words += 1;
            if !self.vocabulary.contains(w) {
                self.vocabulary.insert(String::from(w));
            }
        }
    }

    pub fn finish(&self) -> CorpusStats {
        CorpusStats {
            total_words: self.total_words,
            unique_words: self.vocabulary.len() as u64,
            document_count: self.document_count,
        }
    }
}

pub fn corpus_stats<'a>(docs: impl IntoIterator<Item = &'a Document>) -> CorpusStats {
    let mut acc = StatsAccumulator::default();
    for d in docs {
        acc.add(d);
    }
    acc.finish()
}
