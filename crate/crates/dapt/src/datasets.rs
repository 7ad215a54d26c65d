//! Loaders for the evaluation files.
//!
//! * masked-word test set: `sentence<TAB>gold_word<TAB>category`
//! * sentiment: `phrase<TAB>label`, labels 0 to 4
//! * NER: `token<TAB>tag` per line, a blank line between sentences
//!
//! Blank lines and lines starting with `#` are skipped in the TSV files.
//! Every error names the file and line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dapt_core::eval::{Category, MlmEvalRecord, NerSentence, NerTag, SentimentExample};

use crate::error::{DaptError, Result};

fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| DaptError::io(path, e))?;
    Ok(text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r').to_string())).collect())
}

fn skip(line: &str) -> bool {
    line.trim().is_empty() || line.starts_with('#')
}

pub fn load_mlm_testset(path: &Path) -> Result<Vec<MlmEvalRecord>> {
    let mut out = Vec::new();
    for (n, line) in lines(path)? {
        if skip(&line) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [sentence, gold, category] = fields.as_slice() else {
            return Err(DaptError::record(path, n, format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        let category = Category::from_name(category.trim())
            .ok_or_else(|| DaptError::record(path, n, format!("unknown category {category:?}")))?;
        out.push(MlmEvalRecord::new(sentence, gold, category).map_err(|e| DaptError::record(path, n, e.to_string()))?);
    }
    Ok(out)
}

/// Record counts per category.
pub fn category_counts(records: &[MlmEvalRecord]) -> BTreeMap<Category, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.category).or_insert(0) += 1;
    }
    counts
}

pub fn load_sentiment(path: &Path) -> Result<Vec<SentimentExample>> {
    let mut out = Vec::new();
    for (n, line) in lines(path)? {
        if skip(&line) {
            continue;
        }
        let Some((phrase, label)) = line.rsplit_once('\t') else {
            return Err(DaptError::record(path, n, "expected phrase<TAB>label"));
        };
        let label: u32 =
            label.trim().parse().map_err(|_| DaptError::record(path, n, format!("label {label:?} is not an integer")))?;
        out.push(SentimentExample::new(phrase, label).map_err(|e| DaptError::record(path, n, e.to_string()))?);
    }
    Ok(out)
}

pub fn load_ner(path: &Path) -> Result<Vec<NerSentence>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut start = 1;
    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<NerTag>, line: usize| -> Result<()> {
        if !tokens.is_empty() {
            let s = NerSentence::new(std::mem::take(tokens), std::mem::take(tags))
                .map_err(|e| DaptError::record(path, line, e.to_string()))?;
            out.push(s);
        }
        Ok(())
    };
    for (n, line) in lines(path)? {
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags, start)?;
            start = n + 1;
            continue;
        }
        let Some((token, tag)) = line.split_once('\t') else {
            return Err(DaptError::record(path, n, "expected token<TAB>tag"));
        };
        let tag = NerTag::from_name(tag.trim())
            .ok_or_else(|| DaptError::record(path, n, format!("unknown tag {tag:?}")))?;
        if token.is_empty() || token.contains(char::is_whitespace) {
            return Err(DaptError::record(path, n, format!("invalid token {token:?}")));
        }
        tokens.push(token.to_string());
        tags.push(tag);
    }
    flush(&mut tokens, &mut tags, start)?;
    Ok(out)
}
