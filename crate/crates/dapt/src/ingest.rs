//! Reading raw text sources into normalized documents, and the corpus JSONL
//! format.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use dapt_core::corpus::{split_into_chunks, Document};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DaptError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    /// Paragraphs separated by blank lines.
    Plain,
    /// One JSON object per line with a `text` string and an optional
    /// `source_tag`.
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSource {
    pub path: PathBuf,
    pub format: SourceFormat,
}

/// A skipped input record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordError {
    pub path: PathBuf,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct Ingested {
    pub documents: Vec<Document>,
    pub errors: Vec<RecordError>,
}

#[derive(Deserialize)]
struct JsonRecord {
    text: Option<serde_json::Value>,
    #[serde(default)]
    source_tag: Option<String>,
}

fn read_source(src: &RawSource) -> Result<Ingested> {
    let text = fs::read_to_string(&src.path).map_err(|e| DaptError::io(&src.path, e))?;
    let mut out = Ingested::default();
    match src.format {
        SourceFormat::Plain => {
            let mut paragraph = String::new();
            for line in text.lines().chain(std::iter::once("")) {
                if line.trim().is_empty() {
                    let doc = Document::new(&paragraph, None);
                    if doc.word_count > 0 {
                        out.documents.push(doc);
                    }
                    paragraph.clear();
                } else {
                    paragraph.push_str(line);
                    paragraph.push('\n');
                }
            }
        }
        SourceFormat::Jsonl => {
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let err = |message: String| RecordError { path: src.path.clone(), line: i + 1, message };
                match serde_json::from_str::<JsonRecord>(line) {
                    Ok(JsonRecord { text: Some(serde_json::Value::String(t)), source_tag }) => {
                        let doc = Document::new(&t, source_tag);
                        if doc.word_count > 0 {
                            out.documents.push(doc);
                        }
                    }
                    Ok(JsonRecord { text: Some(_), .. }) => out.errors.push(err("\"text\" is not a string".into())),
                    Ok(JsonRecord { text: None, .. }) => out.errors.push(err("missing \"text\" field".into())),
                    Err(e) => out.errors.push(err(e.to_string())),
                }
            }
        }
    }
    Ok(out)
}

/// Reads every source, one document per paragraph (plain) or line (JSONL).
///
/// Files are read concurrently; the result keeps source order. An
/// unreadable file fails the whole call, a malformed JSONL line is recorded
/// and skipped. Inputs that normalize to empty text produce no document.
pub fn ingest_documents(sources: &[RawSource]) -> Result<Ingested> {
    let parts: Vec<Ingested> = sources.par_iter().map(read_source).collect::<Result<_>>()?;
    let mut all = Ingested::default();
    for p in parts {
        all.documents.extend(p.documents);
        all.errors.extend(p.errors);
    }
    Ok(all)
}

/// Splits every document into chunks of at most `target_words` words.
pub fn chunk_documents(docs: &[Document], target_words: usize) -> Vec<Document> {
    docs.par_iter().flat_map_iter(|d| split_into_chunks(d, target_words)).collect()
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| DaptError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        serde_json::to_writer(&mut w, &CorpusLine::from(d)).map_err(|e| DaptError::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| DaptError::io(path, e))?;
    }
    w.flush().map_err(|e| DaptError::io(path, e))
}

#[derive(Serialize)]
struct CorpusLine<'a> {
    text: &'a str,
    word_count: usize,
    source_tag: Option<&'a str>,
}

impl<'a> From<&'a Document> for CorpusLine<'a> {
    fn from(d: &'a Document) -> Self {
        Self { text: &d.text, word_count: d.word_count, source_tag: d.source_tag.as_deref() }
    }
}

/// Reads a corpus file written by [`write_corpus`]. Any malformed line is
/// an error.
pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let file = fs::File::open(path).map_err(|e| DaptError::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DaptError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| DaptError::record(path, i + 1, e.to_string()))?;
        docs.push(doc);
    }
    Ok(docs)
}
