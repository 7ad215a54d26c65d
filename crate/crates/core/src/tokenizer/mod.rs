//! Byte-level BPE: training, vocabulary merging and encoding.

pub mod bytes;
mod plan;
pub mod pretokenize;
mod train;
mod vocab;

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Reverse;

pub use plan::{compute_merge_plan, MergePlan};
pub use train::train_bpe;
pub use vocab::{Vocabulary, BOS, DEFAULT_SPECIALS, EOS, MASK, PAD, UNK};

use crate::{Error, Result};

/// Encoded text: ids plus the byte span of each id in the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub offsets: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub bos: u32,
    pub pad: u32,
    pub eos: u32,
    pub unk: u32,
    pub mask: u32,
}

/// An immutable byte-level BPE encoder/decoder.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    byte_ids: [u32; 256],
    ranks: BTreeMap<(u32, u32), (u32, u32)>,
    id_to_bytes: BTreeMap<u32, Vec<u8>>,
    vocab: Vocabulary,
    specials: SpecialIds,
    special_ids: BTreeSet<u32>,
    capacity: usize,
}

impl Tokenizer {
    /// Tokenizer using the vocabulary's own ids.
    pub fn new(vocab: Vocabulary) -> Result<Self> {
        let capacity = vocab.capacity();
        Self::with_capacity(vocab, capacity)
    }

    fn with_capacity(vocab: Vocabulary, capacity: usize) -> Result<Self> {
        if vocab.capacity() > capacity {
            return Err(Error::InvalidVocabulary(format!(
                "ids reach {} but capacity is {capacity}",
                vocab.capacity()
            )));
        }
        let role = |name: &str| vocab.id(name).filter(|_| vocab.is_special(name)).ok_or_else(|| Error::MissingSpecial(name.into()));
        let specials = SpecialIds { bos: role(BOS)?, pad: role(PAD)?, eos: role(EOS)?, unk: role(UNK)?, mask: role(MASK)? };
        let special_ids = vocab.specials().iter().map(|(_, id)| *id).collect();

        let mut byte_ids = [0u32; 256];
        for b in 0..=255u8 {
            let tok = String::from(bytes::byte_char(b));
            byte_ids[b as usize] = vocab
                .id(&tok)
                .ok_or_else(|| Error::InvalidVocabulary(format!("byte token {tok:?} missing")))?;
        }

        let mut ranks = BTreeMap::new();
        for (rank, (l, r)) in vocab.merges().iter().enumerate() {
            let lookup = |t: &str| {
                vocab.id(t).ok_or_else(|| Error::InvalidVocabulary(format!("merge part {t:?} not in vocabulary")))
            };
            let merged = format!("{l}{r}");
            let entry = (lookup(l)?, lookup(r)?);
            let value = (rank as u32, lookup(&merged)?);
            ranks.entry(entry).or_insert(value);
        }

        let mut id_to_bytes = BTreeMap::new();
        for (id, tok) in vocab.iter_by_id() {
            if vocab.is_special(tok) {
                continue;
            }
            let raw = bytes::token_to_bytes(tok).ok_or_else(|| Error::Convention(tok.into()))?;
            id_to_bytes.insert(id, raw);
        }

        Ok(Self { byte_ids, ranks, id_to_bytes, vocab, specials, special_ids, capacity })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Size of the id space the model must cover.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn specials(&self) -> SpecialIds {
        self.specials
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.special_ids.contains(&id)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.vocab.id(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.token(id)
    }

    /// Assigned ids that are not special tokens, ascending.
    pub fn regular_ids(&self) -> Vec<u32> {
        self.id_to_bytes.keys().copied().collect()
    }

    /// Encodes with begin/end markers.
    pub fn encode(&self, text: &str) -> TokenSequence {
        self.encode_bytes(text.as_bytes())
    }

    pub fn encode_bytes(&self, input: &[u8]) -> TokenSequence {
        let mut ids = Vec::with_capacity(input.len() / 3 + 2);
        let mut offsets = Vec::with_capacity(input.len() / 3 + 2);
        ids.push(self.specials.bos);
        offsets.push((0, 0));
        self.encode_into(input, &mut ids, &mut offsets);
        ids.push(self.specials.eos);
        offsets.push((input.len(), input.len()));
        TokenSequence { ids, offsets }
    }

    /// Ids for `text` without begin/end markers.
    pub fn encode_fragment(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        let mut offsets = Vec::new();
        self.encode_into(text.as_bytes(), &mut ids, &mut offsets);
        ids
    }

    fn encode_into(&self, input: &[u8], ids: &mut Vec<u32>, offsets: &mut Vec<(usize, usize)>) {
        for piece in pretokenize::pieces(input) {
            let base = piece.start;
            for (id, s, e) in self.bpe_piece(&input[piece]) {
                ids.push(id);
                offsets.push((base + s, base + e));
            }
        }
    }

    /// Applies merges to one piece. Each round takes the lowest-ranked pair
    /// present and merges its occurrences left to right; pairs formed during
    /// a round only become candidates in the next one.
    fn bpe_piece(&self, piece: &[u8]) -> Vec<(u32, usize, usize)> {
        let n = piece.len();
        let mut id: Vec<u32> = piece.iter().map(|&b| self.byte_ids[b as usize]).collect();
        let mut end: Vec<usize> = (1..=n).collect();
        let mut next: Vec<usize> = (1..=n).collect();
        let mut prev: Vec<Option<usize>> = (0..n).map(|i| i.checked_sub(1)).collect();
        let mut alive = alloc::vec![true; n];

        let candidate = |id: &[u32], i: usize, j: usize| {
            self.ranks.get(&(id[i], id[j])).map(|&(rank, _)| Reverse((rank, i, id[i], id[j])))
        };
        let mut heap: BinaryHeap<_> = (1..n).filter_map(|j| candidate(&id, j - 1, j)).collect();
        let mut pending = Vec::new();
        while let Some(&Reverse((round, ..))) = heap.peek() {
            while let Some(&Reverse((rank, i, left, right))) = heap.peek() {
                if rank != round {
                    break;
                }
                heap.pop();
                let j = next[i];
                if !alive[i] || id[i] != left || j >= n || id[j] != right {
                    continue;
                }
                id[i] = self.ranks[&(left, right)].1;
                end[i] = end[j];
                alive[j] = false;
                next[i] = next[j];
                if next[i] < n {
                    prev[next[i]] = Some(i);
                }
                pending.extend(prev[i].and_then(|p| candidate(&id, p, i)));
                if next[i] < n {
                    pending.extend(candidate(&id, i, next[i]));
                }
            }
            heap.extend(pending.drain(..));
        }
        (0..n).filter(|&i| alive[i]).map(|i| (id[i], i, end[i])).collect()
    }

    /// Inverse of encoding. Special tokens decode to nothing.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            if self.special_ids.contains(&id) {
                continue;
            }
            let bytes = self.id_to_bytes.get(&id).ok_or(Error::UnknownId(id))?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    /// [`Self::decode`] with invalid UTF-8 replaced.
    pub fn decode_lossy(&self, ids: &[u32]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode(ids)?).into_owned())
    }
}

/// Tokenizer that segments with the domain merges and emits the plan's ids.
pub fn build_merged_tokenizer(domain: &Vocabulary, plan: &MergePlan) -> Result<Tokenizer> {
    let reassigned = domain.reassigned(&plan.id_assignment)?;
    Tokenizer::with_capacity(reassigned, plan.pretrained_capacity)
}

#[cfg(test)]
mod tests;
