use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::bytes::{byte_char, char_byte};
use crate::{Error, Result};

pub const BOS: &str = "<s>";
pub const PAD: &str = "<pad>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const MASK: &str = "<mask>";

/// Special tokens in the order a freshly trained vocabulary assigns them ids.
pub const DEFAULT_SPECIALS: [&str; 5] = [BOS, PAD, EOS, UNK, MASK];

/// An ordered token → id mapping with its BPE merge rules.
///
/// Token strings use the byte-level alphabet of [`super::bytes`]. Ids are
/// unique but need not be contiguous; [`Vocabulary::capacity`] is one past
/// the largest id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: BTreeMap<String, u32>,
    id_to_token: BTreeMap<u32, String>,
    merges: Vec<(String, String)>,
    specials: Vec<(String, u32)>,
}

impl Vocabulary {
    /// Builds and validates a vocabulary.
    ///
    /// `specials` names the special token strings; each must be present in
    /// `token_to_id` exactly once. Merges must be prefix-consistent: both
    /// parts of every merge are single byte tokens or outputs of earlier
    /// merges.
    pub fn new(
        token_to_id: BTreeMap<String, u32>,
        merges: Vec<(String, String)>,
        specials: &[&str],
    ) -> Result<Self> {
        let mut id_to_token = BTreeMap::new();
        for (tok, &id) in &token_to_id {
            if let Some(prev) = id_to_token.insert(id, tok.clone()) {
                return Err(Error::InvalidVocabulary(format!(
                    "id {id} assigned to both {prev:?} and {tok:?}"
                )));
            }
        }

        let mut special_list = Vec::with_capacity(specials.len());
        let mut seen = BTreeSet::new();
        for &s in specials {
            if !seen.insert(s) {
                return Err(Error::InvalidVocabulary(format!("special token {s:?} listed twice")));
            }
            let id = *token_to_id.get(s).ok_or_else(|| Error::MissingSpecial(s.to_string()))?;
            special_list.push((s.to_string(), id));
        }

        let mut available: BTreeSet<String> = (0..=255u8).map(|b| byte_char(b).to_string()).collect();
        for (rank, (left, right)) in merges.iter().enumerate() {
            for part in [left, right] {
                if !available.contains(part) {
                    return Err(Error::InvalidVocabulary(format!(
                        "merge {rank} ({left:?}, {right:?}) uses {part:?} before it is produced"
                    )));
                }
            }
            let mut merged = left.clone();
            merged.push_str(right);
            available.insert(merged);
        }

        Ok(Self { token_to_id, id_to_token, merges, specials: special_list })
    }

    pub fn len(&self) -> usize {
        self.token_to_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_to_id.is_empty()
    }

    /// One past the largest id.
    pub fn capacity(&self) -> usize {
        self.id_to_token.keys().next_back().map_or(0, |&id| id as usize + 1)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(&id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn specials(&self) -> &[(String, u32)] {
        &self.specials
    }

    pub fn is_special(&self, token: &str) -> bool {
        self.specials.iter().any(|(s, _)| s == token)
    }

    /// Tokens in ascending id order, i.e. in vocabulary rank order.
    pub fn iter_by_id(&self) -> impl Iterator<Item = (u32, &str)> {
        self.id_to_token.iter().map(|(&id, t)| (id, t.as_str()))
    }

    pub fn token_to_id(&self) -> &BTreeMap<String, u32> {
        &self.token_to_id
    }

    /// Copy of this vocabulary with each token's id replaced by `assign`.
    pub fn reassigned(&self, assign: &BTreeMap<String, u32>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for tok in self.token_to_id.keys() {
            let id = *assign.get(tok).ok_or_else(|| Error::MissingAssignment(tok.clone()))?;
            map.insert(tok.clone(), id);
        }
        let specials: Vec<&str> = self.specials.iter().map(|(s, _)| s.as_str()).collect();
        Self::new(map, self.merges.clone(), &specials)
    }

    /// Checks that every non-special token is written in the byte-level
    /// alphabet (so a leading space appears as the space marker).
    pub fn check_byte_level(&self) -> Result<()> {
        for tok in self.token_to_id.keys() {
            if self.is_special(tok) {
                continue;
            }
            if tok.is_empty() || tok.chars().any(|c| char_byte(c).is_none()) {
                return Err(Error::Convention(tok.clone()));
            }
        }
        Ok(())
    }
}
