//! Byte-level BPE training.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::bytes::byte_char;
use super::pretokenize::pieces;
use super::vocab::Vocabulary;
use crate::{Error, Result};

type Pair = (u32, u32);

#[derive(Debug, PartialEq, Eq)]
struct Candidate {
    count: i64,
    left: String,
    right: String,
    pair: Pair,
}

impl Ord for Candidate {
    // Max-heap order: higher count first, then the lexicographically
    // smaller (left, right) pair.
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn merge_word(word: &[u32], pair: Pair, new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && word[i] == pair.0 && word[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(word[i]);
            i += 1;
        }
    }
    out
}

/// Trains a byte-level BPE vocabulary of exactly `vocab_size` entries.
///
/// Ids are laid out as the special tokens (in the given order), the 256 byte
/// tokens, then learned tokens in the order they were created. Each step
/// merges the most frequent adjacent pair; equal counts go to the
/// lexicographically smaller `(left, right)` pair of token strings.
pub fn train_bpe<'a>(
    corpus: impl IntoIterator<Item = &'a str>,
    vocab_size: usize,
    specials: &[&str],
) -> Result<Vocabulary> {
    let minimum = specials.len() + 256;
    if vocab_size < minimum {
        return Err(Error::VocabTooSmall { requested: vocab_size, minimum });
    }

    let mut piece_counts: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for text in corpus {
        let bytes = text.as_bytes();
        for r in pieces(bytes) {
            *piece_counts.entry(bytes[r].to_vec()).or_default() += 1;
        }
    }
    if piece_counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut strings: Vec<String> = (0..=255u8).map(|b| byte_char(b).to_string()).collect();
    let mut string_ids: BTreeMap<String, u32> =
        strings.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();

    let mut words: Vec<Vec<u32>> = Vec::with_capacity(piece_counts.len());
    let mut freqs: Vec<i64> = Vec::with_capacity(piece_counts.len());
    for (bytes, count) in piece_counts {
        words.push(bytes.iter().map(|&b| b as u32).collect());
        freqs.push(count as i64);
    }

    let mut pair_counts: BTreeMap<Pair, i64> = BTreeMap::new();
    let mut pair_words: BTreeMap<Pair, BTreeSet<usize>> = BTreeMap::new();
    for (w, word) in words.iter().enumerate() {
        for win in word.windows(2) {
            let p = (win[0], win[1]);
            *pair_counts.entry(p).or_default() += freqs[w];
            pair_words.entry(p).or_default().insert(w);
        }
    }

    let candidate = |p: Pair, count: i64, strings: &[String]| Candidate {
        count,
        left: strings[p.0 as usize].clone(),
        right: strings[p.1 as usize].clone(),
        pair: p,
    };
    let mut heap: BinaryHeap<Candidate> =
        pair_counts.iter().map(|(&p, &c)| candidate(p, c, &strings)).collect();

    let budget = vocab_size - minimum;
    let mut merges: Vec<(String, String)> = Vec::new();
    let mut learned = 0usize;
    while learned < budget {
        let Some(best) = heap.pop() else {
            return Err(Error::CorpusTooSmall { requested: vocab_size, achievable: minimum + learned });
        };
        let current = pair_counts.get(&best.pair).copied().unwrap_or(0);
        if current != best.count || current <= 0 {
            continue;
        }
        let pair = best.pair;
        let mut merged = best.left.clone();
        merged.push_str(&best.right);
        let new_id = match string_ids.get(&merged) {
            Some(&id) => id,
            None => {
                let id = strings.len() as u32;
                strings.push(merged.clone());
                string_ids.insert(merged, id);
                learned += 1;
                id
            }
        };
        merges.push((best.left, best.right));

        let affected = pair_words.remove(&pair).unwrap_or_default();
        let mut touched = BTreeSet::new();
        for w in affected {
            let f = freqs[w];
            let word = &words[w];
            if !word.windows(2).any(|win| (win[0], win[1]) == pair) {
                continue;
            }
            for win in word.windows(2) {
                let p = (win[0], win[1]);
                if let Some(c) = pair_counts.get_mut(&p) {
                    *c -= f;
                    if *c == 0 {
                        pair_counts.remove(&p);
                    }
                }
                touched.insert(p);
            }
            let next = merge_word(word, pair, new_id);
            for win in next.windows(2) {
                let p = (win[0], win[1]);
                *pair_counts.entry(p).or_default() += f;
                pair_words.entry(p).or_default().insert(w);
                touched.insert(p);
            }
            words[w] = next;
        }
        for p in touched {
            if let Some(&c) = pair_counts.get(&p) {
                if c > 0 {
                    heap.push(candidate(p, c, &strings));
                }
            }
        }
    }

    let mut token_to_id = BTreeMap::new();
    for (i, s) in specials.iter().enumerate() {
        token_to_id.insert(s.to_string(), i as u32);
    }
    let offset = specials.len() as u32;
    for (sym, s) in strings.into_iter().enumerate() {
        if token_to_id.insert(s.clone(), offset + sym as u32).is_some() {
            return Err(Error::InvalidVocabulary(alloc::format!(
                "special token {s:?} collides with a learned token"
            )));
        }
    }
    Vocabulary::new(token_to_id, merges, specials)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::vocab::DEFAULT_SPECIALS;
    use proptest::prelude::*;

    /// Slow reference trainer: recount every pair from scratch each step.
    fn naive_merges(texts: &[&str], n_new_tokens: usize) -> Vec<(String, String)> {
        let mut words: Vec<(Vec<String>, i64)> = Vec::new();
        let mut counts: BTreeMap<Vec<u8>, i64> = BTreeMap::new();
        for t in texts {
            for r in pieces(t.as_bytes()) {
                *counts.entry(t.as_bytes()[r].to_vec()).or_default() += 1;
            }
        }
        for (bytes, c) in counts {
            words.push((bytes.iter().map(|&b| byte_char(b).to_string()).collect(), c));
        }
        let mut known: BTreeSet<String> = (0..=255u8).map(|b| byte_char(b).to_string()).collect();
        let mut merges = Vec::new();
        let mut created = 0;
        while created < n_new_tokens {
            let mut pc: BTreeMap<(String, String), i64> = BTreeMap::new();
            for (w, c) in &words {
                for win in w.windows(2) {
                    *pc.entry((win[0].clone(), win[1].clone())).or_default() += c;
                }
            }
            // BTreeMap iterates pairs in lexicographic order, so the first
            // maximum is the tie-break winner.
            let Some(best) = pc.iter().fold(None::<(&(String, String), i64)>, |acc, (p, &c)| match acc {
                Some((_, bc)) if bc >= c => acc,
                _ => Some((p, c)),
            }) else {
                break;
            };
            let (l, r) = best.0.clone();
            let merged = alloc::format!("{l}{r}");
            for (w, _) in words.iter_mut() {
                let mut out = Vec::new();
                let mut i = 0;
                while i < w.len() {
                    if i + 1 < w.len() && w[i] == l && w[i + 1] == r {
                        out.push(merged.clone());
                        i += 2;
                    } else {
                        out.push(w[i].clone());
                        i += 1;
                    }
                }
                *w = out;
            }
            if known.insert(merged) {
                created += 1;
            }
            merges.push((l, r));
        }
        merges
    }

    #[test]
    fn hand_run_on_repeated_word() {
        // pieces: "aaab" x1, "Ġaaab" x2. Pair counts: (a,a)=6, (a,b)=3, (Ġ,a)=2.
        // After a+a: (aa,a)=3, (a,b)=3, (Ġ,aa)=2; the tie goes to ("a","b").
        let specials = DEFAULT_SPECIALS;
        let v = train_bpe(["aaab aaab aaab"], specials.len() + 256 + 2, &specials).unwrap();
        assert_eq!(v.merges(), &[("a".into(), "a".into()), ("a".into(), "b".into())]);
        assert!(v.contains("aa") && v.contains("ab"));
        assert_eq!(v.len(), specials.len() + 258);
        assert_eq!(v.merges(), naive_merges(&["aaab aaab aaab"], 2).as_slice());
    }

    #[test]
    fn empty_budget_gives_byte_vocabulary() {
        let v = train_bpe(["hello"], 5 + 256, &DEFAULT_SPECIALS).unwrap();
        assert_eq!(v.len(), 261);
        assert!(v.merges().is_empty());
        assert_eq!(v.id("<s>"), Some(0));
        assert_eq!(v.id(&byte_char(0).to_string()), Some(5));
    }

    #[test]
    fn frequent_domain_word_becomes_one_token() {
        let text = "The firewall blocked it. A firewall logs. Every firewall rule matters. ".repeat(40);
        let v = train_bpe([text.as_str()], 5 + 256 + 36, &DEFAULT_SPECIALS).unwrap();
        assert!(v.contains("Ġfirewall"));
    }

    #[test]
    fn errors() {
        assert_eq!(
            train_bpe(["ab"], 100, &DEFAULT_SPECIALS),
            Err(Error::VocabTooSmall { requested: 100, minimum: 261 })
        );
        assert_eq!(train_bpe(Vec::<&str>::new(), 261, &DEFAULT_SPECIALS), Err(Error::EmptyCorpus));
        assert_eq!(
            train_bpe(["abc"], 261 + 10, &DEFAULT_SPECIALS),
            Err(Error::CorpusTooSmall { requested: 271, achievable: 263 })
        );
    }

    #[test]
    fn training_is_deterministic() {
        let text = "Ransomware encrypts files; phishing steals credentials. ".repeat(20);
        let a = train_bpe([text.as_str()], 300, &DEFAULT_SPECIALS).unwrap();
        let b = train_bpe([text.as_str()], 300, &DEFAULT_SPECIALS).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn matches_naive_trainer(texts in proptest::collection::vec("[abc ]{0,30}", 1..6), extra in 0usize..12) {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let naive = naive_merges(&refs, extra);
            let created = {
                let mut known: BTreeSet<String> = (0..=255u8).map(|b| byte_char(b).to_string()).collect();
                naive.iter().filter(|(l, r)| known.insert(alloc::format!("{l}{r}"))).count()
            };
            match train_bpe(refs.iter().copied(), 256 + extra, &[]) {
                Ok(v) => prop_assert_eq!(v.merges(), naive.as_slice()),
                Err(Error::CorpusTooSmall { achievable, .. }) => {
                    prop_assert!(created < extra);
                    prop_assert_eq!(achievable, 256 + created);
                }
                Err(Error::EmptyCorpus) => prop_assert!(refs.iter().all(|t| t.is_empty())),
                Err(e) => prop_assert!(false, "unexpected error {e:?}"),
            }
        }
    }
}
