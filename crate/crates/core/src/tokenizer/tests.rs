use super::*;
use alloc::string::ToString;
use bytes::byte_char;
use proptest::prelude::*;

/// Slow reference encoder on token strings: repeatedly find the lowest-rank
/// merge among adjacent symbols by scanning the merge list, then apply it to
/// every occurrence left to right.
fn naive_encode(vocab: &Vocabulary, text: &[u8]) -> Vec<u32> {
    let mut out = Vec::new();
    for piece in pretokenize::pieces(text) {
        let mut symbols: Vec<String> = text[piece].iter().map(|&b| byte_char(b).to_string()).collect();
        loop {
            let best = (1..symbols.len())
                .filter_map(|k| {
                    vocab.merges().iter().position(|(l, r)| *l == symbols[k - 1] && *r == symbols[k])
                })
                .min();
            let Some(rank) = best else { break };
            let (l, r) = &vocab.merges()[rank];
            let mut merged = Vec::new();
            let mut k = 0;
            while k < symbols.len() {
                if k + 1 < symbols.len() && symbols[k] == *l && symbols[k + 1] == *r {
                    merged.push(alloc::format!("{l}{r}"));
                    k += 2;
                } else {
                    merged.push(symbols[k].clone());
                    k += 1;
                }
            }
            symbols = merged;
        }
        out.extend(symbols.iter().map(|s| vocab.id(s).unwrap()));
    }
    out
}

fn byte_vocab_with(extra_merges: &[(&str, &str)]) -> Vocabulary {
    let mut map = BTreeMap::new();
    for (i, s) in DEFAULT_SPECIALS.iter().enumerate() {
        map.insert(s.to_string(), i as u32);
    }
    for b in 0..=255u8 {
        map.insert(byte_char(b).to_string(), 5 + b as u32);
    }
    let mut merges = Vec::new();
    for (l, r) in extra_merges {
        map.insert(alloc::format!("{l}{r}"), map.len() as u32);
        merges.push((l.to_string(), r.to_string()));
    }
    Vocabulary::new(map, merges, &DEFAULT_SPECIALS).unwrap()
}

const CYBER: &str = "The attacker used phishing emails to deliver ransomware. The firewall blocked \
    the malware beacon, but the exploit bypassed the firewall rule. Analysts found the \
    vulnerability in the firewall firmware and patched it. Obfuscated payloads evade the \
    firewall. Kaspersky flagged the mysql breach and the crack of the firewall. ";

const GENERAL: &str = "The farmer walked to the market in the morning. Children played in the park \
    while their parents talked about the weather. A small dog chased the ball across the \
    green field, and the baker sold fresh bread to the neighbours. ";

fn domain_and_pretrained() -> (Vocabulary, Vocabulary) {
    let cyber = CYBER.repeat(20);
    let general = GENERAL.repeat(20);
    let pre = train_bpe([general.as_str()], 5 + 256 + 90, &DEFAULT_SPECIALS).unwrap();
    let dom = train_bpe([cyber.as_str()], 5 + 256 + 90, &DEFAULT_SPECIALS).unwrap();
    (pre, dom)
}

#[test]
fn empty_text_is_only_markers() {
    let tok = Tokenizer::new(byte_vocab_with(&[])).unwrap();
    let seq = tok.encode("");
    assert_eq!(seq.ids, [0, 2]);
    assert_eq!(seq.offsets, [(0, 0), (0, 0)]);
}

#[test]
fn round_trip_sentence() {
    let (_, dom) = domain_and_pretrained();
    let tok = Tokenizer::new(dom).unwrap();
    let seq = tok.encode("Virus causes DoS.");
    assert_eq!(tok.decode(&seq.ids).unwrap(), b"Virus causes DoS.");
    for w in seq.offsets.windows(2) {
        assert!(w[0].1 <= w[1].0 && w[0].0 <= w[0].1);
    }
}

#[test]
fn merged_tokenizer_preserves_mutual_ids() {
    // pretrained: bytes + "Ġa" (261) + "Ġc" (262); domain: bytes + "Ġc" + "Ġd".
    let pre = byte_vocab_with(&[("Ġ", "a"), ("Ġ", "c")]);
    let dom = byte_vocab_with(&[("Ġ", "c"), ("Ġ", "d")]);
    let plan = compute_merge_plan(&pre, &dom).unwrap();
    assert_eq!(plan.distinct, ["Ġd"]);
    assert_eq!(plan.id_assignment["Ġd"], 261);
    let merged = build_merged_tokenizer(&dom, &plan).unwrap();
    let pretrained = Tokenizer::new(pre).unwrap();
    assert_eq!(merged.encode("b c").ids, [0, 5 + b'b' as u32, 262, 2]);
    assert_eq!(merged.encode("b c").ids, pretrained.encode("b c").ids);
    assert_eq!(merged.encode(" d").ids, [0, 261, 2]);
    assert_eq!(merged.decode(&[261]).unwrap(), b" d");
    assert_eq!(merged.capacity(), 263);
}

#[test]
fn domain_word_gets_one_free_id() {
    let (pre, dom) = domain_and_pretrained();
    let plan = compute_merge_plan(&pre, &dom).unwrap();
    plan.validate(&pre, &dom).unwrap();
    let merged = build_merged_tokenizer(&dom, &plan).unwrap();
    let pretrained = Tokenizer::new(pre).unwrap();

    let ids = merged.encode_fragment(" firewall");
    assert_eq!(ids.len(), 1);
    assert!(plan.distinct.iter().any(|t| t == "Ġfirewall"));
    assert_eq!(ids[0], plan.id_assignment["Ġfirewall"]);
    assert!(pretrained.encode_fragment(" firewall").len() > 1);

    // text built from mutual whole tokens encodes identically under both
    let the = merged.encode_fragment(" the");
    assert_eq!(the.len(), 1);
    assert_eq!(the, pretrained.encode_fragment(" the"));
}

#[test]
fn merged_tokenizer_requires_full_assignment() {
    let (pre, dom) = domain_and_pretrained();
    let mut plan = compute_merge_plan(&pre, &dom).unwrap();
    plan.id_assignment.remove("Ġfirewall");
    assert_eq!(
        build_merged_tokenizer(&dom, &plan).unwrap_err(),
        Error::MissingAssignment("Ġfirewall".into())
    );
}

#[test]
fn decode_rejects_unknown_ids() {
    let tok = Tokenizer::new(byte_vocab_with(&[])).unwrap();
    assert_eq!(tok.decode(&[5, 9999]), Err(Error::UnknownId(9999)));
}

#[test]
fn specials_decode_to_nothing() {
    let tok = Tokenizer::new(byte_vocab_with(&[])).unwrap();
    let s = tok.specials();
    assert_eq!(tok.decode(&[s.bos, s.mask, s.pad, s.eos]).unwrap(), b"");
    assert!(tok.is_special(s.mask));
    assert_eq!(tok.regular_ids().len(), 256);
}

#[test]
fn matches_reference_on_fuzz_corpus() {
    use rand::{Rng, SeedableRng};
    let (_, dom) = domain_and_pretrained();
    let tok = Tokenizer::new(dom.clone()).unwrap();
    let words: Vec<&str> = CYBER.split_whitespace().chain(GENERAL.split_whitespace()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.random_range(0..20);
        let mut s = String::new();
        for _ in 0..n {
            let w = words[rng.random_range(0..words.len())];
            let sep = [" ", "  ", "\n", "", "-"][rng.random_range(0..5)];
            s.push_str(sep);
            s.push_str(w);
        }
        assert_eq!(tok.encode_fragment(&s), naive_encode(&dom, s.as_bytes()), "{s:?}");
    }
}

#[test]
fn duplicate_string_merges_follow_rank_rounds() {
    // "abc" is produced twice; ("abc","d") ranks between the two producers.
    let v = byte_vocab_with(&[("b", "c"), ("a", "bc")]);
    let mut map = v.token_to_id().clone();
    let mut merges: Vec<(String, String)> = v.merges().to_vec();
    for (l, r) in [("abc", "d"), ("a", "b"), ("ab", "c")] {
        let t = alloc::format!("{l}{r}");
        if !map.contains_key(&t) {
            map.insert(t, map.len() as u32);
        }
        merges.push((l.into(), r.into()));
    }
    let v = Vocabulary::new(map, merges, &DEFAULT_SPECIALS).unwrap();
    let tok = Tokenizer::new(v.clone()).unwrap();
    for s in ["abcd", "abcabcd", "ababcd", "xabcdabc"] {
        assert_eq!(tok.encode_fragment(s), naive_encode(&v, s.as_bytes()), "{s}");
    }
}

proptest! {
    #[test]
    fn byte_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..128)) {
        let tok = Tokenizer::new(byte_vocab_with(&[("Ġ", "a"), ("a", "a"), ("aa", "a")])).unwrap();
        let seq = tok.encode_bytes(&bytes);
        prop_assert_eq!(tok.decode(&seq.ids).unwrap(), bytes.clone());
        let mut pos = 0;
        for &(s, e) in &seq.offsets[1..seq.offsets.len() - 1] {
            prop_assert_eq!(s, pos);
            prop_assert!(e > s);
            pos = e;
        }
        prop_assert_eq!(pos, bytes.len());
    }
}
