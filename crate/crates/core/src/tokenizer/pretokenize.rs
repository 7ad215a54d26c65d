//! Splits raw bytes into the pieces BPE merges are confined to.
//!
//! Mirrors the GPT-2 split pattern on bytes: English contractions, an
//! optional leading space followed by a run of letters, digits or other
//! symbols, and whitespace runs where the last space before a word is left
//! to that word. Bytes ≥ 0x80 count as letters so UTF-8 words stay whole.
//! The pieces always partition the input.

use alloc::vec::Vec;
use core::ops::Range;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Letter,
    Digit,
    Space,
    Other,
}

fn class(b: u8) -> Class {
    match b {
        b'a'..=b'z' | b'A'..=b'Z' | 0x80..=0xFF => Class::Letter,
        b'0'..=b'9' => Class::Digit,
        b' ' | b'\t' | b'\n' | b'\r' | 0x0B | 0x0C => Class::Space,
        _ => Class::Other,
    }
}

fn contraction_len(rest: &[u8]) -> Option<usize> {
    if rest.first() != Some(&b'\'') {
        return None;
    }
    if let Some(b"re" | b"ve" | b"ll") = rest.get(1..3) { return Some(3) }
    match rest.get(1) {
        Some(b's' | b't' | b'm' | b'd') => Some(2),
        _ => None,
    }
}

fn run_end(bytes: &[u8], start: usize, c: Class) -> usize {
    let mut i = start;
    while i < bytes.len() && class(bytes[i]) == c {
        i += 1;
    }
    i
}

/// Byte ranges of the pre-token pieces of `bytes`.
pub fn pieces(bytes: &[u8]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if let Some(n) = contraction_len(&bytes[i..]) {
            out.push(i..i + n);
            i += n;
            continue;
        }
        let c = class(bytes[i]);
        if c != Class::Space {
            let end = run_end(bytes, i, c);
            out.push(i..end);
            i = end;
            continue;
        }
        if bytes[i] == b' ' {
            if let Some(&next) = bytes.get(i + 1) {
                let nc = class(next);
                if nc != Class::Space {
                    let end = run_end(bytes, i + 1, nc);
                    out.push(i..end);
                    i = end;
                    continue;
                }
            }
        }
        let end = run_end(bytes, i, Class::Space);
        if end < bytes.len() && end - i > 1 {
            // leave the final whitespace byte to the following piece
            out.push(i..end - 1);
            i = end - 1;
        } else {
            out.push(i..end);
            i = end;
        }
    }
    out
}
