//! Reversible byte ↔ printable-char alphabet used for token strings.
//!
//! Printable Latin-1 bytes map to themselves; the rest (space, controls,
//! 0x7F–0xA0, 0xAD) map to consecutive code points from U+0100. A space
//! therefore prints as `Ġ`, which is the space marker carried by word-initial
//! tokens such as `Ġfirewall`.

use alloc::string::String;
use alloc::vec::Vec;

const fn is_direct(b: u8) -> bool {
    matches!(b, b'!'..=b'~' | 0xA1..=0xAC | 0xAE..=0xFF)
}

const fn build_table() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut next = 256u32;
    let mut b = 0usize;
    while b < 256 {
        if is_direct(b as u8) {
            table[b] = match char::from_u32(b as u32) {
                Some(c) => c,
                None => '\0',
            };
        } else {
            table[b] = match char::from_u32(next) {
                Some(c) => c,
                None => '\0',
            };
            next += 1;
        }
        b += 1;
    }
    table
}

static BYTE_TO_CHAR: [char; 256] = build_table();

/// Marker that byte-level tokens use for a leading space.
pub const SPACE_MARKER: char = 'Ġ';

#[inline]
pub fn byte_char(b: u8) -> char {
    BYTE_TO_CHAR[b as usize]
}

pub fn char_byte(c: char) -> Option<u8> {
    let cp = c as u32;
    if cp < 256 && is_direct(cp as u8) {
        return Some(cp as u8);
    }
    if (256..256 + 68).contains(&cp) {
        let idx = cp - 256;
        return (0..=255u8).filter(|b| !is_direct(*b)).nth(idx as usize);
    }
    None
}

pub fn bytes_to_token(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| byte_char(b)).collect()
}

/// Inverse of [`bytes_to_token`]; `None` if a char is outside the alphabet.
pub fn token_to_bytes(token: &str) -> Option<Vec<u8>> {
    token.chars().map(char_byte).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabet_is_a_bijection() {
        let mut seen = alloc::collections::BTreeSet::new();
        for b in 0..=255u8 {
            let c = byte_char(b);
            assert!(seen.insert(c));
            assert_eq!(char_byte(c), Some(b));
        }
        assert_eq!(byte_char(b' '), SPACE_MARKER);
        assert_eq!(bytes_to_token(b" firewall"), "Ġfirewall");
        assert_eq!(char_byte(' '), None);
    }
}
