//! Word-boundary marker conventions and piece canonicalization.
//!
//! Tokenizers encode "this piece starts a word" in different ways:
//! SentencePiece-style vocabularies prefix `▁`, GPT-2 style byte-level
//! vocabularies map every byte to a printable character (space becomes
//! `Ġ`), and character-level toy vocabularies carry no marker at all.
//! Everything here goes through the *surface bytes* of a piece, the text
//! the piece stands for with a leading space for word-initial pieces.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub const META_SPACE: char = '\u{2581}';
pub const BYTE_SPACE: char = '\u{0120}';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarkerConvention {
    /// `▁casa`; raw control bytes and invalid UTF-8 appear as `<0xNN>` pieces.
    MetaSpace,
    /// `Ġcasa`; every byte is drawn from the GPT-2 printable byte alphabet.
    ByteMarker,
    /// No boundary marker.
    None,
}

impl MarkerConvention {
    pub fn marker(self) -> Option<char> {
        match self {
            MarkerConvention::MetaSpace => Some(META_SPACE),
            MarkerConvention::ByteMarker => Some(BYTE_SPACE),
            MarkerConvention::None => None,
        }
    }

    pub fn marker_str(self) -> &'static str {
        match self {
            MarkerConvention::MetaSpace => "\u{2581}",
            MarkerConvention::ByteMarker => "\u{0120}",
            MarkerConvention::None => "",
        }
    }

    /// True when the piece begins with this convention's marker.
    pub fn is_prefix_piece(self, piece: &str) -> bool {
        self.marker().is_some_and(|m| piece.starts_with(m))
    }

    /// Guess the convention from which marker dominates the vocabulary.
    pub fn detect<'a>(pieces: impl IntoIterator<Item = &'a str>) -> MarkerConvention {
        let (mut meta, mut byte) = (0usize, 0usize);
        for p in pieces {
            if p.starts_with(META_SPACE) {
                meta += 1;
            } else if p.starts_with(BYTE_SPACE) {
                byte += 1;
            }
        }
        if meta == 0 && byte == 0 {
            MarkerConvention::None
        } else if meta >= byte {
            MarkerConvention::MetaSpace
        } else {
            MarkerConvention::ByteMarker
        }
    }
}

impl fmt::Display for MarkerConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarkerConvention::MetaSpace => "meta-space",
            MarkerConvention::ByteMarker => "byte-marker",
            MarkerConvention::None => "none",
        })
    }
}

impl FromStr for MarkerConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "meta-space" | "metaspace" | "leading-meta-space" | "sentencepiece" | "\u{2581}" => {
                Ok(MarkerConvention::MetaSpace)
            }
            "byte-marker" | "leading-byte-marker" | "byte-level" | "bytelevel" | "gpt2"
            | "\u{0120}" => Ok(MarkerConvention::ByteMarker),
            "none" => Ok(MarkerConvention::None),
            other => Err(format!(
                "unknown marker convention `{other}` (expected meta-space, byte-marker or none)"
            )),
        }
    }
}

struct ByteTables {
    to_char: [char; 256],
    to_byte: std::collections::HashMap<char, u8>,
}

fn byte_tables() -> &'static ByteTables {
    static TABLES: OnceLock<ByteTables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let printable = |b: u8| {
            (b'!'..=b'~').contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b)
        };
        let mut to_char = ['\0'; 256];
        let mut next = 256u32;
        for b in 0..=255u8 {
            to_char[b as usize] = if printable(b) {
                char::from(b)
            } else {
                let c = char::from_u32(next).expect("byte alphabet stays in the BMP");
                next += 1;
                c
            };
        }
        let to_byte = to_char.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        ByteTables { to_char, to_byte }
    })
}

/// The printable character standing for `b` in the byte-level alphabet.
pub fn byte_to_char(b: u8) -> char {
    byte_tables().to_char[b as usize]
}

pub fn char_to_byte(c: char) -> Option<u8> {
    byte_tables().to_byte.get(&c).copied()
}

/// Bytes that the meta-space convention can only spell as `<0xNN>`.
fn needs_byte_escape(b: u8) -> bool {
    b < 0x20 || b == 0x7F || b >= 0x80
}

/// Parses a `<0xNN>` byte-fallback piece.
pub fn parse_byte_piece(piece: &str) -> Option<u8> {
    let hex = piece.strip_prefix("<0x")?.strip_suffix('>')?;
    if hex.len() != 2 {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}

pub fn byte_piece(b: u8) -> String {
    format!("<0x{b:02X}>")
}

fn push_escaped(out: &mut Vec<u8>, piece: &str) {
    let mut rest = piece;
    while !rest.is_empty() {
        if rest.len() >= 6 && rest.as_bytes()[0] == b'<' {
            if let Some(b) = rest.get(..6).and_then(parse_byte_piece) {
                if needs_byte_escape(b) {
                    out.push(b);
                    rest = &rest[6..];
                    continue;
                }
            }
        }
        let c = rest.chars().next().expect("non-empty");
        if c == META_SPACE {
            out.push(b' ');
        } else {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
        }
        rest = &rest[c.len_utf8()..];
    }
}

/// Surface bytes of `piece` under `convention`.
pub fn piece_to_bytes(piece: &str, convention: MarkerConvention) -> Vec<u8> {
    let mut out = Vec::with_capacity(piece.len());
    match convention {
        MarkerConvention::ByteMarker => {
            for c in piece.chars() {
                match char_to_byte(c) {
                    Some(b) => out.push(b),
                    None => {
                        let mut buf = [0u8; 4];
                        out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                    }
                }
            }
        }
        MarkerConvention::MetaSpace => push_escaped(&mut out, piece),
        MarkerConvention::None => {
            // Same escapes as meta-space, but `▁` is an ordinary character.
            let mut rest = piece;
            while !rest.is_empty() {
                if let Some(b) = rest.get(..6).and_then(parse_byte_piece) {
                    if needs_byte_escape(b) {
                        out.push(b);
                        rest = &rest[6..];
                        continue;
                    }
                }
                let c = rest.chars().next().expect("non-empty");
                let mut buf = [0u8; 4];
                out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                rest = &rest[c.len_utf8()..];
            }
        }
    }
    out
}

fn push_text_escaped(out: &mut String, bytes: &[u8], space: Option<char>) {
    for chunk in bytes.utf8_chunks() {
        for c in chunk.valid().chars() {
            match (c, space) {
                (' ', Some(marker)) => out.push(marker),
                (c, _) if c.is_ascii() && needs_byte_escape(c as u8) => out.push_str(&byte_piece(c as u8)),
                (c, _) => out.push(c),
            }
        }
        for &b in chunk.invalid() {
            out.push_str(&byte_piece(b));
        }
    }
}

/// Spells surface bytes as a piece under `convention`.
pub fn bytes_to_piece(bytes: &[u8], convention: MarkerConvention) -> String {
    let mut out = String::with_capacity(bytes.len() + 2);
    match convention {
        MarkerConvention::ByteMarker => out.extend(bytes.iter().map(|&b| byte_to_char(b))),
        MarkerConvention::MetaSpace => push_text_escaped(&mut out, bytes, Some(META_SPACE)),
        MarkerConvention::None => {
            // Word-initial pieces lose their boundary; a lone space stays a space.
            let body = match bytes {
                [b' ', rest @ ..] if !rest.is_empty() => rest,
                other => other,
            };
            push_text_escaped(&mut out, body, None);
        }
    }
    out
}

/// Rewrites a piece from one marker convention into another.
///
/// Word-initial pieces carry the target marker, word-internal pieces carry
/// none, and the pure-marker piece maps onto the target pure-marker piece.
pub fn canonicalize(piece: &str, from: MarkerConvention, to: MarkerConvention) -> String {
    if from == to {
        return piece.to_owned();
    }
    bytes_to_piece(&piece_to_bytes(piece, from), to)
}

#[cfg(test)]
mod tests {
    use super::*;
    use MarkerConvention::*;

    #[test]
    fn swaps_markers() {
        assert_eq!(canonicalize("▁casa", MetaSpace, ByteMarker), "Ġcasa");
        assert_eq!(canonicalize("Ġcasa", ByteMarker, MetaSpace), "▁casa");
        assert_eq!(canonicalize("▁", MetaSpace, ByteMarker), "Ġ");
        assert_eq!(canonicalize("Ġ", ByteMarker, MetaSpace), "▁");
    }

    #[test]
    fn internal_pieces_are_untouched() {
        for (a, b) in [(MetaSpace, ByteMarker), (ByteMarker, MetaSpace), (MetaSpace, None), (None, ByteMarker)] {
            assert_eq!(canonicalize("casa", a, b), "casa");
        }
    }

    #[test]
    fn non_ascii_goes_through_the_byte_alphabet() {
        assert_eq!(canonicalize("▁città", MetaSpace, ByteMarker), "ĠcittÃł");
        assert_eq!(canonicalize("ĠcittÃł", ByteMarker, MetaSpace), "▁città");
    }

    #[test]
    fn control_and_partial_bytes_use_fallback_spelling() {
        assert_eq!(canonicalize("Ċ", ByteMarker, MetaSpace), "<0x0A>");
        assert_eq!(canonicalize("<0x0A>", MetaSpace, ByteMarker), "Ċ");
        assert_eq!(canonicalize("Ã", ByteMarker, MetaSpace), "<0xC3>");
        assert_eq!(canonicalize("<0xC3>", MetaSpace, ByteMarker), "Ã");
        // printable ASCII escapes are literal text, not bytes
        assert_eq!(piece_to_bytes("<0x41>", MetaSpace), b"<0x41>");
    }

    #[test]
    fn none_convention_drops_the_boundary() {
        assert_eq!(canonicalize("▁casa", MetaSpace, None), "casa");
        assert_eq!(canonicalize("▁", MetaSpace, None), " ");
    }

    #[test]
    fn byte_alphabet_is_a_bijection() {
        let mut seen = std::collections::HashSet::new();
        for b in 0..=255u8 {
            let c = byte_to_char(b);
            assert!(seen.insert(c));
            assert_eq!(char_to_byte(c), Some(b));
        }
        assert_eq!(byte_to_char(b' '), BYTE_SPACE);
        assert_eq!(byte_to_char(b'\n'), 'Ċ');
    }

    #[test]
    fn parses_conventions() {
        assert_eq!("leading-meta-space".parse::<MarkerConvention>().unwrap(), MetaSpace);
        assert_eq!("leading-byte-marker".parse::<MarkerConvention>().unwrap(), ByteMarker);
        assert!("bogus".parse::<MarkerConvention>().is_err());
    }

    #[test]
    fn detects_dominant_marker() {
        assert_eq!(MarkerConvention::detect(["▁a", "b", "▁c"]), MetaSpace);
        assert_eq!(MarkerConvention::detect(["Ġa", "b"]), ByteMarker);
        assert_eq!(MarkerConvention::detect(["a", "b"]), None);
    }
}
