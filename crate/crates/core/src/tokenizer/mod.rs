//! BPE tokenizers, marker conventions and vocabulary intersection.

mod marker;
mod partition;
mod vocab;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use marker::{
    byte_piece, byte_to_char, bytes_to_piece, canonicalize, char_to_byte, parse_byte_piece,
    piece_to_bytes, MarkerConvention, BYTE_SPACE, META_SPACE,
};
pub use partition::{partition, MatchMode, NovelToken, PartitionWarning, SharedToken, TokenPartition};
pub use vocab::{TokenId, Vocabulary};

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("malformed vocabulary: {0}")]
    MalformedVocab(String),
    #[error("malformed merges file, line {line}: {message}")]
    MalformedMerges { line: usize, message: String },
    #[error("merge on line {line} references unknown symbol `{symbol}`")]
    UnknownMergeSymbol { line: usize, symbol: String },
    #[error("cannot encode byte offset {offset} ({snippet:?}): no byte fallback and no unknown token")]
    UnencodableInput { offset: usize, snippet: String },
    #[error("token id {0} is not in the vocabulary")]
    UnknownId(TokenId),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TokenizerError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TokenizerError::Io { path: path.to_owned(), source }
    }
}

/// On-disk tokenizer layouts understood by [`TokenizerModel::load`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerFormat {
    /// `vocab.json` (token → id) plus `merges.txt` (one `left right` pair per line).
    #[default]
    VocabJsonMergesTxt,
}

#[derive(Debug, Clone, Copy)]
struct MergeRule {
    rank: u32,
    output: TokenId,
}

#[derive(Debug, Clone, Copy)]
struct Symbol {
    id: TokenId,
    mergeable: bool,
}

/// A validated byte-pair-encoding tokenizer.
///
/// Immutable after construction; `tokenize` is a pure function of the
/// model and its input.
#[derive(Clone)]
pub struct TokenizerModel {
    vocab: Vocabulary,
    merges: Vec<(TokenId, TokenId)>,
    rules: HashMap<(TokenId, TokenId), MergeRule>,
    marker: MarkerConvention,
    chars: HashMap<char, TokenId>,
    byte_fallback: [Option<TokenId>; 256],
    fallback_byte_of: HashMap<TokenId, u8>,
    unk_id: Option<TokenId>,
}

impl fmt::Debug for TokenizerModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenizerModel")
            .field("vocab", &self.vocab.len())
            .field("merges", &self.merges.len())
            .field("marker", &self.marker)
            .field("unk_id", &self.unk_id)
            .finish()
    }
}

impl TokenizerModel {
    /// Validates merges against the vocabulary. Merge rank is list position.
    pub fn new<S: AsRef<str>>(
        vocab: Vocabulary,
        merges: &[(S, S)],
        marker: MarkerConvention,
    ) -> Result<Self, TokenizerError> {
        let mut ids = Vec::with_capacity(merges.len());
        for (i, (left, right)) in merges.iter().enumerate() {
            ids.push((i + 1, left.as_ref(), right.as_ref()));
        }
        Self::build(vocab, ids, marker)
    }

    fn build(
        vocab: Vocabulary,
        merges: Vec<(usize, &str, &str)>,
        marker: MarkerConvention,
    ) -> Result<Self, TokenizerError> {
        let lookup = |line: usize, s: &str| {
            vocab
                .id(s)
                .ok_or_else(|| TokenizerError::UnknownMergeSymbol { line, symbol: s.to_owned() })
        };
        let mut merge_ids = Vec::with_capacity(merges.len());
        let mut rules = HashMap::with_capacity(merges.len());
        for (line, left, right) in merges {
            let l = lookup(line, left)?;
            let r = lookup(line, right)?;
            let output = lookup(line, &format!("{left}{right}"))?;
            let rank = merge_ids.len() as u32;
            if rules.contains_key(&(l, r)) {
                log::warn!("merge `{left} {right}` repeated on line {line}; keeping the earlier rank");
                continue;
            }
            rules.insert((l, r), MergeRule { rank, output });
            merge_ids.push((l, r));
        }

        let mut chars = HashMap::new();
        let mut byte_fallback = [None; 256];
        let mut fallback_byte_of = HashMap::new();
        for (id, token) in vocab.iter() {
            let mut it = token.chars();
            if let (Some(c), None) = (it.next(), it.next()) {
                chars.insert(c, id);
            }
            if marker != MarkerConvention::ByteMarker {
                if let Some(b) = parse_byte_piece(token) {
                    byte_fallback[b as usize] = Some(id);
                    fallback_byte_of.insert(id, b);
                }
            }
        }
        let unk_id = ["<unk>", "[UNK]", "<|unk|>"].iter().find_map(|t| vocab.id(t));

        Ok(Self {
            vocab,
            merges: merge_ids,
            rules,
            marker,
            chars,
            byte_fallback,
            fallback_byte_of,
            unk_id,
        })
    }

    /// Loads a tokenizer from disk. `marker = None` detects the convention
    /// from the vocabulary.
    pub fn load(
        vocab_path: impl AsRef<Path>,
        merges_path: impl AsRef<Path>,
        format: TokenizerFormat,
        marker: Option<MarkerConvention>,
    ) -> Result<Self, TokenizerError> {
        match format {
            TokenizerFormat::VocabJsonMergesTxt => {}
        }
        let vocab = Vocabulary::load_json(vocab_path)?;
        let merges_path = merges_path.as_ref();
        let text =
            std::fs::read_to_string(merges_path).map_err(|e| TokenizerError::io(merges_path, e))?;
        let marker = marker.unwrap_or_else(|| MarkerConvention::detect(vocab.tokens().iter().map(String::as_str)));
        Self::from_merges_text(vocab, &text, marker)
    }

    /// Parses merges text: one `left right` pair per line, line order is rank
    /// order, `#` lines and blank lines are skipped.
    pub fn from_merges_text(
        vocab: Vocabulary,
        text: &str,
        marker: MarkerConvention,
    ) -> Result<Self, TokenizerError> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((line_no, l, r))
                }
                _ => {
                    return Err(TokenizerError::MalformedMerges {
                        line: line_no,
                        message: format!("expected two space-separated symbols, got {line:?}"),
                    })
                }
            }
        }
        Self::build(vocab, merges, marker)
    }

    pub fn with_unk(mut self, unk_id: Option<TokenId>) -> Self {
        self.unk_id = unk_id;
        self
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn marker(&self) -> MarkerConvention {
        self.marker
    }

    pub fn is_byte_level(&self) -> bool {
        self.marker == MarkerConvention::ByteMarker
    }

    pub fn unk_id(&self) -> Option<TokenId> {
        self.unk_id
    }

    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    /// Merges as token-string pairs in rank order.
    pub fn merges(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.merges.iter().map(|&(l, r)| {
            (self.vocab.token(l).expect("valid id"), self.vocab.token(r).expect("valid id"))
        })
    }

    pub fn merges_text(&self) -> String {
        let mut out = String::new();
        for (l, r) in self.merges() {
            out.push_str(l);
            out.push(' ');
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    /// Segments `text` into token ids.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, TokenizerError> {
        self.tokenize_bytes(text.as_bytes())
    }

    /// Segments raw bytes; invalid UTF-8 is only encodable through byte
    /// fallback or the unknown token.
    pub fn tokenize_bytes(&self, input: &[u8]) -> Result<Vec<TokenId>, TokenizerError> {
        let mut out = Vec::with_capacity(input.len() / 2 + 1);
        let mut word: Vec<Symbol> = Vec::new();
        let flush = |word: &mut Vec<Symbol>, out: &mut Vec<TokenId>| {
            self.apply_merges(word);
            out.extend(word.iter().map(|s| s.id));
            word.clear();
        };

        match self.marker {
            MarkerConvention::ByteMarker => {
                for (offset, &b) in input.iter().enumerate() {
                    if b == b' ' && !word.is_empty() {
                        flush(&mut word, &mut out);
                    }
                    match self.chars.get(&byte_to_char(b)) {
                        Some(&id) => word.push(Symbol { id, mergeable: true }),
                        None => word.push(self.unknown_symbol(input, offset)?),
                    }
                }
            }
            MarkerConvention::MetaSpace | MarkerConvention::None => {
                let mut offset = 0;
                for chunk in input.utf8_chunks() {
                    for c in chunk.valid().chars() {
                        if c == ' ' && !word.is_empty() {
                            flush(&mut word, &mut out);
                        }
                        let mapped = if c == ' ' && self.marker == MarkerConvention::MetaSpace {
                            META_SPACE
                        } else {
                            c
                        };
                        match self.chars.get(&mapped) {
                            Some(&id) => word.push(Symbol { id, mergeable: true }),
                            None => {
                                let mut buf = [0u8; 4];
                                let bytes = c.encode_utf8(&mut buf).as_bytes();
                                self.fallback_symbols(bytes, input, offset, &mut word)?;
                            }
                        }
                        offset += c.len_utf8();
                    }
                    let invalid = chunk.invalid();
                    if !invalid.is_empty() {
                        self.fallback_symbols(invalid, input, offset, &mut word)?;
                        offset += invalid.len();
                    }
                }
            }
        }
        if !word.is_empty() {
            flush(&mut word, &mut out);
        }
        Ok(out)
    }

    fn unknown_symbol(&self, input: &[u8], offset: usize) -> Result<Symbol, TokenizerError> {
        self.unk_id.map(|id| Symbol { id, mergeable: false }).ok_or_else(|| {
            let end = (offset + 4).min(input.len());
            TokenizerError::UnencodableInput {
                offset,
                snippet: String::from_utf8_lossy(&input[offset..end]).into_owned(),
            }
        })
    }

    fn fallback_symbols(
        &self,
        bytes: &[u8],
        input: &[u8],
        offset: usize,
        word: &mut Vec<Symbol>,
    ) -> Result<(), TokenizerError> {
        if bytes.iter().all(|&b| self.byte_fallback[b as usize].is_some()) {
            for &b in bytes {
                let id = self.byte_fallback[b as usize].expect("checked above");
                word.push(Symbol { id, mergeable: false });
            }
            Ok(())
        } else {
            word.push(self.unknown_symbol(input, offset)?);
            Ok(())
        }
    }

    /// Repeatedly merges the lowest-rank adjacent pair, all occurrences
    /// left to right, until no rule applies.
    fn apply_merges(&self, word: &mut Vec<Symbol>) {
        if self.rules.is_empty() {
            return;
        }
        let mut scratch = Vec::with_capacity(word.len());
        loop {
            let mut best: Option<((TokenId, TokenId), MergeRule)> = None;
            for pair in word.windows(2) {
                if !(pair[0].mergeable && pair[1].mergeable) {
                    continue;
                }
                let key = (pair[0].id, pair[1].id);
                if let Some(&rule) = self.rules.get(&key) {
                    if best.is_none_or(|(_, b)| rule.rank < b.rank) {
                        best = Some((key, rule));
                    }
                }
            }
            let Some((key, rule)) = best else { break };
            scratch.clear();
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len()
                    && word[i].mergeable
                    && word[i + 1].mergeable
                    && (word[i].id, word[i + 1].id) == key
                {
                    scratch.push(Symbol { id: rule.output, mergeable: true });
                    i += 2;
                } else {
                    scratch.push(word[i]);
                    i += 1;
                }
            }
            std::mem::swap(word, &mut scratch);
        }
    }

    /// Surface bytes a single token stands for.
    pub fn token_bytes(&self, id: TokenId) -> Result<Vec<u8>, TokenizerError> {
        if let Some(&b) = self.fallback_byte_of.get(&id) {
            return Ok(vec![b]);
        }
        let piece = self.vocab.token(id).ok_or(TokenizerError::UnknownId(id))?;
        Ok(piece_to_bytes(piece, self.marker))
    }

    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>, TokenizerError> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend(self.token_bytes(id)?);
        }
        Ok(out)
    }

    /// Concatenates the surface text of `ids`. Invalid UTF-8 is replaced.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    /// Whether every character of `text` has a single-character token.
    pub fn covers(&self, text: &str) -> bool {
        text.chars().all(|c| match self.marker {
            MarkerConvention::ByteMarker => {
                let mut buf = [0u8; 4];
                c.encode_utf8(&mut buf).bytes().all(|b| self.chars.contains_key(&byte_to_char(b)))
            }
            MarkerConvention::MetaSpace if c == ' ' => self.chars.contains_key(&META_SPACE),
            _ => self.chars.contains_key(&c),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(tokens: &[&str], merges: &[(&str, &str)]) -> TokenizerModel {
        TokenizerModel::new(Vocabulary::from_tokens(tokens.iter().copied()).unwrap(), merges, MarkerConvention::None)
            .unwrap()
    }

    #[test]
    fn single_merge_fires() {
        let m = toy(&["a", "b", "ab"], &[("a", "b")]);
        assert_eq!(m.tokenize("ab").unwrap(), vec![2]);
        assert_eq!(m.tokenize("ba").unwrap(), vec![1, 0]);
    }

    #[test]
    fn casa_splits_into_two_merges() {
        // Hand execution: c a s a -> (rank 0: c a) ca s a -> (rank 1: s a) ca sa.
        let m = toy(&["c", "a", "s", "ca", "sa"], &[("c", "a"), ("s", "a")]);
        let ca = m.vocab().id("ca").unwrap();
        let sa = m.vocab().id("sa").unwrap();
        assert_eq!(m.tokenize("casa").unwrap(), vec![ca, sa]);
    }

    #[test]
    fn lower_rank_wins_over_position() {
        // "abc": (b c) has rank 0 so it fires before (a b).
        let m = toy(&["a", "b", "c", "ab", "bc"], &[("b", "c"), ("a", "b")]);
        let bc = m.vocab().id("bc").unwrap();
        assert_eq!(m.tokenize("abc").unwrap(), vec![0, bc]);
    }

    #[test]
    fn repeated_pairs_merge_left_to_right() {
        let m = toy(&["a", "aa"], &[("a", "a")]);
        assert_eq!(m.tokenize("aaa").unwrap(), vec![1, 0]);
        assert_eq!(m.tokenize("aaaa").unwrap(), vec![1, 1]);
    }

    #[test]
    fn unknown_symbol_in_merges_is_rejected() {
        let vocab = Vocabulary::from_tokens(["a", "b"]).unwrap();
        let err = TokenizerModel::new(vocab, &[("a", "b")], MarkerConvention::None).unwrap_err();
        assert!(matches!(err, TokenizerError::UnknownMergeSymbol { ref symbol, .. } if symbol == "ab"));
    }

    #[test]
    fn merges_text_skips_comments() {
        let vocab = Vocabulary::from_tokens(["a", "b", "ab"]).unwrap();
        let m = TokenizerModel::from_merges_text(vocab, "#version: 0.2\n\na b\n", MarkerConvention::None)
            .unwrap();
        assert_eq!(m.merge_count(), 1);
        assert_eq!(m.merges_text(), "a b\n");
    }

    #[test]
    fn malformed_merge_line() {
        let vocab = Vocabulary::from_tokens(["a", "b", "ab"]).unwrap();
        let err = TokenizerModel::from_merges_text(vocab, "a b c\n", MarkerConvention::None).unwrap_err();
        assert!(matches!(err, TokenizerError::MalformedMerges { line: 1, .. }));
    }

    #[test]
    fn unencodable_without_fallback() {
        let m = toy(&["a"], &[]);
        assert!(matches!(m.tokenize("ax"), Err(TokenizerError::UnencodableInput { offset: 1, .. })));
        let m = toy(&["a", "<unk>"], &[]).with_unk(Some(1));
        assert_eq!(m.tokenize("ax").unwrap(), vec![0, 1]);
    }

    #[test]
    fn meta_space_words_and_byte_fallback() {
        let mut tokens = vec!["▁", "c", "a", "s", "▁c", "▁ca", "sa", "▁casa"];
        let bytes: Vec<String> = (0..=255u8).map(byte_piece).collect();
        tokens.extend(bytes.iter().map(String::as_str));
        let vocab = Vocabulary::from_tokens(tokens).unwrap();
        let m = TokenizerModel::new(
            vocab,
            &[("▁", "c"), ("▁c", "a"), ("s", "a"), ("▁ca", "sa")],
            MarkerConvention::MetaSpace,
        )
        .unwrap();
        let casa = m.vocab().id("▁casa").unwrap();
        assert_eq!(m.tokenize(" casa casa").unwrap(), vec![casa, casa]);
        // 'é' is not a piece: two byte-fallback tokens
        let ids = m.tokenize(" casé").unwrap();
        assert_eq!(m.decode(&ids).unwrap(), " casé");
        assert_eq!(&ids[ids.len() - 2..], &[m.vocab().id("<0xC3>").unwrap(), m.vocab().id("<0xA9>").unwrap()]);
    }

    #[test]
    fn byte_level_round_trip() {
        let mut tokens: Vec<String> = (0..=255u8).map(|b| byte_to_char(b).to_string()).collect();
        tokens.push("Ġc".into());
        tokens.push("Ġca".into());
        let vocab = Vocabulary::from_tokens(tokens).unwrap();
        let m = TokenizerModel::new(vocab, &[("Ġ", "c"), ("Ġc", "a")], MarkerConvention::ByteMarker).unwrap();
        let text = " cane città\n";
        let ids = m.tokenize(text).unwrap();
        assert_eq!(ids[0], m.vocab().id("Ġca").unwrap());
        assert_eq!(m.decode(&ids).unwrap(), text);
    }
}
