//! Vocabularies, the built-in greedy tokenizer and the padded entity catalog.
//!
//! The built-in tokenizer normalizes whitespace and then repeatedly takes the
//! longest vocabulary token that prefixes the remaining text. Characters that
//! no token covers are emitted as `<0xNN>` byte tokens, so tokenization never
//! fails. Word boundaries are carried by the tokens themselves: a vocabulary
//! may hold both `dog` and ` dog`.

mod catalog;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kg::normalize_whitespace;

pub use catalog::{build_catalog, CatalogRecord, EntityCatalog, PretokenizedRecord, TokenizedKg};

pub type TokenId = u32;

pub const DEFAULT_RESERVED: [&str; 4] = ["<s>", "</s>", "<mask>", "<pad>"];

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    byte_ids: Option<Box<[TokenId; 256]>>,
    /// Longest matchable token in bytes.
    max_len: usize,
}

impl Vocabulary {
    pub const BOS: TokenId = 0;
    pub const EOS: TokenId = 1;
    pub const MASK: TokenId = 2;
    pub const PAD: TokenId = 3;

    /// Builds a vocabulary where `tokens[0..4]` are bos, eos, mask and pad.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 4 {
            return Err(Error::Vocab(format!(
                "need 4 reserved tokens (bos, eos, mask, pad), got {}",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains('\n') {
                return Err(Error::Vocab(format!(
                    "token {i} is empty or contains a newline"
                )));
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Vocab(format!("duplicate token `{t}` at id {i}")));
            }
        }
        let byte_ids = (0..=255u8)
            .map(|b| index.get(&byte_token(b)).copied())
            .collect::<Option<Vec<_>>>()
            .map(|v| Box::new(<[TokenId; 256]>::try_from(v).expect("256 entries")));
        let mut vocab = Vocabulary {
            tokens,
            index,
            byte_ids,
            max_len: 0,
        };
        vocab.max_len = (0..vocab.tokens.len() as TokenId)
            .filter(|&id| vocab.is_matchable(id))
            .map(|id| vocab.tokens[id as usize].len())
            .max()
            .unwrap_or(0);
        Ok(vocab)
    }

    /// Returns a copy with any missing `<0xNN>` byte tokens appended, which
    /// the greedy tokenizer needs for its fallback.
    pub fn with_byte_fallback(self) -> Self {
        if self.byte_ids.is_some() {
            return self;
        }
        let mut tokens = self.tokens;
        for b in 0..=255u8 {
            let t = byte_token(b);
            if !self.index.contains_key(&t) {
                tokens.push(t);
            }
        }
        Self::from_tokens(tokens).expect("appending byte tokens keeps the vocabulary valid")
    }

    /// Word-level vocabulary covering `texts`: each whitespace word appears
    /// bare and with a leading space, after the reserved header and the 256
    /// byte tokens.
    pub fn word_level<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = BTreeSet::new();
        for text in texts {
            for w in text.split_whitespace() {
                words.insert(w.to_string());
                words.insert(format!(" {w}"));
            }
        }
        let mut tokens: Vec<String> = DEFAULT_RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend((0..=255u8).map(byte_token));
        let taken: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        tokens.extend(words.into_iter().filter(|w| !taken.contains(w)));
        Self::from_tokens(tokens).expect("word-level vocabulary is valid")
    }

    /// Reads one token per line; line number is the id.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens = text
            .split('\n')
            .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
            .collect::<Vec<_>>();
        let tokens = match tokens.last() {
            Some(l) if l.is_empty() => tokens[..tokens.len() - 1].to_vec(),
            _ => tokens,
        };
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_reserved(id: TokenId) -> bool {
        id <= Self::PAD
    }

    pub fn has_byte_fallback(&self) -> bool {
        self.byte_ids.is_some()
    }

    fn byte_value(&self, id: TokenId) -> Option<u8> {
        let t = self.tokens.get(id as usize)?;
        let hex = t.strip_prefix("<0x")?.strip_suffix('>')?;
        if hex.len() != 2 {
            return None;
        }
        u8::from_str_radix(hex, 16).ok()
    }

    fn is_matchable(&self, id: TokenId) -> bool {
        !Self::is_reserved(id) && self.byte_value(id).is_none()
    }

    /// Greedy longest match over `text` as given (no normalization).
    fn greedy(&self, text: &str, out: &mut Vec<TokenId>) {
        let bytes = text.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let rem = bytes.len() - i;
            let mut matched = false;
            for len in (1..=self.max_len.min(rem)).rev() {
                if !text.is_char_boundary(i + len) {
                    continue;
                }
                if let Some(&id) = self.index.get(&text[i..i + len]) {
                    if self.is_matchable(id) {
                        out.push(id);
                        i += len;
                        matched = true;
                        break;
                    }
                }
            }
            if !matched {
                let ch_len = text[i..].chars().next().map_or(1, char::len_utf8);
                let byte_ids = self
                    .byte_ids
                    .as_ref()
                    .expect("greedy tokenization requires byte fallback tokens");
                out.extend(bytes[i..i + ch_len].iter().map(|&b| byte_ids[b as usize]));
                i += ch_len;
            }
        }
    }

    /// Renders ids back to text; reserved ids appear as their marker strings
    /// and runs of byte tokens are decoded as UTF-8.
    pub fn render(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        let mut pending: Vec<u8> = Vec::new();
        for &id in ids {
            if let Some(b) = self.byte_value(id) {
                pending.push(b);
                continue;
            }
            if !pending.is_empty() {
                out.push_str(&String::from_utf8_lossy(&pending));
                pending.clear();
            }
            out.push_str(self.token(id).unwrap_or("<unk>"));
        }
        if !pending.is_empty() {
            out.push_str(&String::from_utf8_lossy(&pending));
        }
        out
    }

    /// Encodes rendered text, mapping reserved marker strings back to their
    /// ids and tokenizing the text between them as-is.
    pub fn encode_with_markers(&self, text: &str) -> Vec<TokenId> {
        let markers: Vec<(&str, TokenId)> = (0..=Self::PAD)
            .map(|id| (self.tokens[id as usize].as_str(), id))
            .collect();
        let mut out = Vec::new();
        let mut rest = text;
        loop {
            let next = markers
                .iter()
                .filter_map(|&(m, id)| rest.find(m).map(|pos| (pos, m, id)))
                .min_by_key(|&(pos, m, _)| (pos, std::cmp::Reverse(m.len())));
            match next {
                Some((pos, m, id)) => {
                    self.greedy(&rest[..pos], &mut out);
                    out.push(id);
                    rest = &rest[pos + m.len()..];
                }
                None => {
                    self.greedy(rest, &mut out);
                    return out;
                }
            }
        }
    }
}

/// A text tokenizer producing ids in some vocabulary.
///
/// `tokenize` encodes a string that starts a text segment; `tokenize_inner`
/// encodes one that follows earlier text and is therefore preceded by a
/// space.
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Vec<TokenId>;
    fn tokenize_inner(&self, text: &str) -> Vec<TokenId>;
}

/// Built-in deterministic greedy longest-match tokenizer.
#[derive(Clone, Copy, Debug)]
pub struct GreedyTokenizer<'v> {
    vocab: &'v Vocabulary,
}

impl<'v> GreedyTokenizer<'v> {
    pub fn new(vocab: &'v Vocabulary) -> Result<Self> {
        if !vocab.has_byte_fallback() {
            return Err(Error::Vocab(
                "vocabulary lacks <0xNN> byte tokens required for greedy tokenization".into(),
            ));
        }
        Ok(GreedyTokenizer { vocab })
    }

    pub fn vocab(&self) -> &'v Vocabulary {
        self.vocab
    }
}

impl Tokenizer for GreedyTokenizer<'_> {
    fn tokenize(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        self.vocab.greedy(&normalize_whitespace(text), &mut out);
        out
    }

    fn tokenize_inner(&self, text: &str) -> Vec<TokenId> {
        let norm = normalize_whitespace(text);
        let mut out = Vec::new();
        if !norm.is_empty() {
            self.vocab.greedy(&format!(" {norm}"), &mut out);
        }
        out
    }
}

/// Tokenizes `text` with the built-in tokenizer.
pub fn tokenize(vocab: &Vocabulary, text: &str) -> Result<Vec<TokenId>> {
    Ok(GreedyTokenizer::new(vocab)?.tokenize(text))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Reserved header, byte tokens, then `words` in order.
    pub fn vocab(words: &[&str]) -> Vocabulary {
        let mut tokens: Vec<String> = DEFAULT_RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.iter().map(|s| s.to_string()));
        Vocabulary::from_tokens(tokens)
            .unwrap()
            .with_byte_fallback()
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::vocab;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text() {
        let v = vocab(&["dog"]);
        assert!(tokenize(&v, "").unwrap().is_empty());
        assert!(tokenize(&v, "   ").unwrap().is_empty());
    }

    #[test]
    fn whole_word_hit() {
        let v = vocab(&["dog"]);
        assert_eq!(tokenize(&v, "dog").unwrap(), vec![v.id("dog").unwrap()]);
    }

    #[test]
    fn longest_match_splits_suffix() {
        let v = vocab(&["dog", "s", "do"]);
        let ids = tokenize(&v, "dogs").unwrap();
        assert_eq!(ids, vec![v.id("dog").unwrap(), v.id("s").unwrap()]);
    }

    #[test]
    fn leading_space_tokens_and_inner_segments() {
        let v = vocab(&["cat", " and", " dog", "dog"]);
        let ids = tokenize(&v, "cat  and\tdog").unwrap();
        assert_eq!(
            ids,
            vec![
                v.id("cat").unwrap(),
                v.id(" and").unwrap(),
                v.id(" dog").unwrap()
            ]
        );
        let tok = GreedyTokenizer::new(&v).unwrap();
        assert_eq!(tok.tokenize_inner("dog"), vec![v.id(" dog").unwrap()]);
        assert!(tok.tokenize_inner("").is_empty());
    }

    #[test]
    fn byte_fallback_covers_unknown_characters() {
        let v = vocab(&["a"]);
        let ids = tokenize(&v, "aé").unwrap();
        assert_eq!(ids.len(), 3);
        assert_eq!(ids[0], v.id("a").unwrap());
        assert_eq!(ids[1], v.id("<0xC3>").unwrap());
        assert_eq!(v.render(&ids), "aé");
    }

    #[test]
    fn reserved_and_byte_tokens_never_matched_from_text() {
        let v = vocab(&["x"]);
        let ids = tokenize(&v, "<s><0x41>").unwrap();
        assert!(ids.iter().all(|&id| !Vocabulary::is_reserved(id)));
        assert_eq!(v.render(&ids), "<s><0x41>");
    }

    #[test]
    fn duplicate_tokens_rejected() {
        let tokens = ["<s>", "</s>", "<mask>", "<pad>", "a", "a"]
            .map(String::from)
            .to_vec();
        assert!(Vocabulary::from_tokens(tokens).is_err());
        assert!(Vocabulary::from_tokens(vec!["<s>".into()]).is_err());
    }

    #[test]
    fn greedy_requires_byte_tokens() {
        let tokens = ["<s>", "</s>", "<mask>", "<pad>", "a"]
            .map(String::from)
            .to_vec();
        let v = Vocabulary::from_tokens(tokens).unwrap();
        assert!(GreedyTokenizer::new(&v).is_err());
        assert!(GreedyTokenizer::new(&v.with_byte_fallback()).is_ok());
    }

    #[test]
    fn save_load_preserves_ids() {
        let v = Vocabulary::word_level(["grant noun 1", "any monetary aid"]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        let w = Vocabulary::load(&p).unwrap();
        assert_eq!(v.tokens(), w.tokens());
        assert_eq!(w.id(" aid"), v.id(" aid"));
        assert!(w.has_byte_fallback());
    }

    #[test]
    fn markers_round_trip() {
        let v = vocab(&["grant", " noun", " 1"]);
        let ids = vec![0, 4, 5, 6, 2, 2, 1, 3, 3];
        let text = v.render(&ids);
        assert_eq!(text, "<s>grant noun 1<mask><mask></s><pad><pad>");
        assert_eq!(v.encode_with_markers(&text), ids);
    }

    proptest! {
        #[test]
        fn detokenize_round_trips_normalized_text(s in "[a-z é\\t\\n]{0,40}") {
            let v = vocab(&["ab", "a", " b", "c d", "é"]);
            let ids = tokenize(&v, &s).unwrap();
            prop_assert!(ids.iter().all(|&id| !Vocabulary::is_reserved(id)));
            prop_assert_eq!(v.render(&ids), normalize_whitespace(&s));
        }
    }
}
