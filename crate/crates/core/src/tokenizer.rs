//! Uncased BERT text pipeline.
//!
//! 1. Clean: drop NUL, U+FFFD and control characters; map whitespace to ' '.
//! 2. Pad CJK ideographs with spaces so each becomes its own word.
//! 3. NFD-decompose and drop non-spacing marks, then lowercase per character.
//! 4. Split on whitespace and isolate every punctuation character.
//! 5. Greedy longest-match-first WordPiece with `##` continuation pieces.
//!
//! The words produced by step 4 are the unit of [`WordSpan`] alignment and of
//! TF-IDF counting.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use unicode_categories::UnicodeCategories;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const MASK_TOKEN: &str = "[MASK]";
pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";

pub const CONTINUATION_PREFIX: &str = "##";
pub const DEFAULT_MAX_CHARS: usize = 100;
pub const DEFAULT_MAX_LEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SpecialIds {
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
    pub pad: u32,
    pub unk: u32,
}

impl SpecialIds {
    pub fn contains(&self, id: u32) -> bool {
        id == self.cls || id == self.sep || id == self.mask || id == self.pad || id == self.unk
    }
}

#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    specials: SpecialIds,
}

impl Vocab {
    /// Token ids are positions in `tokens`.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if token_to_id.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocab entry `{tok}` at id {i}")));
            }
        }
        let need = |t: &str| {
            token_to_id
                .get(t)
                .copied()
                .ok_or_else(|| Error::Config(format!("vocab lacks special token {t}")))
        };
        let specials = SpecialIds {
            cls: need(CLS_TOKEN)?,
            sep: need(SEP_TOKEN)?,
            mask: need(MASK_TOKEN)?,
            pad: need(PAD_TOKEN)?,
            unk: need(UNK_TOKEN)?,
        };
        Ok(Self {
            token_to_id,
            id_to_token: tokens,
            specials,
        })
    }

    /// Reads `vocab.txt`: one token per line, id = zero-based line number.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.split('\n').map(str::to_owned).collect();
        let tokens = match tokens.split_last() {
            Some((last, rest)) if last.is_empty() => rest.to_vec(),
            _ => tokens,
        };
        Self::from_tokens(tokens)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn specials(&self) -> &SpecialIds {
        &self.specials
    }
}

/// One basic-tokenizer word and the half-open range of token indices it
/// occupies in [`TokenizedSentence::ids`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpan {
    pub word: String,
    pub start: usize,
    pub end: usize,
}

impl WordSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSentence {
    pub text: String,
    pub ids: Vec<u32>,
    pub word_spans: Vec<WordSpan>,
}

impl TokenizedSentence {
    /// Wraps already-tokenized ids (including `[CLS]`/`[SEP]` equivalents).
    /// Each inner id becomes its own word.
    pub fn from_ids(text: impl Into<String>, ids: Vec<u32>, specials: &SpecialIds) -> Result<Self> {
        if ids.len() < 2 || ids[0] != specials.cls || *ids.last().unwrap() != specials.sep {
            return Err(Error::Index(format!(
                "pre-tokenized ids must start with {} and end with {}",
                specials.cls, specials.sep
            )));
        }
        let word_spans = (1..ids.len() - 1)
            .map(|i| WordSpan {
                word: ids[i].to_string(),
                start: i,
                end: i + 1,
            })
            .collect();
        Ok(Self {
            text: text.into(),
            ids,
            word_spans,
        })
    }

    pub fn n_tokens(&self) -> usize {
        self.ids.len()
    }

    /// No real tokens between `[CLS]` and `[SEP]`.
    pub fn is_degenerate(&self) -> bool {
        self.ids.len() <= 2
    }

    /// Index of the closing `[SEP]`.
    pub fn sep_index(&self) -> usize {
        self.ids.len() - 1
    }

    /// Mean of a per-token value over each word's tokens.
    pub fn word_means(&self, per_token: &[f64]) -> Vec<f64> {
        self.word_spans
            .iter()
            .map(|w| per_token[w.start..w.end].iter().sum::<f64>() / w.len() as f64)
            .collect()
    }

    /// Token index → index into `word_spans` (None for specials).
    pub fn token_words(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.ids.len()];
        for (w, span) in self.word_spans.iter().enumerate() {
            for slot in &mut out[span.start..span.end] {
                *slot = Some(w);
            }
        }
        out
    }
}

fn is_bert_whitespace(c: char) -> bool {
    matches!(c, '\t' | '\n' | '\r') || c.is_whitespace()
}

fn is_bert_control(c: char) -> bool {
    match c {
        '\t' | '\n' | '\r' => false,
        _ => c.is_other(),
    }
}

fn is_bert_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || c.is_punctuation()
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF
        | 0x3400..=0x4DBF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F
        | 0x2B920..=0x2CEAF
        | 0xF900..=0xFAFF
        | 0x2F800..=0x2FA1F)
}

/// Cleanup, CJK padding, accent stripping and lowercasing.
pub fn normalize(text: &str) -> String {
    let mut cleaned = String::with_capacity(text.len());
    for c in text.chars() {
        if c == '\0' || c == '\u{FFFD}' || is_bert_control(c) {
            continue;
        }
        if is_bert_whitespace(c) {
            cleaned.push(' ');
        } else if is_cjk(c) {
            cleaned.push(' ');
            cleaned.push(c);
            cleaned.push(' ');
        } else {
            cleaned.push(c);
        }
    }
    let mut out = String::with_capacity(cleaned.len());
    for c in cleaned.nfd().filter(|c| !c.is_mark_nonspacing()) {
        out.extend(c.to_lowercase());
    }
    out
}

/// Pre-WordPiece words: normalized text split on whitespace with punctuation
/// isolated.
pub fn basic_tokenize(text: &str) -> Vec<String> {
    let normalized = normalize(text);
    let mut words = Vec::new();
    for chunk in normalized.split(is_bert_whitespace).filter(|s| !s.is_empty()) {
        let mut current = String::new();
        for c in chunk.chars() {
            if is_bert_punctuation(c) {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

/// Greedy longest-match-first segmentation of one normalized word.
pub fn wordpiece(word: &str, vocab: &Vocab, max_chars: usize) -> Vec<u32> {
    let unk = vec![vocab.specials.unk];
    let bounds: Vec<usize> = word
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(word.len()))
        .collect();
    let n_chars = bounds.len() - 1;
    if n_chars == 0 || n_chars > max_chars {
        return unk;
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut candidate = String::with_capacity(word.len() + 2);
    while start < n_chars {
        let mut end = n_chars;
        let mut found = None;
        while start < end {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION_PREFIX);
            }
            candidate.push_str(&word[bounds[start]..bounds[end]]);
            if let Some(id) = vocab.id(&candidate) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        match found {
            Some(id) => pieces.push(id),
            None => return unk,
        }
        start = end;
    }
    pieces
}

/// `[CLS] + subwords + [SEP]`, truncated to at most `max_len` ids.
pub fn encode(text: &str, vocab: &Vocab, max_len: usize) -> Result<TokenizedSentence> {
    if max_len < 3 {
        return Err(Error::Index(format!("max_len must be at least 3, got {max_len}")));
    }
    let budget = max_len - 2;
    let mut ids = vec![vocab.specials.cls];
    let mut word_spans = Vec::new();
    for word in basic_tokenize(text) {
        let room = budget - (ids.len() - 1);
        if room == 0 {
            break;
        }
        let mut pieces = wordpiece(&word, vocab, DEFAULT_MAX_CHARS);
        pieces.truncate(room);
        let start = ids.len();
        ids.extend_from_slice(&pieces);
        word_spans.push(WordSpan {
            word,
            start,
            end: ids.len(),
        });
    }
    ids.push(vocab.specials.sep);
    Ok(TokenizedSentence {
        text: text.to_owned(),
        ids,
        word_spans,
    })
}

/// Copy of `s` with the given token positions replaced by `[MASK]`.
pub fn mask_positions(
    s: &TokenizedSentence,
    positions: &BTreeSet<usize>,
    specials: &SpecialIds,
) -> Result<TokenizedSentence> {
    let sep = s.sep_index();
    let mut out = s.clone();
    for &p in positions {
        if p == 0 || p >= sep {
            return Err(Error::Index(format!(
                "cannot mask position {p}: valid range is 1..{sep}"
            )));
        }
        out.ids[p] = specials.mask;
    }
    Ok(out)
}

/// Parses a pre-tokenized line of space-separated ids.
pub fn parse_id_line(line: &str) -> std::result::Result<Vec<u32>, std::num::ParseIntError> {
    line.split_ascii_whitespace().map(str::parse).collect()
}
