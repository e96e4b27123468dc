//! Word-level TF-IDF weights.
//!
//! Documents are lines of a corpus; words come from the basic (pre-WordPiece)
//! tokenizer so they line up with [`TokenizedSentence::word_spans`]. The
//! weight of a word is `tf · log2(n_docs / df)` with `tf` its raw count in the
//! sentence being weighted; unseen words count as `df = 1`.
//!
//! File format: a `n_docs<TAB><count>` header followed by `word<TAB>df` lines
//! sorted by word.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tokenizer::{basic_tokenize, TokenizedSentence};

const HEADER_KEY: &str = "n_docs";

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    n_docs: u64,
    df: BTreeMap<String, u64>,
    idf: HashMap<String, f64>,
}

impl TfidfModel {
    pub fn from_counts(n_docs: u64, df: BTreeMap<String, u64>) -> Result<Self> {
        if n_docs == 0 {
            return Err(Error::InsufficientData("TF-IDF needs at least one document".into()));
        }
        if let Some((w, &c)) = df.iter().find(|(_, &c)| c == 0 || c > n_docs) {
            return Err(Error::Config(format!(
                "document frequency {c} of `{w}` outside 1..={n_docs}"
            )));
        }
        let idf = df
            .iter()
            .map(|(w, &c)| (w.clone(), (n_docs as f64 / c as f64).log2()))
            .collect();
        Ok(Self { n_docs, df, idf })
    }

    /// One document per item; blank documents are skipped.
    pub fn from_documents<S: AsRef<str> + Sync>(docs: &[S]) -> Result<Self> {
        let (n_docs, df) = docs
            .par_chunks(4096)
            .map(|chunk| {
                let mut n = 0u64;
                let mut df: BTreeMap<String, u64> = BTreeMap::new();
                for doc in chunk {
                    let words: BTreeSet<String> = basic_tokenize(doc.as_ref()).into_iter().collect();
                    if words.is_empty() {
                        continue;
                    }
                    n += 1;
                    for w in words {
                        *df.entry(w).or_default() += 1;
                    }
                }
                (n, df)
            })
            .reduce(
                || (0, BTreeMap::new()),
                |(na, mut a), (nb, b)| {
                    for (w, c) in b {
                        *a.entry(w).or_default() += c;
                    }
                    (na + nb, a)
                },
            );
        if n_docs == 0 {
            return Err(Error::InsufficientData("TF-IDF corpus has no non-empty lines".into()));
        }
        Self::from_counts(n_docs, df)
    }

    /// Trains on a corpus file with one sentence per line.
    pub fn train(corpus: impl AsRef<Path>) -> Result<Self> {
        let path = corpus.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        Self::from_documents(&lines)
    }

    pub fn n_docs(&self) -> u64 {
        self.n_docs
    }

    pub fn vocab_size(&self) -> usize {
        self.df.len()
    }

    pub fn df(&self, word: &str) -> Option<u64> {
        self.df.get(word).copied()
    }

    pub fn idf(&self, word: &str) -> f64 {
        self.idf
            .get(word)
            .copied()
            .unwrap_or_else(|| (self.n_docs as f64).log2())
    }

    pub fn weight(&self, word: &str, tf: u32) -> f64 {
        tf as f64 * self.idf(word)
    }

    /// Weight of each entry of `s.word_spans`.
    pub fn word_weights(&self, s: &TokenizedSentence) -> Vec<f64> {
        let mut tf: HashMap<&str, u32> = HashMap::new();
        for span in &s.word_spans {
            *tf.entry(span.word.as_str()).or_default() += 1;
        }
        s.word_spans
            .iter()
            .map(|span| self.weight(&span.word, tf[span.word.as_str()]))
            .collect()
    }

    /// Weight of each token: subwords inherit their word's weight, special
    /// tokens get 0.
    pub fn token_weights(&self, s: &TokenizedSentence) -> Vec<f64> {
        let words = self.word_weights(s);
        s.token_words()
            .into_iter()
            .map(|w| w.map_or(0.0, |w| words[w]))
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{HEADER_KEY}\t{}\n", self.n_docs);
        for (w, c) in &self.df {
            writeln!(out, "{w}\t{c}").unwrap();
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let n_docs = match lines.next() {
            Some((_, header)) => header
                .strip_prefix(HEADER_KEY)
                .and_then(|rest| rest.strip_prefix('\t'))
                .and_then(|n| n.trim().parse::<u64>().ok())
                .ok_or_else(|| err(1, format!("expected `{HEADER_KEY}<TAB><count>` header")))?,
            None => return Err(err(1, "empty TF-IDF file".into())),
        };
        let mut df = BTreeMap::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (word, count) = line
                .rsplit_once('\t')
                .ok_or_else(|| err(i + 1, "expected `word<TAB>df`".into()))?;
            let count: u64 = count
                .parse()
                .map_err(|e| err(i + 1, format!("bad document frequency: {e}")))?;
            if df.insert(word.to_owned(), count).is_some() {
                return Err(err(i + 1, format!("duplicate word `{word}`")));
            }
        }
        Self::from_counts(n_docs, df)
    }
}
