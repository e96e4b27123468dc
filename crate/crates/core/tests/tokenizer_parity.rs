//! WordPiece ids against a reference BERT tokenizer on 200 sentences.

mod common;

use common::fixtures;
use ditto_core::tokenizer::{encode, Vocab, DEFAULT_MAX_LEN};

#[derive(serde::Deserialize)]
struct Case {
    text: String,
    ids: Vec<u32>,
}

#[test]
fn ids_match_reference_tokenizer() {
    let dir = fixtures().join("tokenizer");
    let vocab = Vocab::load(dir.join("vocab.txt")).unwrap();
    let body = std::fs::read_to_string(dir.join("parity.jsonl")).unwrap();
    let cases: Vec<Case> = body.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(cases.len(), 200);
    let mismatches: Vec<&str> = cases
        .iter()
        .filter(|c| encode(&c.text, &vocab, DEFAULT_MAX_LEN).unwrap().ids != c.ids)
        .map(|c| c.text.as_str())
        .collect();
    assert!(mismatches.is_empty(), "{} mismatches: {mismatches:?}", mismatches.len());
}
