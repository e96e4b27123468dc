#![allow(dead_code)]

use std::path::PathBuf;

use ditto_core::container::read_container;
use ditto_core::{Model, Tensor};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn tiny_model() -> Model {
    Model::load(fixtures().join("tiny_model")).expect("tiny model fixture")
}

#[derive(serde::Deserialize)]
pub struct OracleSentence {
    pub text: String,
    pub ids: Vec<u32>,
}

pub fn oracle_sentences() -> Vec<OracleSentence> {
    let text = std::fs::read_to_string(fixtures().join("oracle/sentences.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn oracle_tensor(file: &str, name: &str) -> Tensor {
    let mut f = read_container(fixtures().join("oracle").join(file)).unwrap();
    f.tensors.remove(name).unwrap_or_else(|| panic!("{file} has no `{name}`"))
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}
