//! Encoder outputs against reference activations dumped from a float64
//! Hugging Face `BertModel` with the same weights.

mod common;

use common::*;
use ditto_core::tokenizer::DEFAULT_MAX_LEN;
use ditto_core::Encoder;

const TOL: f32 = 1e-4;

#[test]
fn tokenization_matches_reference_ids() {
    let model = tiny_model();
    for s in oracle_sentences() {
        let t = model.encode(&s.text, DEFAULT_MAX_LEN).unwrap();
        assert_eq!(t.ids, s.ids, "{}", s.text);
    }
}

#[test]
fn hidden_states_and_attentions_match_reference() {
    let model = tiny_model();
    let enc = Encoder::new(&model.config, &model.weights);
    for (i, s) in oracle_sentences().iter().enumerate() {
        let file = format!("forward_{i}.safetensors");
        let out = enc.forward_ids(&[&s.ids]).unwrap().pop().unwrap();
        for (l, h) in out.hidden.iter().enumerate() {
            let want = oracle_tensor(&file, &format!("hidden.{l}"));
            assert_eq!(h.shape(), want.shape());
            let diff = max_abs_diff(h.data(), want.data());
            assert!(diff <= TOL, "sentence {i} hidden {l}: {diff}");
        }
        for (l, heads) in out.attentions.iter().enumerate() {
            let want = oracle_tensor(&file, &format!("attention.{}", l + 1));
            let got: Vec<f32> = heads.iter().flat_map(|a| a.data().to_vec()).collect();
            let diff = max_abs_diff(&got, want.data());
            assert!(diff <= TOL, "sentence {i} attention {}: {diff}", l + 1);
        }
    }
}

#[test]
fn batched_forward_matches_single_sentences() {
    let model = tiny_model();
    let enc = Encoder::new(&model.config, &model.weights);
    let sentences = oracle_sentences();
    let ids: Vec<&[u32]> = sentences.iter().map(|s| s.ids.as_slice()).collect();
    let batched = enc.forward_ids(&ids).unwrap();
    for (s, b) in ids.iter().zip(&batched) {
        let single = enc.forward_ids(&[s]).unwrap().pop().unwrap();
        assert_eq!(single.hidden, b.hidden);
        assert_eq!(single.attentions, b.attentions);
    }
}

#[test]
fn dumped_activations_use_reference_layout() {
    let model = tiny_model();
    let s = &oracle_sentences()[1];
    let out = Encoder::new(&model.config, &model.weights).forward_ids(&[&s.ids]).unwrap().pop().unwrap();
    let tensors = out.to_tensors();
    let want = ditto_core::container::read_container(fixtures().join("oracle/forward_1.safetensors")).unwrap();
    for (name, t) in &want.tensors {
        if name == "ids" {
            continue;
        }
        let got = &tensors[name];
        assert_eq!(got.shape(), t.shape(), "{name}");
        assert!(max_abs_diff(got.data(), t.data()) <= TOL, "{name}");
    }
}
