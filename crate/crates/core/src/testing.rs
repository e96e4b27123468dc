//! Small random models for unit tests.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model_io::{required_tensors, EncoderConfig, Model, ModelWeights, TextEncoder};
use crate::tensor::Tensor;
use crate::tokenizer::{SpecialIds, Vocab};

pub const SPECIALS: SpecialIds = SpecialIds {
    pad: 0,
    unk: 1,
    cls: 2,
    sep: 3,
    mask: 4,
};

pub const WORDS: &[&str] = &[
    "the", "a", "cat", "dog", "sat", "on", "mat", "man", "plays", "guitar", "red", "car", "runs", "fast", "big",
    "small", "bird", "flies", "over", "road", "##s", "##ing", ".", ",", "!",
];

pub fn random_config() -> EncoderConfig {
    EncoderConfig::from_json(
        r#"{"hidden_size": 12, "num_layers": 2, "num_heads": 3, "intermediate_size": 20,
            "vocab_size": 30, "max_position_embeddings": 24}"#,
    )
    .unwrap()
}

pub fn random_weights(cfg: &EncoderConfig, seed: u64) -> ModelWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for (name, shape) in required_tensors(cfg) {
        let n: usize = shape.iter().product();
        let is_gain = name.ends_with("LayerNorm.weight");
        let data = (0..n)
            .map(|_| {
                let v: f32 = rng.gen_range(-0.5..0.5);
                if is_gain {
                    1.0 + v * 0.2
                } else {
                    v
                }
            })
            .collect();
        tensors.insert(name, Tensor::new(shape, data).unwrap());
    }
    ModelWeights::from_tensors(tensors, cfg).unwrap().0
}

pub fn vocab() -> Vocab {
    let mut tokens: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    tokens.extend(WORDS.iter().map(|s| s.to_string()));
    Vocab::from_tokens(tokens).unwrap()
}

pub fn random_model(seed: u64) -> Model {
    let cfg = random_config();
    let weights = random_weights(&cfg, seed);
    Model::from_parts("random", cfg, weights, TextEncoder::WordPiece(vocab()))
}
