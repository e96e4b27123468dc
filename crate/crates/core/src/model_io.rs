//! Encoder configuration, weight loading and the on-disk model bundle.
//!
//! A model directory holds `config.json`, `model.safetensors` and either a
//! WordPiece `vocab.txt` or, for byte-pair models, `special_tokens.json` plus
//! `pretokenized.tsv` (`sentence<TAB>space separated ids` per line).
//!
//! Tensor names follow the reference checkpoint hierarchy, e.g.
//! `encoder.layer.3.attention.self.query.weight`. A leading `bert.`,
//! `roberta.` or `electra.` is accepted and stripped. Projection weights are
//! stored `out_features × in_features` and applied as `x·Wᵀ + b`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::container::read_container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tokenizer::{self, SpecialIds, TokenizedSentence, Vocab};

pub const CONFIG_FILE: &str = "config.json";
pub const WEIGHTS_FILE: &str = "model.safetensors";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const SPECIALS_FILE: &str = "special_tokens.json";
pub const PRETOKENIZED_FILE: &str = "pretokenized.tsv";

const NAME_PREFIXES: &[&str] = &["bert.", "roberta.", "electra."];

fn default_type_vocab() -> usize {
    2
}

fn default_eps() -> f32 {
    1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden_size: usize,
    #[serde(alias = "num_hidden_layers")]
    pub num_layers: usize,
    #[serde(alias = "num_attention_heads")]
    pub num_heads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_dim: Option<usize>,
    pub intermediate_size: usize,
    pub vocab_size: usize,
    pub max_position_embeddings: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f32,
    /// Width of the embedding tables when it differs from `hidden_size`
    /// (ELECTRA); an `embeddings_project` linear map is then required.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_size: Option<usize>,
    /// Index of the first position embedding row (2 for RoBERTa).
    #[serde(default)]
    pub position_offset: usize,
}

impl EncoderConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("intermediate_size", self.intermediate_size),
            ("vocab_size", self.vocab_size),
            ("max_position_embeddings", self.max_position_embeddings),
            ("type_vocab_size", self.type_vocab_size),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if let Some(hd) = self.head_dim {
            if hd != self.hidden_size / self.num_heads {
                return Err(Error::Config(format!(
                    "head_dim {hd} disagrees with hidden_size / num_heads = {}",
                    self.hidden_size / self.num_heads
                )));
            }
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        if self.position_offset >= self.max_position_embeddings {
            return Err(Error::Config("position_offset outside the position table".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_size.unwrap_or(self.hidden_size)
    }

    pub fn needs_projection(&self) -> bool {
        self.embedding_dim() != self.hidden_size
    }

    /// Longest sequence the position table admits.
    pub fn max_tokens(&self) -> usize {
        self.max_position_embeddings - self.position_offset
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Debug, Clone)]
pub struct EmbeddingWeights {
    pub word: Tensor,
    pub position: Tensor,
    pub token_type: Tensor,
    pub norm: Norm,
    pub projection: Option<Linear>,
}

#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attention_output: Linear,
    pub attention_norm: Norm,
    pub intermediate: Linear,
    pub output: Linear,
    pub output_norm: Norm,
}

#[derive(Debug, Clone)]
pub struct ModelWeights {
    pub embeddings: EmbeddingWeights,
    pub layers: Vec<LayerWeights>,
}

/// Every tensor the encoder needs, with its expected shape.
pub fn required_tensors(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let (d, e, i) = (cfg.hidden_size, cfg.embedding_dim(), cfg.intermediate_size);
    let mut out = vec![
        ("embeddings.word_embeddings.weight".to_string(), vec![cfg.vocab_size, e]),
        ("embeddings.position_embeddings.weight".to_string(), vec![cfg.max_position_embeddings, e]),
        ("embeddings.token_type_embeddings.weight".to_string(), vec![cfg.type_vocab_size, e]),
        ("embeddings.LayerNorm.weight".to_string(), vec![e]),
        ("embeddings.LayerNorm.bias".to_string(), vec![e]),
    ];
    if cfg.needs_projection() {
        out.push(("embeddings_project.weight".to_string(), vec![d, e]));
        out.push(("embeddings_project.bias".to_string(), vec![d]));
    }
    for l in 0..cfg.num_layers {
        let p = format!("encoder.layer.{l}.");
        let mut push = |suffix: &str, shape: Vec<usize>| out.push((format!("{p}{suffix}"), shape));
        for name in ["query", "key", "value"] {
            push(&format!("attention.self.{name}.weight"), vec![d, d]);
            push(&format!("attention.self.{name}.bias"), vec![d]);
        }
        push("attention.output.dense.weight", vec![d, d]);
        push("attention.output.dense.bias", vec![d]);
        push("attention.output.LayerNorm.weight", vec![d]);
        push("attention.output.LayerNorm.bias", vec![d]);
        push("intermediate.dense.weight", vec![i, d]);
        push("intermediate.dense.bias", vec![i]);
        push("output.dense.weight", vec![d, i]);
        push("output.dense.bias", vec![d]);
        push("output.LayerNorm.weight", vec![d]);
        push("output.LayerNorm.bias", vec![d]);
    }
    out
}

fn canonical_name(name: &str) -> String {
    let mut n = name;
    for p in NAME_PREFIXES {
        if let Some(rest) = n.strip_prefix(p) {
            n = rest;
            break;
        }
    }
    let n = n.replace("LayerNorm.gamma", "LayerNorm.weight");
    n.replace("LayerNorm.beta", "LayerNorm.bias")
}

impl ModelWeights {
    /// Validates a name → tensor map against `cfg`; returns the weights and a
    /// warning per ignored tensor.
    pub fn from_tensors(
        tensors: BTreeMap<String, Tensor>,
        cfg: &EncoderConfig,
    ) -> Result<(Self, Vec<String>)> {
        cfg.validate()?;
        let mut pool: HashMap<String, Tensor> = HashMap::with_capacity(tensors.len());
        for (name, t) in tensors {
            let canon = canonical_name(&name);
            if pool.insert(canon.clone(), t).is_some() {
                return Err(Error::Config(format!("tensor `{canon}` present more than once")));
            }
        }
        let mut taken: HashMap<String, Tensor> = HashMap::new();
        for (name, shape) in required_tensors(cfg) {
            let t = pool.remove(&name).ok_or_else(|| Error::MissingTensor(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "load_weights",
                    left: shape,
                    right: t.shape().to_vec(),
                });
            }
            if !t.is_finite() {
                return Err(Error::Config(format!("tensor `{name}` contains NaN or Inf")));
            }
            taken.insert(name, t);
        }
        let mut warnings: Vec<String> = pool
            .into_keys()
            .map(|n| format!("ignoring unused tensor `{n}`"))
            .collect();
        warnings.sort();

        let mut take = |name: &str| taken.remove(name).expect("validated above");
        let embeddings = EmbeddingWeights {
            word: take("embeddings.word_embeddings.weight"),
            position: take("embeddings.position_embeddings.weight"),
            token_type: take("embeddings.token_type_embeddings.weight"),
            norm: Norm {
                gamma: take("embeddings.LayerNorm.weight"),
                beta: take("embeddings.LayerNorm.bias"),
            },
            projection: cfg.needs_projection().then(|| Linear {
                weight: take("embeddings_project.weight"),
                bias: take("embeddings_project.bias"),
            }),
        };
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let p = format!("encoder.layer.{l}.");
            let mut lin = |stem: &str| Linear {
                weight: take(&format!("{p}{stem}.weight")),
                bias: take(&format!("{p}{stem}.bias")),
            };
            let query = lin("attention.self.query");
            let key = lin("attention.self.key");
            let value = lin("attention.self.value");
            let attention_output = lin("attention.output.dense");
            let intermediate = lin("intermediate.dense");
            let output = lin("output.dense");
            let mut norm = |stem: &str| Norm {
                gamma: take(&format!("{p}{stem}.weight")),
                beta: take(&format!("{p}{stem}.bias")),
            };
            layers.push(LayerWeights {
                query,
                key,
                value,
                attention_output,
                attention_norm: norm("attention.output.LayerNorm"),
                intermediate,
                output,
                output_norm: norm("output.LayerNorm"),
            });
        }
        Ok((Self { embeddings, layers }, warnings))
    }
}

/// Reads and validates a weight container.
pub fn load_weights(path: impl AsRef<Path>, cfg: &EncoderConfig) -> Result<(ModelWeights, Vec<String>)> {
    let file = read_container(path)?;
    ModelWeights::from_tensors(file.tensors, cfg)
}

/// Turns raw text into token ids for a particular model.
#[derive(Debug, Clone)]
pub enum TextEncoder {
    WordPiece(Vocab),
    /// Ids produced offline by the model's own tokenizer, keyed by sentence.
    Pretokenized {
        specials: SpecialIds,
        table: HashMap<String, Vec<u32>>,
    },
}

impl TextEncoder {
    pub fn specials(&self) -> &SpecialIds {
        match self {
            TextEncoder::WordPiece(v) => v.specials(),
            TextEncoder::Pretokenized { specials, .. } => specials,
        }
    }

    pub fn encode(&self, text: &str, max_len: usize) -> Result<TokenizedSentence> {
        match self {
            TextEncoder::WordPiece(v) => tokenizer::encode(text, v, max_len),
            TextEncoder::Pretokenized { specials, table } => {
                let ids = table.get(text).ok_or_else(|| {
                    Error::Index(format!("sentence not present in {PRETOKENIZED_FILE}: {text:?}"))
                })?;
                let mut s = TokenizedSentence::from_ids(text, ids.clone(), specials)?;
                if s.ids.len() > max_len {
                    s.ids.truncate(max_len.max(3) - 1);
                    s.ids.push(specials.sep);
                    s.word_spans.truncate(s.ids.len() - 2);
                }
                Ok(s)
            }
        }
    }

    /// Display form of a token id (the id itself for pre-tokenized models).
    pub fn token_text(&self, id: u32) -> String {
        match self {
            TextEncoder::WordPiece(v) => v.token(id).map_or_else(|| id.to_string(), str::to_owned),
            TextEncoder::Pretokenized { .. } => id.to_string(),
        }
    }

    pub fn load_pretokenized(specials_path: &Path, table_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(specials_path).map_err(|e| Error::io(specials_path, e))?;
        let specials: SpecialIds = serde_json::from_str(&text)?;
        let body = std::fs::read_to_string(table_path).map_err(|e| Error::io(table_path, e))?;
        let mut table = HashMap::new();
        for (lineno, line) in body.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: table_path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            let (sentence, ids) = line
                .rsplit_once('\t')
                .ok_or_else(|| parse_err("expected `sentence<TAB>ids`".into()))?;
            let ids = tokenizer::parse_id_line(ids).map_err(|e| parse_err(e.to_string()))?;
            table.insert(sentence.to_owned(), ids);
        }
        Ok(TextEncoder::Pretokenized { specials, table })
    }
}

/// A loaded model directory.
#[derive(Debug, Clone)]
pub struct Model {
    pub id: String,
    pub config: EncoderConfig,
    pub weights: ModelWeights,
    pub text: TextEncoder,
    pub warnings: Vec<String>,
}

impl Model {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let config = EncoderConfig::load(dir.join(CONFIG_FILE))?;
        let (weights, warnings) = load_weights(dir.join(WEIGHTS_FILE), &config)?;
        let vocab_path = dir.join(VOCAB_FILE);
        let text = if vocab_path.exists() {
            TextEncoder::WordPiece(Vocab::load(&vocab_path)?)
        } else {
            TextEncoder::load_pretokenized(&dir.join(SPECIALS_FILE), &dir.join(PRETOKENIZED_FILE))?
        };
        for w in &warnings {
            log::warn!("{}: {w}", dir.display());
        }
        Ok(Self {
            id: model_id(dir),
            config,
            weights,
            text,
            warnings,
        })
    }

    pub fn from_parts(id: impl Into<String>, config: EncoderConfig, weights: ModelWeights, text: TextEncoder) -> Self {
        Self {
            id: id.into(),
            config,
            weights,
            text,
            warnings: Vec::new(),
        }
    }

    pub fn encode(&self, text: &str, max_len: usize) -> Result<TokenizedSentence> {
        self.text.encode(text, max_len.min(self.config.max_tokens()))
    }
}

fn model_id(dir: &Path) -> String {
    let canon: PathBuf = dir.canonicalize().unwrap_or_else(|_| dir.to_path_buf());
    canon
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}
