//! BERT-style encoder forward pass.
//!
//! Returns every hidden layer `h^0..h^L` and, optionally, every head's
//! post-softmax attention matrix. Batches are padded to the longest sentence;
//! padded key columns get [`MASK_SENTINEL`] before the softmax and all returned
//! tensors are trimmed back to each sentence's true length, so a sentence's
//! output does not depend on what it was batched with.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_io::{EncoderConfig, Linear, ModelWeights, Norm};
use crate::tensor::{dot, gelu_scalar, layer_norm_row, linear, softmax_in_place, Tensor, MASK_SENTINEL};
use crate::tokenizer::TokenizedSentence;

/// 1-based `(layer, head)` coordinate, written `l-h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct HeadRef {
    pub layer: usize,
    pub head: usize,
}

impl HeadRef {
    pub fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }

    pub fn check(&self, cfg: &EncoderConfig) -> Result<()> {
        if self.layer == 0 || self.layer > cfg.num_layers || self.head == 0 || self.head > cfg.num_heads {
            return Err(Error::Index(format!(
                "head {self} outside 1-1..{}-{}",
                cfg.num_layers, cfg.num_heads
            )));
        }
        Ok(())
    }

    /// All heads of a model in (layer, head) order.
    pub fn all(cfg: &EncoderConfig) -> Vec<HeadRef> {
        (1..=cfg.num_layers)
            .flat_map(|l| (1..=cfg.num_heads).map(move |h| HeadRef::new(l, h)))
            .collect()
    }
}

impl fmt::Display for HeadRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.layer, self.head)
    }
}

impl FromStr for HeadRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Spec(format!("head must look like `<layer>-<head>`, got `{s}`"));
        let (l, h) = s.split_once('-').ok_or_else(bad)?;
        let layer = l.trim().parse().map_err(|_| bad())?;
        let head = h.trim().parse().map_err(|_| bad())?;
        if layer == 0 || head == 0 {
            return Err(Error::Spec(format!("head coordinates are 1-based, got `{s}`")));
        }
        Ok(HeadRef { layer, head })
    }
}

impl From<HeadRef> for String {
    fn from(h: HeadRef) -> String {
        h.to_string()
    }
}

impl TryFrom<String> for HeadRef {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `L + 1` tensors of shape `N × d`; `hidden[0]` is the embedding output.
    pub hidden: Vec<Tensor>,
    /// `attentions[l - 1][h - 1]` is head `l-h`'s `N × N` matrix. Empty when
    /// the encoder ran without attention capture.
    pub attentions: Vec<Vec<Tensor>>,
    pub n_tokens: usize,
}

impl EncoderOutput {
    pub fn num_layers(&self) -> usize {
        self.hidden.len() - 1
    }

    pub fn first_hidden(&self) -> &Tensor {
        &self.hidden[0]
    }

    pub fn last_hidden(&self) -> &Tensor {
        self.hidden.last().expect("at least the embedding layer")
    }

    pub fn attention(&self, head: HeadRef) -> Result<&Tensor> {
        self.attentions
            .get(head.layer.wrapping_sub(1))
            .and_then(|layer| layer.get(head.head.wrapping_sub(1)))
            .ok_or_else(|| {
                Error::Index(format!(
                    "head {head} not available ({} layers × {} heads captured)",
                    self.attentions.len(),
                    self.attentions.first().map_or(0, Vec::len)
                ))
            })
    }
}

impl EncoderOutput {
    /// `hidden.{l}` (`N × d`) for every layer and `attention.{l}` (`H × N × N`,
    /// 1-based layer) when attentions were captured.
    pub fn to_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (l, h) in self.hidden.iter().enumerate() {
            out.insert(format!("hidden.{l}"), h.clone());
        }
        let n = self.n_tokens;
        for (l, heads) in self.attentions.iter().enumerate() {
            let data: Vec<f32> = heads.iter().flat_map(|a| a.data().iter().copied()).collect();
            let t = Tensor::new(vec![heads.len(), n, n], data).expect("H × N × N");
            out.insert(format!("attention.{}", l + 1), t);
        }
        out
    }
}

/// `[A_11, …, A_NN]` for the given head.
pub fn diagonal_attention(out: &EncoderOutput, head: HeadRef) -> Result<Vec<f32>> {
    let a = out.attention(head)?;
    let n = out.n_tokens;
    Ok((0..n).map(|i| a.data()[i * n + i]).collect())
}

/// Borrowing view of a model's config and weights.
#[derive(Clone, Copy)]
pub struct Encoder<'m> {
    cfg: &'m EncoderConfig,
    weights: &'m ModelWeights,
    capture_attention: bool,
}

impl<'m> Encoder<'m> {
    pub fn new(cfg: &'m EncoderConfig, weights: &'m ModelWeights) -> Self {
        Self {
            cfg,
            weights,
            capture_attention: true,
        }
    }

    /// Skip storing attention matrices (hidden states only).
    pub fn without_attention(mut self) -> Self {
        self.capture_attention = false;
        self
    }

    pub fn config(&self) -> &EncoderConfig {
        self.cfg
    }

    pub fn forward(&self, s: &TokenizedSentence) -> Result<EncoderOutput> {
        let mut out = self.forward_ids(&[s.ids.as_slice()])?;
        Ok(out.pop().expect("one output per input"))
    }

    pub fn forward_batch(&self, sentences: &[TokenizedSentence]) -> Result<Vec<EncoderOutput>> {
        let ids: Vec<&[u32]> = sentences.iter().map(|s| s.ids.as_slice()).collect();
        self.forward_ids(&ids)
    }

    pub fn forward_ids(&self, batch: &[&[u32]]) -> Result<Vec<EncoderOutput>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let cfg = self.cfg;
        for (i, ids) in batch.iter().enumerate() {
            if ids.is_empty() {
                return Err(Error::at_sentence(i, Error::DegenerateInput("empty id sequence".into())));
            }
            if ids.len() > cfg.max_tokens() {
                return Err(Error::at_sentence(
                    i,
                    Error::SequenceTooLong {
                        n_tokens: ids.len(),
                        max: cfg.max_tokens(),
                    },
                ));
            }
            if let Some(bad) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
                return Err(Error::at_sentence(
                    i,
                    Error::Index(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)),
                ));
            }
        }
        let lens: Vec<usize> = batch.iter().map(|ids| ids.len()).collect();
        let width = *lens.iter().max().unwrap();

        let mut x = self.embed(batch, width)?;
        let mut hidden = vec![x.clone()];
        let mut attentions: Vec<Vec<Vec<Tensor>>> = Vec::new();
        for layer in &self.weights.layers {
            let (next, attn) = self.layer_forward(layer, &x, &lens, width)?;
            x = next;
            hidden.push(x.clone());
            if self.capture_attention {
                attentions.push(attn);
            }
        }

        let mut outputs: Vec<EncoderOutput> = lens
            .iter()
            .enumerate()
            .map(|(b, &n)| EncoderOutput {
                hidden: hidden
                    .iter()
                    .map(|h| h.slice_rows(b * width, b * width + n))
                    .collect(),
                attentions: Vec::with_capacity(attentions.len()),
                n_tokens: n,
            })
            .collect();
        // attentions are laid out [layer][seq][head]; regroup per sequence
        for per_seq in attentions {
            for (out, heads) in outputs.iter_mut().zip(per_seq) {
                out.attentions.push(heads);
            }
        }
        Ok(outputs)
    }

    /// Embedding sum, layer norm and optional projection; padded rows are zero
    /// before normalization.
    fn embed(&self, batch: &[&[u32]], width: usize) -> Result<Tensor> {
        let cfg = self.cfg;
        let emb = &self.weights.embeddings;
        let e = cfg.embedding_dim();
        let mut x = Tensor::zeros(&[batch.len() * width, e]);
        for (b, ids) in batch.iter().enumerate() {
            for (t, &id) in ids.iter().enumerate() {
                let row = x.row_mut(b * width + t);
                let word = emb.word.row(id as usize);
                let pos = emb.position.row(t + cfg.position_offset);
                let seg = emb.token_type.row(0);
                for (k, slot) in row.iter_mut().enumerate() {
                    *slot = word[k] + pos[k] + seg[k];
                }
            }
        }
        norm_rows(&mut x, &emb.norm, cfg.layer_norm_eps);
        match &emb.projection {
            Some(p) => linear(&x, &p.weight, Some(&p.bias)),
            None => Ok(x),
        }
    }

    fn layer_forward(
        &self,
        w: &crate::model_io::LayerWeights,
        x: &Tensor,
        lens: &[usize],
        width: usize,
    ) -> Result<(Tensor, Vec<Vec<Tensor>>)> {
        let cfg = self.cfg;
        let (d, n_heads, dk) = (cfg.hidden_size, cfg.num_heads, cfg.head_dim());
        let q = project(x, &w.query)?;
        let k = project(x, &w.key)?;
        let v = project(x, &w.value)?;
        let scale = 1.0 / (dk as f64).sqrt();

        let jobs: Vec<(usize, usize)> = (0..lens.len())
            .flat_map(|b| (0..n_heads).map(move |h| (b, h)))
            .collect();
        let capture = self.capture_attention;
        let results: Vec<(Vec<f32>, Option<Tensor>)> = jobs
            .par_iter()
            .map(|&(b, h)| {
                let n = lens[b];
                let base = b * width;
                let cols = h * dk..(h + 1) * dk;
                let mut probs = vec![0.0f32; n * width];
                for t in 0..n {
                    let qt = &q.row(base + t)[cols.clone()];
                    let row = &mut probs[t * width..(t + 1) * width];
                    for (s, slot) in row.iter_mut().enumerate() {
                        let score = (dot(qt, &k.row(base + s)[cols.clone()]) * scale) as f32;
                        let mask = if s < n { 0.0 } else { MASK_SENTINEL };
                        *slot = score + mask;
                    }
                    softmax_in_place(row);
                }
                let mut ctx = vec![0.0f32; n * dk];
                let mut acc = vec![0.0f64; dk];
                for t in 0..n {
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    for s in 0..width {
                        let p = probs[t * width + s] as f64;
                        let vs = &v.row(base + s)[cols.clone()];
                        for (a, &vv) in acc.iter_mut().zip(vs) {
                            *a += p * vv as f64;
                        }
                    }
                    for (c, a) in ctx[t * dk..(t + 1) * dk].iter_mut().zip(&acc) {
                        *c = *a as f32;
                    }
                }
                let attn = capture.then(|| {
                    let mut trimmed = Vec::with_capacity(n * n);
                    for t in 0..n {
                        trimmed.extend_from_slice(&probs[t * width..t * width + n]);
                    }
                    Tensor::new(vec![n, n], trimmed).expect("n × n")
                });
                (ctx, attn)
            })
            .collect();

        let mut context = Tensor::zeros(&[lens.len() * width, d]);
        let mut attentions: Vec<Vec<Tensor>> = vec![Vec::with_capacity(n_heads); lens.len()];
        for (&(b, h), (ctx, attn)) in jobs.iter().zip(results) {
            for t in 0..lens[b] {
                context.row_mut(b * width + t)[h * dk..(h + 1) * dk]
                    .copy_from_slice(&ctx[t * dk..(t + 1) * dk]);
            }
            if let Some(a) = attn {
                attentions[b].push(a);
            }
        }

        let mut h1 = project(&context, &w.attention_output)?;
        add_in_place(&mut h1, x);
        norm_rows(&mut h1, &w.attention_norm, cfg.layer_norm_eps);

        let mut inter = project(&h1, &w.intermediate)?;
        inter.data_mut().iter_mut().for_each(|v| *v = gelu_scalar(*v));
        let mut out = project(&inter, &w.output)?;
        add_in_place(&mut out, &h1);
        norm_rows(&mut out, &w.output_norm, cfg.layer_norm_eps);
        Ok((out, attentions))
    }
}

fn project(x: &Tensor, l: &Linear) -> Result<Tensor> {
    linear(x, &l.weight, Some(&l.bias))
}

fn add_in_place(a: &mut Tensor, b: &Tensor) {
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
}

fn norm_rows(x: &mut Tensor, norm: &Norm, eps: f32) {
    let d = x.cols();
    for row in x.data_mut().chunks_mut(d) {
        layer_norm_row(row, norm.gamma.data(), norm.beta.data(), eps);
    }
}

pub fn forward(s: &TokenizedSentence, w: &ModelWeights, cfg: &EncoderConfig) -> Result<EncoderOutput> {
    Encoder::new(cfg, w).forward(s)
}

pub fn forward_batch(
    sentences: &[TokenizedSentence],
    w: &ModelWeights,
    cfg: &EncoderConfig,
) -> Result<Vec<EncoderOutput>> {
    Encoder::new(cfg, w).forward_batch(sentences)
}
