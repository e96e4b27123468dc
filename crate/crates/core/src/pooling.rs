//! Learning-free sentence poolers over encoder outputs.
//!
//! Averaging strategies divide by the number of included tokens. Ditto
//! variants weight each token by its diagonal attention `A_ii` and are *not*
//! normalized; cosine scoring is scale-invariant, so only the direction
//! matters. `first_last_tfidf` is a TF-IDF weighted mean of `h^0 + h^L`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::encoder::{diagonal_attention, Encoder, EncoderOutput, HeadRef};
use crate::error::{Error, Result};
use crate::model_io::{EncoderConfig, Model};
use crate::tensor::Tensor;
use crate::tfidf::TfidfModel;
use crate::tokenizer::{TokenizedSentence, DEFAULT_MAX_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    StaticAvg,
    LastAvg,
    FirstLastAvg,
    StaticDitto,
    LastDitto,
    FirstLastDitto,
    FirstLastTfidf,
}

#[derive(Clone, Copy)]
enum Layers {
    First,
    Last,
    FirstLast,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::StaticAvg,
        Strategy::LastAvg,
        Strategy::FirstLastAvg,
        Strategy::StaticDitto,
        Strategy::LastDitto,
        Strategy::FirstLastDitto,
        Strategy::FirstLastTfidf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::StaticAvg => "static_avg",
            Strategy::LastAvg => "last_avg",
            Strategy::FirstLastAvg => "first_last_avg",
            Strategy::StaticDitto => "static_ditto",
            Strategy::LastDitto => "last_ditto",
            Strategy::FirstLastDitto => "first_last_ditto",
            Strategy::FirstLastTfidf => "first_last_tfidf",
        }
    }

    pub fn is_ditto(self) -> bool {
        matches!(self, Strategy::StaticDitto | Strategy::LastDitto | Strategy::FirstLastDitto)
    }

    fn layers(self) -> Layers {
        match self {
            Strategy::StaticAvg | Strategy::StaticDitto => Layers::First,
            Strategy::LastAvg | Strategy::LastDitto => Layers::Last,
            _ => Layers::FirstLast,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Strategy::ALL.iter().map(|s| s.name()).collect();
                Error::Spec(format!("unknown strategy `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// A strategy plus the parameters it needs.
///
/// Compact form: `first_last_avg`, `first_last_ditto@1-10`,
/// `first_last_tfidf:weights.tsv`.
#[derive(Debug, Clone)]
pub struct PoolingSpec {
    pub strategy: Strategy,
    pub head: Option<HeadRef>,
    pub tfidf: Option<Arc<TfidfModel>>,
    /// Where `tfidf` was loaded from, kept for display.
    pub tfidf_source: Option<PathBuf>,
    /// Whether `[CLS]`/`[SEP]` take part in the sums.
    pub include_special_tokens: bool,
}

impl PoolingSpec {
    pub fn new(strategy: Strategy) -> Result<Self> {
        let spec = Self {
            strategy,
            head: None,
            tfidf: None,
            tfidf_source: None,
            include_special_tokens: true,
        };
        if strategy.is_ditto() {
            return Err(Error::Spec(format!("{strategy} requires a head (`{strategy}@<layer>-<head>`)")));
        }
        if strategy == Strategy::FirstLastTfidf {
            return Err(Error::Spec(format!("{strategy} requires TF-IDF weights")));
        }
        Ok(spec)
    }

    pub fn ditto(strategy: Strategy, head: HeadRef) -> Result<Self> {
        if !strategy.is_ditto() {
            return Err(Error::Spec(format!("{strategy} does not take a head")));
        }
        Ok(Self {
            strategy,
            head: Some(head),
            tfidf: None,
            tfidf_source: None,
            include_special_tokens: true,
        })
    }

    pub fn tfidf(model: Arc<TfidfModel>, source: Option<PathBuf>) -> Self {
        Self {
            strategy: Strategy::FirstLastTfidf,
            head: None,
            tfidf: Some(model),
            tfidf_source: source,
            include_special_tokens: true,
        }
    }

    pub fn with_special_tokens(mut self, include: bool) -> Self {
        self.include_special_tokens = include;
        self
    }

    /// Parses the compact form, loading TF-IDF weights from disk if named.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some((name, head)) = s.split_once('@') {
            return Self::ditto(name.parse()?, head.parse()?);
        }
        if let Some((name, path)) = s.split_once(':') {
            let strategy: Strategy = name.parse()?;
            if strategy != Strategy::FirstLastTfidf {
                return Err(Error::Spec(format!("{strategy} does not take a weights file")));
            }
            let path = PathBuf::from(path);
            let model = TfidfModel::load(&path)?;
            return Ok(Self::tfidf(Arc::new(model), Some(path)));
        }
        Self::new(s.parse()?)
    }

    /// Checks the spec against a model's dimensions.
    pub fn validate(&self, cfg: &EncoderConfig) -> Result<()> {
        match (self.strategy.is_ditto(), self.head) {
            (true, None) => return Err(Error::Spec(format!("{} requires a head", self.strategy))),
            (false, Some(_)) => return Err(Error::Spec(format!("{} does not take a head", self.strategy))),
            (true, Some(h)) => h.check(cfg)?,
            _ => {}
        }
        if self.strategy == Strategy::FirstLastTfidf && self.tfidf.is_none() {
            return Err(Error::Spec("first_last_tfidf requires TF-IDF weights".into()));
        }
        Ok(())
    }
}

impl fmt::Display for PoolingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.strategy)?;
        if let Some(h) = self.head {
            write!(f, "@{h}")?;
        }
        if let Some(p) = &self.tfidf_source {
            write!(f, ":{}", p.display())?;
        }
        Ok(())
    }
}

impl FromStr for PoolingSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// Per-token weights and the overall scale applied to the weighted sum.
fn token_weights(out: &EncoderOutput, spec: &PoolingSpec, s: &TokenizedSentence) -> Result<(Vec<f64>, f64)> {
    let n = out.n_tokens;
    let included = |i: usize| spec.include_special_tokens || (i != 0 && i + 1 != n);
    let n_included = (0..n).filter(|&i| included(i)).count();
    if n_included == 0 {
        return Err(Error::DegenerateInput("no tokens left to pool".into()));
    }
    let half = if matches!(spec.strategy.layers(), Layers::FirstLast) { 0.5 } else { 1.0 };
    let mask = |w: Vec<f64>| -> Vec<f64> {
        w.into_iter()
            .enumerate()
            .map(|(i, v)| if included(i) { v } else { 0.0 })
            .collect()
    };
    match spec.strategy {
        Strategy::StaticAvg | Strategy::LastAvg | Strategy::FirstLastAvg => {
            Ok((mask(vec![1.0; n]), half / n_included as f64))
        }
        Strategy::StaticDitto | Strategy::LastDitto | Strategy::FirstLastDitto => {
            let head = spec
                .head
                .ok_or_else(|| Error::Spec(format!("{} requires a head", spec.strategy)))?;
            let diag = diagonal_attention(out, head)?;
            Ok((mask(diag.into_iter().map(f64::from).collect()), half))
        }
        Strategy::FirstLastTfidf => {
            let tfidf = spec
                .tfidf
                .as_ref()
                .ok_or_else(|| Error::Spec("first_last_tfidf requires TF-IDF weights".into()))?;
            let w = mask(tfidf.token_weights(s));
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(Error::DegenerateInput(
                    "all TF-IDF weights are zero for this sentence".into(),
                ));
            }
            Ok((w, half / total))
        }
    }
}

/// Pools one encoded sentence into a `d`-dimensional vector.
pub fn pool(out: &EncoderOutput, spec: &PoolingSpec, s: &TokenizedSentence) -> Result<Tensor> {
    if s.n_tokens() != out.n_tokens {
        return Err(Error::Shape {
            op: "pool",
            left: vec![s.n_tokens()],
            right: vec![out.n_tokens],
        });
    }
    let (weights, scale) = token_weights(out, spec, s)?;
    let layers: Vec<&Tensor> = match spec.strategy.layers() {
        Layers::First => vec![out.first_hidden()],
        Layers::Last => vec![out.last_hidden()],
        Layers::FirstLast => vec![out.first_hidden(), out.last_hidden()],
    };
    let d = layers[0].cols();
    let mut acc = vec![0.0f64; d];
    for h in layers {
        for (row, &w) in h.iter_rows().zip(&weights) {
            if w == 0.0 {
                continue;
            }
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += w * v as f64;
            }
        }
    }
    Ok(Tensor::vector(acc.into_iter().map(|v| (v * scale) as f32).collect()))
}

#[derive(Debug, Clone, Copy)]
pub struct EmbedOptions {
    pub batch_size: usize,
    pub max_len: usize,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

/// Batches per window in [`encode_corpus`].
const WINDOW_BATCHES: usize = 8;

/// Runs every sentence through the encoder and reduces each output with `map`
/// right after its batch, so full activations never pile up. Sentences are
/// taken in windows of a few batches, sorted by length inside each window,
/// and the mapped values reach `sink` in input order.
pub fn encode_corpus<S, T, M, K>(
    sentences: &[S],
    model: &Model,
    opts: EmbedOptions,
    capture_attention: bool,
    map: M,
    mut sink: K,
) -> Result<()>
where
    S: AsRef<str>,
    T: Send,
    M: Fn(&TokenizedSentence, &EncoderOutput) -> Result<T> + Sync,
    K: FnMut(usize, T) -> Result<()>,
{
    let mut encoder = Encoder::new(&model.config, &model.weights);
    if !capture_attention {
        encoder = encoder.without_attention();
    }
    let batch_size = opts.batch_size.max(1);
    let window = batch_size * WINDOW_BATCHES;
    for (w, chunk) in sentences.chunks(window).enumerate() {
        let offset = w * window;
        let tokens = chunk
            .iter()
            .enumerate()
            .map(|(i, s)| model.encode(s.as_ref(), opts.max_len).map_err(|e| Error::at_sentence(offset + i, e)))
            .collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..tokens.len()).collect();
        order.sort_by_key(|&i| tokens[i].n_tokens());

        let mut slots: Vec<Option<T>> = (0..tokens.len()).map(|_| None).collect();
        for batch in order.chunks(batch_size) {
            let ids: Vec<&[u32]> = batch.iter().map(|&i| tokens[i].ids.as_slice()).collect();
            let outs = encoder.forward_ids(&ids).map_err(|e| match e {
                Error::AtSentence { index, source } => Error::AtSentence {
                    index: offset + batch[index],
                    source,
                },
                other => other,
            })?;
            let mapped = batch
                .par_iter()
                .zip(outs.par_iter())
                .map(|(&i, out)| map(&tokens[i], out).map_err(|e| Error::at_sentence(offset + i, e)))
                .collect::<Result<Vec<_>>>()?;
            for (&i, value) in batch.iter().zip(mapped) {
                slots[i] = Some(value);
            }
        }
        for (i, value) in slots.into_iter().enumerate() {
            sink(offset + i, value.expect("every sentence mapped"))?;
        }
    }
    Ok(())
}

/// Pools every sentence; row `i` of the result belongs to `sentences[i]`.
pub fn embed_corpus<S: AsRef<str>>(
    sentences: &[S],
    model: &Model,
    spec: &PoolingSpec,
    opts: EmbedOptions,
) -> Result<Tensor> {
    spec.validate(&model.config)?;
    let d = model.config.hidden_size;
    let mut data = Vec::with_capacity(sentences.len() * d);
    encode_corpus(
        sentences,
        model,
        opts,
        spec.strategy.is_ditto(),
        |s, out| pool(out, spec, s),
        |_, v| {
            data.extend_from_slice(v.data());
            Ok(())
        },
    )?;
    Tensor::new(vec![sentences.len(), d], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::cosine;
    use crate::testing::random_model;
    use proptest::prelude::{prop_assert, prop_assume, proptest};

    fn encoded(model: &Model, text: &str) -> (TokenizedSentence, EncoderOutput) {
        let s = model.encode(text, 64).unwrap();
        let out = Encoder::new(&model.config, &model.weights).forward(&s).unwrap();
        (s, out)
    }

    fn with_uniform_attention(out: &EncoderOutput, value: f32) -> EncoderOutput {
        let mut out = out.clone();
        let n = out.n_tokens;
        for layer in &mut out.attentions {
            for a in layer {
                *a = Tensor::new(vec![n, n], vec![value; n * n]).unwrap();
            }
        }
        out
    }

    #[test]
    fn spec_parsing_and_display() {
        let s: PoolingSpec = "first_last_ditto@1-10".parse().unwrap();
        assert_eq!(s.strategy, Strategy::FirstLastDitto);
        assert_eq!(s.head, Some(HeadRef::new(1, 10)));
        assert_eq!(s.to_string(), "first_last_ditto@1-10");
        assert_eq!("last_avg".parse::<PoolingSpec>().unwrap().to_string(), "last_avg");
        assert!("first_last_ditto".parse::<PoolingSpec>().is_err());
        assert!("last_avg@1-1".parse::<PoolingSpec>().is_err());
        assert!("first_last_tfidf".parse::<PoolingSpec>().is_err());
        assert!("max_pool".parse::<PoolingSpec>().is_err());
        assert!("first_last_tfidf:/no/such/file.tsv".parse::<PoolingSpec>().is_err());
    }

    #[test]
    fn head_out_of_range_is_rejected() {
        let model = random_model(0);
        let spec = PoolingSpec::ditto(Strategy::LastDitto, HeadRef::new(9, 1)).unwrap();
        assert!(spec.validate(&model.config).is_err());
    }

    #[test]
    fn uniform_attention_reduces_ditto_to_average() {
        let model = random_model(1);
        let (s, out) = encoded(&model, "the cat sat on the mat.");
        let n = out.n_tokens as f32;
        let uniform = with_uniform_attention(&out, 1.0 / n);
        for (ditto, avg) in [
            (Strategy::FirstLastDitto, Strategy::FirstLastAvg),
            (Strategy::StaticDitto, Strategy::StaticAvg),
            (Strategy::LastDitto, Strategy::LastAvg),
        ] {
            let d = pool(&uniform, &PoolingSpec::ditto(ditto, HeadRef::new(2, 1)).unwrap(), &s).unwrap();
            let a = pool(&uniform, &PoolingSpec::new(avg).unwrap(), &s).unwrap();
            assert!((cosine(&d, &a).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_included_token_returns_its_vectors() {
        let model = random_model(2);
        let (s, out) = encoded(&model, "dog");
        assert_eq!(s.n_tokens(), 3);
        let h0 = out.first_hidden().row(1);
        let hl = out.last_hidden().row(1);
        let pooled = |st| {
            pool(&out, &PoolingSpec::new(st).unwrap().with_special_tokens(false), &s)
                .unwrap()
                .into_data()
        };
        assert_eq!(pooled(Strategy::StaticAvg), h0);
        assert_eq!(pooled(Strategy::LastAvg), hl);
        let fl: Vec<f32> = h0.iter().zip(hl).map(|(a, b)| (a + b) / 2.0).collect();
        let got = pooled(Strategy::FirstLastAvg);
        assert!(got.iter().zip(&fl).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn excluding_specials_on_empty_sentence_is_degenerate() {
        let model = random_model(3);
        let (s, out) = encoded(&model, "");
        assert!(s.is_degenerate());
        let spec = PoolingSpec::new(Strategy::LastAvg).unwrap().with_special_tokens(false);
        assert!(matches!(pool(&out, &spec, &s), Err(Error::DegenerateInput(_))));
        // with specials the two boundary tokens are pooled
        assert!(pool(&out, &spec.with_special_tokens(true), &s).is_ok());
    }

    #[test]
    fn tfidf_pooling_ignores_specials_and_weights_words() {
        let model = random_model(4);
        let (s, out) = encoded(&model, "the cat");
        let tfidf = TfidfModel::from_documents(&["the cat", "the dog", "the bird", "the man"]).unwrap();
        let spec = PoolingSpec::tfidf(Arc::new(tfidf), None);
        let got = pool(&out, &spec, &s).unwrap();
        // "the" has idf 0, so only "cat" (token 2) contributes
        let want: Vec<f32> = out
            .first_hidden()
            .row(2)
            .iter()
            .zip(out.last_hidden().row(2))
            .map(|(a, b)| (a + b) / 2.0)
            .collect();
        assert!(got.data().iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-6));

        let all_common = TfidfModel::from_documents(&["the", "the"]).unwrap();
        let spec = PoolingSpec::tfidf(Arc::new(all_common), None);
        let (s, out) = encoded(&model, "the");
        assert!(matches!(pool(&out, &spec, &s), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn embed_corpus_preserves_order_and_matches_pool() {
        let model = random_model(5);
        let spec = PoolingSpec::ditto(Strategy::FirstLastDitto, HeadRef::new(1, 2)).unwrap();
        let sentences = ["a big red car runs fast on the road.", "dog", "the cat sat", "birds fly over"];
        let opts = EmbedOptions {
            batch_size: 2,
            max_len: 64,
        };
        let m = embed_corpus(&sentences, &model, &spec, opts).unwrap();
        for (i, text) in sentences.iter().enumerate() {
            let (s, out) = encoded(&model, text);
            assert_eq!(m.row(i), pool(&out, &spec, &s).unwrap().data());
        }
        let reversed: Vec<&str> = sentences.iter().rev().copied().collect();
        let r = embed_corpus(&reversed, &model, &spec, opts).unwrap();
        for i in 0..sentences.len() {
            assert_eq!(m.row(i), r.row(sentences.len() - 1 - i));
        }
    }

    #[test]
    fn embed_corpus_reports_failing_sentence() {
        let model = random_model(6);
        let spec = PoolingSpec::new(Strategy::LastAvg).unwrap().with_special_tokens(false);
        let err = embed_corpus(&["the cat", "", "dog"], &model, &spec, EmbedOptions::default()).unwrap_err();
        assert!(matches!(err, Error::AtSentence { index: 1, .. }), "{err}");
    }

    proptest! {
        #[test]
        fn ditto_cosines_invariant_to_weight_scale(scale in 0.01f32..100.0) {
            let model = random_model(7);
            let spec = PoolingSpec::ditto(Strategy::FirstLastDitto, HeadRef::new(1, 1)).unwrap();
            let (sa, oa) = encoded(&model, "the cat sat on the mat.");
            let (sb, ob) = encoded(&model, "a dog runs over the big road");
            let base = cosine(&pool(&oa, &spec, &sa).unwrap(), &pool(&ob, &spec, &sb).unwrap()).unwrap();
            let scaled = |o: &EncoderOutput| {
                let mut o = o.clone();
                for l in &mut o.attentions { for a in l { *a = a.scale(scale); } }
                o
            };
            let c = cosine(&pool(&scaled(&oa), &spec, &sa).unwrap(), &pool(&scaled(&ob), &spec, &sb).unwrap()).unwrap();
            prop_assert!((base - c).abs() < 1e-6);
        }

        #[test]
        fn pooling_is_linear_in_hidden_states(alpha in -3.0f32..3.0) {
            let model = random_model(8);
            let spec = PoolingSpec::ditto(Strategy::FirstLastDitto, HeadRef::new(2, 3)).unwrap();
            let (s, out) = encoded(&model, "a man plays the guitar!");
            let (_, other) = encoded(&model, "the red car runs fast.");
            // same token count, so hidden states can be mixed row by row
            prop_assume!(other.n_tokens == out.n_tokens);
            let mut mixed = out.clone();
            for (m, o) in mixed.hidden.iter_mut().zip(&other.hidden) {
                *m = m.add(&o.scale(alpha)).unwrap();
            }
            let mut other_w = other.clone();
            other_w.attentions = out.attentions.clone();
            let lhs = pool(&mixed, &spec, &s).unwrap();
            let rhs = pool(&out, &spec, &s).unwrap().add(&pool(&other_w, &spec, &s).unwrap().scale(alpha)).unwrap();
            for (a, b) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((a - b).abs() < 1e-4);
            }
        }
    }
}
