//! Perturbed masking.
//!
//! For real (non-special) positions `i`, `j` of a sentence, `F[i][j]` is the
//! Euclidean distance between the representation of token `i` with only `i`
//! masked and with both `i` and `j` masked. Rows are the predicted token,
//! columns the additionally masked one. Masking never touches `[CLS]`/`[SEP]`,
//! and they have no row or column in `F`.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::export::write_matrix_csv;
use crate::metrics::{pearson, spearman};
use crate::model_io::Model;
use crate::tensor::Tensor;
use crate::tfidf::TfidfModel;
use crate::tokenizer::{mask_positions, TokenizedSentence, DEFAULT_MAX_LEN};

#[derive(Debug, Clone)]
pub struct ImpactMatrix {
    /// `M × M` over the real tokens, in sentence order.
    pub f: Tensor,
    pub sentence: TokenizedSentence,
    /// Token index of each row/column of `f`.
    pub positions: Vec<usize>,
    pub repr_layer: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeOptions {
    /// Hidden layer the distances are measured in; `None` means the last.
    pub repr_layer: Option<usize>,
    pub batch_size: usize,
    pub max_len: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            repr_layer: None,
            batch_size: 64,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

fn resolve_layer(model: &Model, layer: Option<usize>) -> Result<usize> {
    let last = model.config.num_layers;
    match layer {
        None => Ok(last),
        Some(l) if l <= last => Ok(l),
        Some(l) => Err(Error::Index(format!("representation layer {l} outside 0..={last}"))),
    }
}

/// Computes `F` with every masked variant batched through the encoder.
pub fn impact_matrix(s: &TokenizedSentence, model: &Model, opts: ProbeOptions) -> Result<ImpactMatrix> {
    if s.is_degenerate() {
        return Err(Error::DegenerateInput(format!(
            "no real tokens to probe in {:?}",
            s.text
        )));
    }
    let layer = resolve_layer(model, opts.repr_layer)?;
    let specials = *model.text.specials();
    let positions: Vec<usize> = (1..s.sep_index()).collect();
    let m = positions.len();

    // (masked positions, position to read); stage 1 first, then stage 2
    let mut jobs: Vec<(BTreeSet<usize>, usize)> = positions.iter().map(|&i| (BTreeSet::from([i]), i)).collect();
    for &i in &positions {
        for &j in &positions {
            if i != j {
                jobs.push((BTreeSet::from([i, j]), i));
            }
        }
    }
    let masked = jobs
        .iter()
        .map(|(set, _)| mask_positions(s, set, &specials).map(|t| t.ids))
        .collect::<Result<Vec<_>>>()?;

    let encoder = Encoder::new(&model.config, &model.weights).without_attention();
    let batch = opts.batch_size.max(1);
    let reps: Vec<Vec<f32>> = masked
        .par_chunks(batch)
        .zip(jobs.par_chunks(batch))
        .map(|(ids, jobs)| {
            let refs: Vec<&[u32]> = ids.iter().map(Vec::as_slice).collect();
            let outs = encoder.forward_ids(&refs)?;
            Ok(outs
                .iter()
                .zip(jobs)
                .map(|(o, &(_, read))| o.hidden[layer].row(read).to_vec())
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let (single, pairs) = reps.split_at(m);
    let mut f = Tensor::zeros(&[m, m]);
    let mut next = pairs.iter();
    for (a, h1) in single.iter().enumerate() {
        for b in 0..m {
            if a == b {
                continue;
            }
            let h2 = next.next().expect("one pair job per off-diagonal entry");
            f.row_mut(a)[b] = euclidean(h1, h2) as f32;
        }
    }
    Ok(ImpactMatrix {
        f,
        sentence: s.clone(),
        positions,
        repr_layer: layer,
    })
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Column means `(1/M) Σ_i F[i][j]`, averaged over the tokens of each word.
pub fn mean_impact(m: &ImpactMatrix) -> Vec<f64> {
    let n = m.positions.len();
    let column_means: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| m.f.row(i)[j] as f64).sum::<f64>() / n as f64)
        .collect();
    let mut per_token = vec![0.0; m.sentence.n_tokens()];
    for (&p, v) in m.positions.iter().zip(column_means) {
        per_token[p] = v;
    }
    m.sentence.word_means(&per_token)
}

/// Pearson and Spearman correlation between per-word impact and TF-IDF
/// weight, pooled over every word of every non-degenerate sentence.
pub fn impact_tfidf_correlation<S: AsRef<str>>(
    corpus: &[S],
    model: &Model,
    tfidf: &TfidfModel,
    opts: ProbeOptions,
) -> Result<(f64, f64)> {
    let mut impact = Vec::new();
    let mut weight = Vec::new();
    let mut skipped = 0;
    for (i, text) in corpus.iter().enumerate() {
        let s = model.encode(text.as_ref(), opts.max_len).map_err(|e| Error::at_sentence(i, e))?;
        if s.is_degenerate() {
            skipped += 1;
            continue;
        }
        let m = impact_matrix(&s, model, opts).map_err(|e| Error::at_sentence(i, e))?;
        impact.extend(mean_impact(&m));
        weight.extend(tfidf.word_weights(&s));
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} sentences without real tokens");
    }
    correlate(&impact, &weight)
}

/// `(pearson, spearman)` of two paired score lists.
pub fn correlate(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    Ok((pearson(a, b)?, spearman(a, b)?))
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    sentence: &'a str,
    repr_layer: usize,
    tokens: Vec<String>,
    positions: &'a [usize],
    words: Vec<&'a str>,
    mean_impact: Vec<f64>,
}

/// Writes `F` as CSV plus a JSON file naming the tokens on its axes.
pub fn write_impact(m: &ImpactMatrix, model: &Model, csv_path: &Path, json_path: &Path) -> Result<()> {
    write_matrix_csv(csv_path, &m.f)?;
    let sidecar = Sidecar {
        sentence: &m.sentence.text,
        repr_layer: m.repr_layer,
        tokens: m
            .positions
            .iter()
            .map(|&p| model.text.token_text(m.sentence.ids[p]))
            .collect(),
        positions: &m.positions,
        words: m.sentence.word_spans.iter().map(|w| w.word.as_str()).collect(),
        mean_impact: mean_impact(m),
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(json_path, json + "\n").map_err(|e| Error::io(json_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::random_model;
    use crate::tokenizer::WordSpan;

    /// Direct definition: one forward pass per masked variant, no batching.
    fn two_loop(s: &TokenizedSentence, model: &Model, layer: usize) -> Tensor {
        let enc = Encoder::new(&model.config, &model.weights);
        let specials = model.text.specials();
        let real: Vec<usize> = (1..s.sep_index()).collect();
        let mut f = Tensor::zeros(&[real.len(), real.len()]);
        for (a, &i) in real.iter().enumerate() {
            let x1 = mask_positions(s, &BTreeSet::from([i]), specials).unwrap();
            let h1 = enc.forward(&x1).unwrap().hidden[layer].row(i).to_vec();
            for (b, &j) in real.iter().enumerate() {
                let x2 = mask_positions(&x1, &BTreeSet::from([j]), specials).unwrap();
                let h2 = enc.forward(&x2).unwrap().hidden[layer].row(i).to_vec();
                f.row_mut(a)[b] = euclidean(&h1, &h2) as f32;
            }
        }
        f
    }

    #[test]
    fn matches_unbatched_oracle_for_any_batch_size() {
        let model = random_model(11);
        let s = model.encode("the big dog sat on the mat", 64).unwrap();
        let want = two_loop(&s, &model, 2);
        for batch_size in [1, 5, 64] {
            let m = impact_matrix(
                &s,
                &model,
                ProbeOptions {
                    batch_size,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(m.repr_layer, 2);
            for (a, b) in m.f.data().iter().zip(want.data()) {
                assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn diagonal_is_zero_and_entries_nonnegative() {
        let model = random_model(12);
        let s = model.encode("a cat", 64).unwrap();
        let m = impact_matrix(&s, &model, ProbeOptions::default()).unwrap();
        assert_eq!(m.f.shape(), [2, 2]);
        assert_eq!(m.f.row(0)[0], 0.0);
        assert_eq!(m.f.row(1)[1], 0.0);
        assert!(m.f.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn degenerate_sentence_and_bad_layer() {
        let model = random_model(13);
        let empty = model.encode("", 64).unwrap();
        assert!(impact_matrix(&empty, &model, ProbeOptions::default()).is_err());
        let s = model.encode("cat", 64).unwrap();
        let opts = ProbeOptions {
            repr_layer: Some(3),
            ..Default::default()
        };
        assert!(impact_matrix(&s, &model, opts).is_err());
    }

    fn synthetic(f: Tensor, spans: &[(usize, usize)]) -> ImpactMatrix {
        let n = f.rows();
        let mut ids = vec![2u32];
        ids.extend(std::iter::repeat_n(7, n));
        ids.push(3);
        ImpactMatrix {
            f,
            sentence: TokenizedSentence {
                text: String::new(),
                ids,
                word_spans: spans
                    .iter()
                    .map(|&(start, end)| WordSpan {
                        word: "w".into(),
                        start,
                        end,
                    })
                    .collect(),
            },
            positions: (1..=n).collect(),
            repr_layer: 0,
        }
    }

    #[test]
    fn mean_impact_closed_forms() {
        let c = 0.7f32;
        let n = 4;
        let mut f = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    f.row_mut(i)[j] = c;
                }
            }
        }
        let m = synthetic(f, &[(1, 2), (2, 3), (3, 4), (4, 5)]);
        for v in mean_impact(&m) {
            assert!((v - c as f64 * 3.0 / 4.0).abs() < 1e-7);
        }

        let single = synthetic(Tensor::zeros(&[1, 1]), &[(1, 2)]);
        assert_eq!(mean_impact(&single), vec![0.0]);

        // a two-piece word averages its column means
        let f = Tensor::from_rows(&[[0.0f32, 2.0, 4.0], [1.0, 0.0, 3.0], [5.0, 6.0, 0.0]]).unwrap();
        let m = synthetic(f, &[(1, 2), (2, 4)]);
        let got = mean_impact(&m);
        assert!((got[0] - 2.0).abs() < 1e-12);
        assert!((got[1] - (8.0 / 3.0 + 7.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn correlate_identical_and_negated() {
        let w = [0.5, 2.0, 1.0, 3.5];
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        let (p, s) = correlate(&w, &w).unwrap();
        assert!((p - 1.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        let (p, s) = correlate(&w, &neg).unwrap();
        assert!((p + 1.0).abs() < 1e-12 && (s + 1.0).abs() < 1e-12);
    }

    #[test]
    fn corpus_correlation_is_order_independent() {
        let model = random_model(14);
        let corpus = ["the cat sat on the mat.", "a dog runs fast", "small birds fly over the road"];
        let tfidf = TfidfModel::from_documents(&corpus).unwrap();
        let a = impact_tfidf_correlation(&corpus, &model, &tfidf, ProbeOptions::default()).unwrap();
        let rev: Vec<&str> = corpus.iter().rev().copied().collect();
        let b = impact_tfidf_correlation(&rev, &model, &tfidf, ProbeOptions::default()).unwrap();
        assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
    }
}
