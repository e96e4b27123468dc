//! Semantic textual similarity benchmarks.
//!
//! Data layout: one directory per task under a root (`STS12` … `STS16`,
//! `STSB`, `SICKR`), each holding `<subset>.<split>.tsv` files with
//! `score<TAB>sentence1<TAB>sentence2` lines and scores in `[0, 5]`.
//!
//! Scores follow the "all" setting: a task's test subsets are concatenated and
//! one Spearman correlation between cosine similarity and gold score is taken
//! per task. Reported correlations are scaled by 100.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::encoder::{diagonal_attention, HeadRef};
use crate::error::{Error, Result};
use crate::metrics::{alignment, spearman, uniformity};
use crate::model_io::Model;
use crate::pooling::{encode_corpus, pool, EmbedOptions, PoolingSpec, Strategy};
use crate::probe::correlate;
use crate::tensor::{cosine_slices, Tensor};
use crate::tfidf::TfidfModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Task {
    #[serde(rename = "STS12")]
    Sts12,
    #[serde(rename = "STS13")]
    Sts13,
    #[serde(rename = "STS14")]
    Sts14,
    #[serde(rename = "STS15")]
    Sts15,
    #[serde(rename = "STS16")]
    Sts16,
    #[serde(rename = "STS-B")]
    StsB,
    #[serde(rename = "SICK-R")]
    SickR,
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::Sts12,
        Task::Sts13,
        Task::Sts14,
        Task::Sts15,
        Task::Sts16,
        Task::StsB,
        Task::SickR,
    ];

    pub fn dir_name(self) -> &'static str {
        match self {
            Task::Sts12 => "STS12",
            Task::Sts13 => "STS13",
            Task::Sts14 => "STS14",
            Task::Sts15 => "STS15",
            Task::Sts16 => "STS16",
            Task::StsB => "STSB",
            Task::SickR => "SICKR",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Task::StsB => "STS-B",
            Task::SickR => "SICK-R",
            other => other.dir_name(),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StsExample {
    pub task: Task,
    pub subset: String,
    pub split: Split,
    pub score: f64,
    pub sent1: String,
    pub sent2: String,
}

fn parse_file(path: &Path, task: Task, subset: &str, split: Split) -> Result<Vec<StsExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let score: f64 = fields[0]
            .trim()
            .parse()
            .map_err(|e| err(format!("bad score `{}`: {e}", fields[0])))?;
        if !(0.0..=5.0).contains(&score) {
            return Err(err(format!("score {score} outside [0, 5]")));
        }
        if fields[1].trim().is_empty() || fields[2].trim().is_empty() {
            return Err(err("empty sentence".into()));
        }
        out.push(StsExample {
            task,
            subset: subset.to_owned(),
            split,
            score,
            sent1: fields[1].to_owned(),
            sent2: fields[2].to_owned(),
        });
    }
    if out.is_empty() {
        log::warn!("{}: no examples", path.display());
    }
    Ok(out)
}

/// Reads every task directory under `root`. All seven must exist.
pub fn load_sts(root: impl AsRef<Path>) -> Result<Vec<StsExample>> {
    let root = root.as_ref();
    let mut examples = Vec::new();
    for task in Task::ALL {
        let dir = root.join(task.dir_name());
        if !dir.is_dir() {
            return Err(Error::MissingTask(dir));
        }
        let mut files: Vec<_> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(&dir, e))?
            .into_iter()
            .map(|entry| entry.path())
            .collect();
        files.sort();
        for path in files {
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let Some(stem) = name.strip_suffix(".tsv") else {
                continue;
            };
            let parsed = stem.rsplit_once('.').and_then(|(subset, split)| Some((subset, split.parse().ok()?)));
            let Some((subset, split)) = parsed else {
                log::warn!("{}: not named <subset>.<split>.tsv, skipped", path.display());
                continue;
            };
            examples.extend(parse_file(&path, task, subset, split)?);
        }
    }
    for ((task, split), n) in split_counts(&examples) {
        log::info!("{task} {split:?}: {n} pairs");
    }
    Ok(examples)
}

pub fn split_counts(examples: &[StsExample]) -> BTreeMap<(Task, Split), usize> {
    let mut counts = BTreeMap::new();
    for e in examples {
        *counts.entry((e.task, e.split)).or_default() += 1;
    }
    counts
}

pub fn select(examples: &[StsExample], task: Option<Task>, split: Split) -> Vec<StsExample> {
    examples
        .iter()
        .filter(|e| e.split == split && task.is_none_or(|t| e.task == t))
        .cloned()
        .collect()
}

/// Unique sentences of `examples` in first-seen order, and for each example
/// the indices of its two sentences.
fn unique_sentences(examples: &[StsExample]) -> (Vec<&str>, Vec<(usize, usize)>) {
    let (sentences, pairs, _) = unique_sentences_with_owner(examples);
    (sentences, pairs)
}

/// As [`unique_sentences`], plus the example each sentence was first seen in.
fn unique_sentences_with_owner<'a>(examples: &'a [StsExample]) -> (Vec<&'a str>, Vec<(usize, usize)>, Vec<usize>) {
    let mut index: HashMap<&'a str, usize> = HashMap::new();
    let mut sentences = Vec::new();
    let mut owner = Vec::new();
    let mut pairs = Vec::with_capacity(examples.len());
    for (i, e) in examples.iter().enumerate() {
        let mut id = |s: &'a str| -> usize {
            *index.entry(s).or_insert_with(|| {
                sentences.push(s);
                owner.push(i);
                sentences.len() - 1
            })
        };
        let a = id(&e.sent1);
        let b = id(&e.sent2);
        pairs.push((a, b));
    }
    (sentences, pairs, owner)
}

/// Rewrites a sentence-indexed error to name the example it came from.
fn at_example(err: Error, owner: &[usize]) -> Error {
    match err {
        Error::AtSentence { index, source } => Error::AtExample {
            index: owner[index],
            source,
        },
        other => other,
    }
}

/// Cosine similarity of each example's two pooled sentences.
pub fn predict(
    examples: &[StsExample],
    model: &Model,
    spec: &PoolingSpec,
    opts: EmbedOptions,
) -> Result<Vec<f64>> {
    spec.validate(&model.config)?;
    let (sentences, pairs, owner) = unique_sentences_with_owner(examples);
    let mut pooled: Vec<Tensor> = Vec::with_capacity(sentences.len());
    encode_corpus(
        &sentences,
        model,
        opts,
        spec.strategy.is_ditto(),
        |s, out| pool(out, spec, s),
        |_, v| {
            pooled.push(v);
            Ok(())
        },
    )
    .map_err(|e| at_example(e, &owner))?;
    pairs
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            cosine_slices(pooled[a].data(), pooled[b].data()).map_err(|e| Error::AtExample {
                index: i,
                source: Box::new(e),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskScore {
    pub task: Task,
    /// Spearman correlation × 100.
    pub spearman: f64,
    pub pairs: usize,
}

/// Per-task Spearman (× 100) of `predictions` against the gold scores of the
/// test examples, tasks in canonical order.
pub fn score_predictions(examples: &[StsExample], predictions: &[f64]) -> Result<Vec<TaskScore>> {
    if examples.len() != predictions.len() {
        return Err(Error::Shape {
            op: "score_predictions",
            left: vec![examples.len()],
            right: vec![predictions.len()],
        });
    }
    let mut by_task: BTreeMap<Task, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (e, &p) in examples.iter().zip(predictions) {
        if e.split == Split::Test {
            let (gold, pred) = by_task.entry(e.task).or_default();
            gold.push(e.score);
            pred.push(p);
        }
    }
    by_task
        .into_iter()
        .map(|(task, (gold, pred))| {
            Ok(TaskScore {
                task,
                spearman: spearman(&pred, &gold)? * 100.0,
                pairs: gold.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub model: String,
    pub pooling: String,
    pub max_len: usize,
    pub include_special_tokens: bool,
    pub tasks: Vec<TaskScore>,
    /// Mean of the task scores.
    pub average: f64,
}

impl EvalReport {
    pub fn score(&self, task: Task) -> Option<f64> {
        self.tasks.iter().find(|t| t.task == task).map(|t| t.spearman)
    }

    /// Fixed-width table with one column per task plus the average.
    pub fn to_table(&self) -> String {
        let mut header = String::new();
        let mut row = String::new();
        for task in Task::ALL {
            write!(header, "{:>8}", task.label()).unwrap();
            match self.score(task) {
                Some(s) => write!(row, "{s:>8.2}").unwrap(),
                None => write!(row, "{:>8}", "-").unwrap(),
            }
        }
        write!(header, "{:>8}", "Avg.").unwrap();
        write!(row, "{:>8.2}", self.average).unwrap();
        format!("{} {}\n{header}\n{row}\n", self.model, self.pooling)
    }
}

/// Scores a pooling configuration on the test splits of every task present.
pub fn evaluate(
    examples: &[StsExample],
    model: &Model,
    spec: &PoolingSpec,
    opts: EmbedOptions,
) -> Result<EvalReport> {
    let test = select(examples, None, Split::Test);
    if test.is_empty() {
        return Err(Error::InsufficientData("no test examples to evaluate".into()));
    }
    let predictions = predict(&test, model, spec, opts)?;
    let tasks = score_predictions(&test, &predictions)?;
    let average = tasks.iter().map(|t| t.spearman).sum::<f64>() / tasks.len() as f64;
    Ok(EvalReport {
        model: model.id.clone(),
        pooling: spec.to_string(),
        max_len: opts.max_len,
        include_special_tokens: spec.include_special_tokens,
        tasks,
        average,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeadScore {
    pub head: HeadRef,
    /// Spearman correlation × 100 over all given examples.
    pub spearman: f64,
}

/// Scores every head for a Ditto strategy from one encoder pass per sentence.
///
/// All examples are scored together. The result is sorted by score,
/// descending, ties by head ascending. Each score equals what [`predict`]
/// plus Spearman gives for that head alone.
pub fn grid_search_head(
    dev: &[StsExample],
    model: &Model,
    strategy: Strategy,
    include_special_tokens: bool,
    opts: EmbedOptions,
) -> Result<Vec<HeadScore>> {
    if dev.is_empty() {
        return Err(Error::InsufficientData("grid search needs development examples".into()));
    }
    let heads = HeadRef::all(&model.config);
    let specs = heads
        .iter()
        .map(|&h| PoolingSpec::ditto(strategy, h).map(|s| s.with_special_tokens(include_special_tokens)))
        .collect::<Result<Vec<_>>>()?;

    // sentences interleaved as (sent1, sent2) so each pair completes in turn
    let sentences: Vec<&str> = dev.iter().flat_map(|e| [e.sent1.as_str(), e.sent2.as_str()]).collect();
    let mut predictions: Vec<Vec<f64>> = vec![Vec::with_capacity(dev.len()); heads.len()];
    let mut pending: Option<Vec<Tensor>> = None;
    encode_corpus(
        &sentences,
        model,
        opts,
        true,
        |s, out| specs.iter().map(|spec| pool(out, spec, s)).collect::<Result<Vec<_>>>(),
        |i, per_head| {
            match pending.take() {
                None => pending = Some(per_head),
                Some(first) => {
                    for ((a, b), preds) in first.iter().zip(&per_head).zip(&mut predictions) {
                        preds.push(cosine_slices(a.data(), b.data()).map_err(|e| Error::at_sentence(i, e))?);
                    }
                }
            }
            Ok(())
        },
    )
    .map_err(|e| match e {
        Error::AtSentence { index, source } => Error::AtExample { index: index / 2, source },
        other => other,
    })?;

    let gold: Vec<f64> = dev.iter().map(|e| e.score).collect();
    let mut ranked = heads
        .into_iter()
        .zip(&predictions)
        .map(|(head, pred)| {
            Ok(HeadScore {
                head,
                spearman: spearman(pred, &gold)? * 100.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.spearman.total_cmp(&a.spearman).then(a.head.cmp(&b.head)));
    Ok(ranked)
}

/// Correlation (× 100) between one head's diagonal attention, averaged over
/// each word's tokens, and the word's TF-IDF weight, pooled over the unique
/// sentences of `examples`.
pub fn diagonal_tfidf_correlation(
    examples: &[StsExample],
    model: &Model,
    head: HeadRef,
    tfidf: &TfidfModel,
    opts: EmbedOptions,
) -> Result<(f64, f64)> {
    head.check(&model.config)?;
    let (sentences, _) = unique_sentences(examples);
    let mut diag = Vec::new();
    let mut weight = Vec::new();
    encode_corpus(
        &sentences,
        model,
        opts,
        true,
        |s, out| {
            let d: Vec<f64> = diagonal_attention(out, head)?.into_iter().map(f64::from).collect();
            Ok((s.word_means(&d), tfidf.word_weights(s)))
        },
        |_, (d, w)| {
            diag.extend(d);
            weight.extend(w);
            Ok(())
        },
    )?;
    let (p, s) = correlate(&diag, &weight)?;
    Ok((p * 100.0, s * 100.0))
}

/// Alignment over pairs scored at least `threshold` and uniformity over all
/// unique sentences of `examples`.
pub fn alignment_uniformity(
    examples: &[StsExample],
    model: &Model,
    spec: &PoolingSpec,
    opts: EmbedOptions,
    threshold: f64,
) -> Result<(f64, f64)> {
    spec.validate(&model.config)?;
    let (sentences, pairs) = unique_sentences(examples);
    let d = model.config.hidden_size;
    let mut data = Vec::with_capacity(sentences.len() * d);
    encode_corpus(
        &sentences,
        model,
        opts,
        spec.strategy.is_ditto(),
        |s, out| pool(out, spec, s),
        |_, v| {
            data.extend_from_slice(v.data());
            Ok(())
        },
    )?;
    let m = Tensor::new(vec![sentences.len(), d], data)?;
    let positives: Vec<(&[f32], &[f32])> = examples
        .iter()
        .zip(&pairs)
        .filter(|(e, _)| e.score >= threshold)
        .map(|(_, &(a, b))| (m.row(a), m.row(b)))
        .collect();
    if positives.is_empty() {
        return Err(Error::InsufficientData(format!("no pairs scored ≥ {threshold}")));
    }
    Ok((alignment(&positives)?, uniformity(&m)?))
}
