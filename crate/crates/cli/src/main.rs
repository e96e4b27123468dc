//! `ditto` command-line tool.
//!
//! Exit codes: 0 on success, 2 for usage errors (bad flags, missing paths,
//! malformed pooling specs), 1 when a computation fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ditto_core::export::{write_matrix_container, write_matrix_csv};
use ditto_core::metrics::avg_cosine;
use ditto_core::pooling::{embed_corpus, EmbedOptions, PoolingSpec, Strategy};
use ditto_core::probe::{impact_matrix, impact_tfidf_correlation, mean_impact, write_impact, ProbeOptions};
use ditto_core::sts::{
    alignment_uniformity, diagonal_tfidf_correlation, evaluate, grid_search_head, load_sts, select, Split, Task,
};
use ditto_core::tokenizer::DEFAULT_MAX_LEN;
use ditto_core::{container, Encoder, HeadRef, Model, TfidfModel};

#[derive(Parser)]
#[command(name = "ditto", version, about = "Sentence embeddings weighted by diagonal attention")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct Global {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Maximum tokens per sentence, including [CLS] and [SEP].
    #[arg(long, global = true, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    /// Sentences per forward batch.
    #[arg(long, global = true, default_value_t = 32)]
    batch_size: usize,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
}

impl Global {
    fn embed_options(&self) -> EmbedOptions {
        EmbedOptions {
            batch_size: self.batch_size,
            max_len: self.max_len,
        }
    }
}

#[derive(Args)]
struct PoolingArgs {
    /// Model directory (config.json, model.safetensors, vocab.txt).
    #[arg(long)]
    model: PathBuf,
    /// Pooling spec, e.g. `first_last_avg` or `first_last_ditto@1-10`.
    #[arg(long)]
    pooling: String,
    /// Leave [CLS]/[SEP] out of the pooled sums.
    #[arg(long)]
    exclude_special: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Embed one sentence per line of a text file.
    Embed {
        #[command(flatten)]
        pooling: PoolingArgs,
        #[arg(long)]
        input: PathBuf,
        /// `.csv` or `.safetensors`.
        #[arg(long)]
        output: PathBuf,
    },
    /// Spearman correlation on the seven STS test sets.
    EvalSts {
        #[command(flatten)]
        pooling: PoolingArgs,
        /// Root of the STS task directories.
        #[arg(long)]
        data: PathBuf,
        /// Also write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Rank every attention head on the STS-B development set.
    SearchHead {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "first_last_ditto")]
        strategy: String,
        /// Show only the best K heads.
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        exclude_special: bool,
    },
    /// Perturbed-masking analysis.
    #[command(subcommand)]
    Probe(ProbeCommand),
    /// TF-IDF weights.
    #[command(subcommand)]
    Tfidf(TfidfCommand),
    /// Embedding-space diagnostics.
    #[command(subcommand)]
    Diag(DiagCommand),
    /// Write all hidden states and attentions for one sentence.
    Dump {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sentence: String,
        /// Output tensor container.
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Subcommand)]
enum ProbeCommand {
    /// Impact matrix of one sentence, as CSV plus a JSON sidecar.
    Impact {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sentence: String,
        /// Hidden layer to compare (default: last).
        #[arg(long)]
        layer: Option<usize>,
        /// Output prefix; writes `<prefix>.csv` and `<prefix>.json`.
        #[arg(long, default_value = "impact")]
        output: PathBuf,
    },
    /// Correlation between mean impact and TF-IDF weight over a corpus.
    Corr {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        tfidf: PathBuf,
        #[arg(long)]
        layer: Option<usize>,
    },
}

#[derive(Subcommand)]
enum TfidfCommand {
    /// Count document frequencies, one document per line.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Subcommand)]
enum DiagCommand {
    /// Average pairwise cosine similarity of a corpus sample.
    Isotropy {
        #[command(flatten)]
        pooling: PoolingArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1000)]
        sample: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Alignment of high-scoring STS-B dev pairs and uniformity of all dev sentences.
    AlignUniform {
        #[command(flatten)]
        pooling: PoolingArgs,
        #[arg(long)]
        data: PathBuf,
        /// Minimum gold score for a positive pair.
        #[arg(long, default_value_t = 4.0)]
        threshold: f64,
    },
    /// Correlation between one head's diagonal attention and TF-IDF weights on STS-B.
    HeadTfidf {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        head: String,
        #[arg(long)]
        tfidf: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

impl From<ditto_core::Error> for Failure {
    fn from(e: ditto_core::Error) -> Self {
        Failure::Run(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn existing(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn load_model(dir: &Path) -> Result<Model, Failure> {
    existing(dir, "model directory")?;
    Model::load(dir)
        .with_context(|| format!("loading model from {}", dir.display()))
        .map_err(Failure::Run)
}

fn parse_spec(args: &PoolingArgs) -> Result<PoolingSpec, Failure> {
    if let Some((_, path)) = args.pooling.split_once(':') {
        existing(Path::new(path), "TF-IDF weights")?;
    }
    let spec = PoolingSpec::parse(&args.pooling).map_err(|e| match e {
        ditto_core::Error::Spec(m) => Failure::Usage(m),
        other => Failure::Run(other.into()),
    })?;
    Ok(spec.with_special_tokens(!args.exclude_special))
}

fn model_and_spec(args: &PoolingArgs) -> Result<(Model, PoolingSpec), Failure> {
    let model = load_model(&args.model)?;
    let spec = parse_spec(args)?;
    spec.validate(&model.config).map_err(|e| Failure::Usage(e.to_string()))?;
    Ok((model, spec))
}

fn read_lines(path: &Path, skip_blank: bool) -> Result<Vec<String>, Failure> {
    existing(path, "input file")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !skip_blank || !l.trim().is_empty())
        .map(str::to_owned)
        .collect())
}

fn load_data(dir: &Path) -> Result<Vec<ditto_core::sts::StsExample>, Failure> {
    existing(dir, "STS data directory")?;
    Ok(load_sts(dir)?)
}

fn print_json<T: Serialize>(value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value).context("serializing output")?;
    println!("{text}");
    Ok(())
}

fn embed(g: Global, args: &PoolingArgs, input: &Path, output: &Path) -> CmdResult {
    let (model, spec) = model_and_spec(args)?;
    let sentences = read_lines(input, false)?;
    let m = embed_corpus(&sentences, &model, &spec, g.embed_options())?;
    if output.extension().is_some_and(|e| e == "safetensors") {
        let meta = BTreeMap::from([
            ("model".to_string(), model.id.clone()),
            ("pooling".to_string(), spec.to_string()),
            ("max_len".to_string(), g.max_len.to_string()),
            ("include_special_tokens".to_string(), spec.include_special_tokens.to_string()),
        ]);
        write_matrix_container(output, "embeddings", &m, &meta)?;
    } else {
        write_matrix_csv(output, &m)?;
    }
    log::info!("wrote {} × {} embeddings to {}", m.rows(), m.cols(), output.display());
    Ok(())
}

fn eval_sts(g: Global, args: &PoolingArgs, data: &Path, report_path: Option<&Path>) -> CmdResult {
    let (model, spec) = model_and_spec(args)?;
    let examples = load_data(data)?;
    let report = evaluate(&examples, &model, &spec, g.embed_options())?;
    if let Some(p) = report_path {
        let text = serde_json::to_string_pretty(&report).context("serializing report")?;
        std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    if g.json {
        print_json(&report)
    } else {
        print!("{}", report.to_table());
        Ok(())
    }
}

fn search_head(g: Global, model: &Path, data: &Path, strategy: &str, top: Option<usize>, exclude: bool) -> CmdResult {
    let strategy: Strategy = strategy.parse().map_err(|e: ditto_core::Error| Failure::Usage(e.to_string()))?;
    if !strategy.is_ditto() {
        return Err(Failure::Usage(format!("{strategy} has no head to search")));
    }
    let model = load_model(model)?;
    let examples = load_data(data)?;
    let dev = select(&examples, Some(Task::StsB), Split::Dev);
    let mut ranked = grid_search_head(&dev, &model, strategy, !exclude, g.embed_options())?;
    if let Some(k) = top {
        ranked.truncate(k);
    }
    if g.json {
        return print_json(&ranked);
    }
    println!("{:>4}  {:>6}  {:>8}", "rank", "head", "dev");
    for (i, r) in ranked.iter().enumerate() {
        println!("{:>4}  {:>6}  {:>8.2}", i + 1, r.head.to_string(), r.spearman);
    }
    Ok(())
}

#[derive(Serialize)]
struct CorrelationRow<'a> {
    model: &'a str,
    pearson: f64,
    spearman: f64,
}

fn print_correlation(g: Global, model: &str, pearson: f64, spearman: f64) -> CmdResult {
    if g.json {
        return print_json(&CorrelationRow {
            model,
            pearson,
            spearman,
        });
    }
    println!("{:<24}{:>10}{:>10}", "model", "pearson", "spearman");
    println!("{model:<24}{pearson:>10.2}{spearman:>10.2}");
    Ok(())
}

fn probe(g: Global, cmd: &ProbeCommand) -> CmdResult {
    match cmd {
        ProbeCommand::Impact {
            model,
            sentence,
            layer,
            output,
        } => {
            let model = load_model(model)?;
            let opts = ProbeOptions {
                repr_layer: *layer,
                batch_size: g.batch_size,
                max_len: g.max_len,
            };
            let s = model.encode(sentence, g.max_len)?;
            let m = impact_matrix(&s, &model, opts)?;
            let (csv, json) = (output.with_extension("csv"), output.with_extension("json"));
            write_impact(&m, &model, &csv, &json)?;
            if g.json {
                return print_json(&BTreeMap::from([("csv", csv), ("json", json)]));
            }
            for (w, v) in s.word_spans.iter().zip(mean_impact(&m)) {
                println!("{:<20}{v:>10.4}", w.word);
            }
            Ok(())
        }
        ProbeCommand::Corr {
            model,
            corpus,
            tfidf,
            layer,
        } => {
            let model = load_model(model)?;
            existing(tfidf, "TF-IDF weights")?;
            let weights = TfidfModel::load(tfidf)?;
            let sentences = read_lines(corpus, true)?;
            let opts = ProbeOptions {
                repr_layer: *layer,
                batch_size: g.batch_size,
                max_len: g.max_len,
            };
            let (p, s) = impact_tfidf_correlation(&sentences, &model, &weights, opts)?;
            print_correlation(g, &model.id, p * 100.0, s * 100.0)
        }
    }
}

fn tfidf(cmd: &TfidfCommand) -> CmdResult {
    let TfidfCommand::Train { corpus, output } = cmd;
    existing(corpus, "corpus")?;
    let m = TfidfModel::train(corpus)?;
    m.save(output)?;
    log::info!("{} documents, {} words", m.n_docs(), m.vocab_size());
    Ok(())
}

#[derive(Serialize)]
struct IsotropyReport {
    model: String,
    pooling: String,
    sentences: usize,
    seed: u64,
    avg_cosine: f64,
}

#[derive(Serialize)]
struct AlignUniformReport {
    model: String,
    pooling: String,
    threshold: f64,
    alignment: f64,
    uniformity: f64,
}

fn diag(g: Global, cmd: &DiagCommand) -> CmdResult {
    match cmd {
        DiagCommand::Isotropy {
            pooling,
            corpus,
            sample: n,
            seed,
        } => {
            let (model, spec) = model_and_spec(pooling)?;
            let lines = read_lines(corpus, true)?;
            let chosen: Vec<&String> = if *n >= lines.len() {
                if *n > lines.len() {
                    log::warn!("--sample {n} exceeds corpus size {}; using the whole corpus", lines.len());
                }
                lines.iter().collect()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut idx = sample(&mut rng, lines.len(), *n).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| &lines[i]).collect()
            };
            let m = embed_corpus(&chosen, &model, &spec, g.embed_options())?;
            let report = IsotropyReport {
                model: model.id.clone(),
                pooling: spec.to_string(),
                sentences: chosen.len(),
                seed: *seed,
                avg_cosine: avg_cosine(&m)?,
            };
            if g.json {
                return print_json(&report);
            }
            println!("{} {} ({} sentences): avg cosine {:.3}", report.model, report.pooling, report.sentences, report.avg_cosine);
            Ok(())
        }
        DiagCommand::AlignUniform {
            pooling,
            data,
            threshold,
        } => {
            let (model, spec) = model_and_spec(pooling)?;
            let examples = load_data(data)?;
            let dev = select(&examples, Some(Task::StsB), Split::Dev);
            let (alignment, uniformity) = alignment_uniformity(&dev, &model, &spec, g.embed_options(), *threshold)?;
            let report = AlignUniformReport {
                model: model.id.clone(),
                pooling: spec.to_string(),
                threshold: *threshold,
                alignment,
                uniformity,
            };
            if g.json {
                return print_json(&report);
            }
            println!("{} {}: alignment {:.4}  uniformity {:.4}", report.model, report.pooling, alignment, uniformity);
            Ok(())
        }
        DiagCommand::HeadTfidf {
            model,
            data,
            head,
            tfidf,
        } => {
            let head: HeadRef = head.parse().map_err(|e: ditto_core::Error| Failure::Usage(e.to_string()))?;
            let model = load_model(model)?;
            head.check(&model.config).map_err(|e| Failure::Usage(e.to_string()))?;
            existing(tfidf, "TF-IDF weights")?;
            let weights = TfidfModel::load(tfidf)?;
            let examples = load_data(data)?;
            let stsb: Vec<_> = examples.into_iter().filter(|e| e.task == Task::StsB).collect();
            let (p, s) = diagonal_tfidf_correlation(&stsb, &model, head, &Arc::new(weights), g.embed_options())?;
            print_correlation(g, &format!("{} {head}", model.id), p, s)
        }
    }
}

fn dump(g: Global, model: &Path, sentence: &str, output: &Path) -> CmdResult {
    let model = load_model(model)?;
    let s = model.encode(sentence, g.max_len)?;
    let out = Encoder::new(&model.config, &model.weights).forward(&s)?;
    let mut tensors = out.to_tensors();
    let ids = s.ids.iter().map(|&i| i as f32).collect();
    tensors.insert("ids".into(), ditto_core::Tensor::vector(ids));
    let meta = BTreeMap::from([
        ("model".to_string(), model.id.clone()),
        ("sentence".to_string(), sentence.to_string()),
    ]);
    container::write_container(output, &tensors, &meta)?;
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    let g = cli.global;
    if g.batch_size == 0 {
        return Err(Failure::Usage("--batch-size must be at least 1".into()));
    }
    if g.max_len < 3 {
        return Err(Failure::Usage("--max-len must be at least 3".into()));
    }
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    match &cli.command {
        Command::Embed { pooling, input, output } => embed(g, pooling, input, output),
        Command::EvalSts { pooling, data, report } => eval_sts(g, pooling, data, report.as_deref()),
        Command::SearchHead {
            model,
            data,
            strategy,
            top,
            exclude_special,
        } => search_head(g, model, data, strategy, *top, *exclude_special),
        Command::Probe(cmd) => probe(g, cmd),
        Command::Tfidf(cmd) => tfidf(cmd),
        Command::Diag(cmd) => diag(g, cmd),
        Command::Dump { model, sentence, output } => dump(g, model, sentence, output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
