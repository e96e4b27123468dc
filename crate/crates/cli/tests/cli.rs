use std::path::PathBuf;
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn model() -> String {
    fixtures().join("tiny_model").display().to_string()
}

fn sts() -> String {
    fixtures().join("sts").display().to_string()
}

fn ditto(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ditto"))
        .args(args)
        .output()
        .expect("run ditto")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn eval_sts_prints_all_seven_columns() {
    let out = stdout(&ditto(&["eval-sts", "--model", &model(), "--pooling", "first_last_avg", "--data", &sts()]));
    let header = out.lines().nth(1).unwrap();
    for label in ["STS12", "STS13", "STS14", "STS15", "STS16", "STS-B", "SICK-R", "Avg."] {
        assert!(header.contains(label), "missing {label} in {header}");
    }
    let scores: Vec<f64> = out.lines().nth(2).unwrap().split_whitespace().map(|v| v.parse().unwrap()).collect();
    assert_eq!(scores.len(), 8);
    assert!(scores.iter().all(|s| (-100.0..=100.0).contains(s)));
}

#[test]
fn eval_sts_json_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let args = [
        "eval-sts",
        "--json",
        "--model",
        &model(),
        "--pooling",
        "first_last_ditto@1-2",
        "--data",
        &sts(),
        "--report",
        report.to_str().unwrap(),
    ];
    let a = stdout(&ditto(&args));
    let b = stdout(&ditto(&["--threads", "1"].iter().chain(&args).copied().collect::<Vec<_>>()));
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["pooling"], "first_last_ditto@1-2");
    assert_eq!(v["tasks"].as_array().unwrap().len(), 7);
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(saved, v);
}

#[test]
fn search_head_ranks_every_head() {
    let out = stdout(&ditto(&["search-head", "--json", "--model", &model(), "--data", &sts()]));
    let v: Vec<serde_json::Value> = serde_json::from_str(&out).unwrap();
    assert_eq!(v.len(), 4);
    let scores: Vec<f64> = v.iter().map(|h| h["spearman"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    let mut heads: Vec<&str> = v.iter().map(|h| h["head"].as_str().unwrap()).collect();
    heads.sort_unstable();
    assert_eq!(heads, ["1-1", "1-2", "2-1", "2-2"]);

    let top = stdout(&ditto(&["search-head", "--top", "2", "--model", &model(), "--data", &sts()]));
    assert_eq!(top.lines().count(), 3);
}

#[test]
fn usage_errors_exit_with_two() {
    let missing = ditto(&["eval-sts", "--model", "/no/such/model", "--pooling", "first_last_avg", "--data", &sts()]);
    assert_eq!(missing.status.code(), Some(2));
    let bad_spec = ditto(&["eval-sts", "--model", &model(), "--pooling", "first_last_magic", "--data", &sts()]);
    assert_eq!(bad_spec.status.code(), Some(2));
    let bad_head = ditto(&["eval-sts", "--model", &model(), "--pooling", "first_last_ditto@9-9", "--data", &sts()]);
    assert_eq!(bad_head.status.code(), Some(2));
    let no_args = ditto(&["embed"]);
    assert_eq!(no_args.status.code(), Some(2));
    let avg_search = ditto(&["search-head", "--strategy", "first_last_avg", "--model", &model(), "--data", &sts()]);
    assert_eq!(avg_search.status.code(), Some(2));
}

#[test]
fn computation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    std::fs::write(&input, "the cat sat.\n\n").unwrap();
    let out = ditto(&[
        "embed",
        "--model",
        &model(),
        "--pooling",
        "first_last_avg",
        "--exclude-special",
        "--input",
        input.to_str().unwrap(),
        "--output",
        dir.path().join("out.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sentence 1"));
}

#[test]
fn embed_writes_csv_and_container() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    std::fs::write(&input, "the cat sat on the mat.\na dog runs.\nthe bird flies.\n").unwrap();
    let csv = dir.path().join("emb.csv");
    stdout(&ditto(&[
        "embed",
        "--model",
        &model(),
        "--pooling",
        "last_ditto@2-1",
        "--input",
        input.to_str().unwrap(),
        "--output",
        csv.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.split(',').count() == 8));

    let st = dir.path().join("emb.safetensors");
    stdout(&ditto(&[
        "embed",
        "--model",
        &model(),
        "--pooling",
        "last_ditto@2-1",
        "--input",
        input.to_str().unwrap(),
        "--output",
        st.to_str().unwrap(),
    ]));
    let c = ditto_core::container::read_container(&st).unwrap();
    assert_eq!(c.tensors["embeddings"].shape(), &[3, 8]);
    assert_eq!(c.metadata["pooling"], "last_ditto@2-1");
}

#[test]
fn tfidf_train_then_probe_corr() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("idf.tsv");
    let corpus = fixtures().join("tfidf_corpus.txt");
    stdout(&ditto(&[
        "tfidf",
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--output",
        weights.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&weights).unwrap();
    assert!(text.starts_with("n_docs\t200\n"), "{}", &text[..40.min(text.len())]);

    let out = stdout(&ditto(&[
        "probe",
        "corr",
        "--json",
        "--model",
        &model(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--tfidf",
        weights.to_str().unwrap(),
    ]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    for key in ["pearson", "spearman"] {
        let x = v[key].as_f64().unwrap();
        assert!((-100.0..=100.0).contains(&x), "{key} = {x}");
    }
}

#[test]
fn probe_impact_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("cat");
    stdout(&ditto(&[
        "probe",
        "impact",
        "--model",
        &model(),
        "--sentence",
        "the cat sat on the mat.",
        "--output",
        prefix.to_str().unwrap(),
    ]));
    let csv = std::fs::read_to_string(prefix.with_extension("csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let m = rows.len();
    assert!(m >= 6);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), m);
        assert_eq!(row[i], 0.0);
    }
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(prefix.with_extension("json")).unwrap()).unwrap();
    assert_eq!(side["tokens"].as_array().unwrap().len(), m);
    assert_eq!(side["words"].as_array().unwrap().len(), side["mean_impact"].as_array().unwrap().len());
}

#[test]
fn isotropy_clamps_oversized_sample() {
    let corpus = fixtures().join("tfidf_corpus.txt");
    let out = ditto(&[
        "diag",
        "isotropy",
        "--json",
        "--model",
        &model(),
        "--pooling",
        "first_last_avg",
        "--corpus",
        corpus.to_str().unwrap(),
        "--sample",
        "5000",
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds corpus size"));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["sentences"], 200);

    let args = [
        "diag",
        "isotropy",
        "--json",
        "--model",
        &model(),
        "--pooling",
        "first_last_avg",
        "--corpus",
        corpus.to_str().unwrap(),
        "--sample",
        "50",
    ];
    let a = stdout(&ditto(&args));
    assert_eq!(a, stdout(&ditto(&args)));
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["sentences"], 50);
    let c = v["avg_cosine"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&c));
}

#[test]
fn align_uniform_and_head_tfidf_run() {
    let out = stdout(&ditto(&[
        "diag",
        "align-uniform",
        "--json",
        "--model",
        &model(),
        "--pooling",
        "first_last_avg",
        "--data",
        &sts(),
    ]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let align = v["alignment"].as_f64().unwrap();
    let uniform = v["uniformity"].as_f64().unwrap();
    assert!((0.0..=4.0).contains(&align));
    assert!(uniform <= 0.0);

    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("idf.tsv");
    let corpus = fixtures().join("tfidf_corpus.txt");
    stdout(&ditto(&["tfidf", "train", "--corpus", corpus.to_str().unwrap(), "--output", weights.to_str().unwrap()]));
    let out = stdout(&ditto(&[
        "diag",
        "head-tfidf",
        "--json",
        "--model",
        &model(),
        "--data",
        &sts(),
        "--head",
        "1-1",
        "--tfidf",
        weights.to_str().unwrap(),
    ]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["spearman"].as_f64().unwrap().abs() <= 100.0);
}

#[test]
fn dump_writes_every_layer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dump.safetensors");
    stdout(&ditto(&[
        "dump",
        "--model",
        &model(),
        "--sentence",
        "the cat sat.",
        "--output",
        path.to_str().unwrap(),
    ]));
    let c = ditto_core::container::read_container(&path).unwrap();
    let n = c.tensors["ids"].shape()[0];
    for l in 0..=2 {
        assert_eq!(c.tensors[&format!("hidden.{l}")].shape(), &[n, 8]);
    }
    for l in 1..=2 {
        assert_eq!(c.tensors[&format!("attention.{l}")].shape(), &[2, n, n]);
    }
}
