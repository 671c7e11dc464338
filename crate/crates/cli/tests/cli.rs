//! End-to-end tests of the `shiftcoref` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use shiftcoref::corpus::{auto_workers_document, read_corpus, write_document, Document};
use shiftcoref::metrics::score_documents;
use shiftcoref::model::{load_checkpoint, ModelConfig, ScoringModel};
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shiftcoref"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().expect("exited normally")
}

fn corpus(path: PathBuf) -> Vec<Document> {
    read_corpus(&fs::read_to_string(path).unwrap()).unwrap()
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// A config small enough for quick training.
const SMALL: &str = "seed = 3
[synth]
num_docs = 12
sentences_per_doc = [2, 4]
[model]
feature_dim = 4
mention_hidden = 16
coref_hidden = 16
[model.encoder]
buckets = 256
dim = 4
[train]
epochs = 3
learning_rate = 1e-3
";

fn small_dir() -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

#[test]
fn synth_is_deterministic_and_checked_by_oracle() {
    let dir = small_dir();
    let d = dir.path();
    ok(d, &["--config", "small.toml", "synth", "--out", "a.jsonl"]);
    ok(d, &["--config", "small.toml", "synth", "--out", "b.jsonl"]);
    assert_eq!(
        fs::read(d.join("a.jsonl")).unwrap(),
        fs::read(d.join("b.jsonl")).unwrap()
    );
    assert_eq!(corpus(d.join("a.jsonl")).len(), 12);

    let manifest = json(d.join("a.jsonl.manifest.json"));
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["config"]["seed"], 3);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    ok(
        d,
        &[
            "--seed",
            "4",
            "--config",
            "small.toml",
            "synth",
            "--out",
            "c.jsonl",
        ],
    );
    assert_ne!(
        fs::read(d.join("a.jsonl")).unwrap(),
        fs::read(d.join("c.jsonl")).unwrap()
    );

    let report = ok(d, &["oracle", "a.jsonl", "--jobs", "2"]);
    assert!(
        report.contains("12 records: 12 passed, 0 failed"),
        "{report}"
    );

    assert_eq!(code(d, &["synth", "--out", "z.jsonl", "--docs", "0"]), 2);
}

#[test]
fn oracle_on_the_worked_example_and_invalid_input() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(
        d.join("fig.jsonl"),
        write_document(&auto_workers_document()) + "\n",
    )
    .unwrap();
    let report = ok(d, &["oracle", "fig.jsonl", "--traces", "fig.trace"]);
    let row = report.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(fields[6], "10", "{row}");
    assert_eq!(fields.last(), Some(&"ok"));
    let trace = fs::read_to_string(d.join("fig.trace")).unwrap();
    assert_eq!(trace.lines().filter(|l| !l.starts_with('#')).count(), 10);
    assert!(trace.contains("POP 3 4"), "{trace}");

    let crossing = r#"{"doc_key":"x","sentences":[["a","b","c"]],"speakers":[["s","s","s"]],"genre":"nw","clusters":[[[0,1],[1,2]]]}"#;
    fs::write(d.join("bad.jsonl"), format!("{crossing}\n")).unwrap();
    assert_eq!(code(d, &["oracle", "bad.jsonl"]), 1);
}

#[test]
fn oracle_passes_a_thousand_synthetic_documents() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "--seed",
            "11",
            "synth",
            "--out",
            "big.jsonl",
            "--docs",
            "1000",
        ],
    );
    let report = ok(d, &["oracle", "big.jsonl"]);
    assert!(report.contains("1000 records: 1000 passed, 0 failed"));
}

#[test]
fn training_is_reproducible_and_zero_lr_keeps_initialization() {
    let dir = small_dir();
    let d = dir.path();
    ok(d, &["--config", "small.toml", "synth", "--out", "c.jsonl"]);
    ok(
        d,
        &[
            "--config",
            "small.toml",
            "train",
            "c.jsonl",
            "--out",
            "a.ckpt",
        ],
    );
    ok(
        d,
        &[
            "--config",
            "small.toml",
            "train",
            "c.jsonl",
            "--out",
            "b.ckpt",
        ],
    );
    assert_eq!(
        fs::read(d.join("a.ckpt")).unwrap(),
        fs::read(d.join("b.ckpt")).unwrap()
    );
    let manifest = json(d.join("a.ckpt.manifest.json"));
    assert_eq!(manifest["details"]["epochs"].as_array().unwrap().len(), 3);
    assert!(manifest["details"]["final"]["per_action_accuracy"].is_array());

    fs::write(
        d.join("zero.toml"),
        SMALL.replace("learning_rate = 1e-3", "learning_rate = 0.0"),
    )
    .unwrap();
    ok(
        d,
        &[
            "--config",
            "zero.toml",
            "train",
            "c.jsonl",
            "--out",
            "zero.ckpt",
        ],
    );
    let trained = load_checkpoint(&fs::read(d.join("zero.ckpt")).unwrap()[..], None).unwrap();
    let fresh = ScoringModel::new(trained.config().clone());
    assert_eq!(trained.params, fresh.params);
}

#[test]
fn training_overfits_a_single_document() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(
        d.join("fit.toml"),
        "seed = 1\n[train]\nlearning_rate = 1e-2\n",
    )
    .unwrap();
    ok(
        d,
        &["--seed", "1", "synth", "--out", "all.jsonl", "--docs", "1"],
    );
    ok(
        d,
        &[
            "--config",
            "fit.toml",
            "train",
            "all.jsonl",
            "--out",
            "fit.ckpt",
        ],
    );
    let manifest = json(d.join("fit.ckpt.manifest.json"));
    assert_eq!(manifest["details"]["final"]["action_accuracy"], 1.0);
}

#[test]
fn config_errors_are_usage_errors() {
    let dir = small_dir();
    let d = dir.path();
    fs::write(d.join("long.toml"), "[train]\nepochs = 16\n").unwrap();
    fs::write(d.join("typo.toml"), "[train]\nepoch = 2\n").unwrap();
    assert_eq!(
        code(d, &["--config", "long.toml", "synth", "--out", "x"]),
        2
    );
    assert_eq!(
        code(d, &["--config", "typo.toml", "synth", "--out", "x"]),
        2
    );
    assert_eq!(
        code(d, &["--config", "missing.toml", "synth", "--out", "x"]),
        2
    );
    assert_eq!(code(d, &["--jobs", "0", "synth", "--out", "x"]), 2);
    assert_eq!(code(d, &["nonsense"]), 2);
}

#[test]
fn numerical_blowup_aborts_with_status_three() {
    let dir = small_dir();
    let d = dir.path();
    ok(d, &["--config", "small.toml", "synth", "--out", "c.jsonl"]);
    fs::write(
        d.join("hot.toml"),
        SMALL.replace("learning_rate = 1e-3", "learning_rate = 1e300"),
    )
    .unwrap();
    let out = run(
        d,
        &[
            "--config", "hot.toml", "train", "c.jsonl", "--out", "hot.ckpt",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn predict_windows_partials_and_scoring() {
    let dir = small_dir();
    let d = dir.path();
    let cfg = ["--config", "small.toml"];
    let with = |args: &[&'static str]| [&cfg[..], args].concat();
    ok(d, &with(&["synth", "--out", "c.jsonl"]));
    ok(d, &with(&["train", "c.jsonl", "--out", "m.ckpt"]));

    ok(
        d,
        &with(&[
            "predict",
            "c.jsonl",
            "--checkpoint",
            "m.ckpt",
            "--out",
            "k4.jsonl",
            "--k",
            "4",
        ]),
    );
    ok(
        d,
        &with(&[
            "predict",
            "c.jsonl",
            "--checkpoint",
            "m.ckpt",
            "--out",
            "k99.jsonl",
            "--k",
            "99",
        ]),
    );
    assert_eq!(
        fs::read(d.join("k4.jsonl")).unwrap(),
        fs::read(d.join("k99.jsonl")).unwrap()
    );

    ok(
        d,
        &with(&[
            "predict",
            "c.jsonl",
            "--checkpoint",
            "m.ckpt",
            "--out",
            "k1.jsonl",
            "--emit-partials",
            "parts.jsonl",
            "--jobs",
            "3",
        ]),
    );
    ok(
        d,
        &with(&[
            "predict",
            "c.jsonl",
            "--checkpoint",
            "m.ckpt",
            "--out",
            "k1b.jsonl",
        ]),
    );
    assert_eq!(
        fs::read(d.join("k1.jsonl")).unwrap(),
        fs::read(d.join("k1b.jsonl")).unwrap()
    );
    let gold = corpus(d.join("c.jsonl"));
    let windows: usize = gold.iter().map(|doc| doc.sentences.len()).sum();
    let parts = fs::read_to_string(d.join("parts.jsonl")).unwrap();
    assert_eq!(parts.lines().count(), windows);
    let manifest = json(d.join("k1.jsonl.manifest.json"));
    assert_eq!(manifest["details"]["k"], 1);
    assert_eq!(manifest["details"]["budget"], 512);

    let pred = corpus(d.join("k1.jsonl"));
    assert!(pred
        .iter()
        .flat_map(|p| p.gold_clusters.iter())
        .all(|c| c.len() >= 2));
    ok(
        d,
        &[
            "score",
            "c.jsonl",
            "k1.jsonl",
            "--json",
            "s.json",
            "--partition-size",
            "2",
        ],
    );
    let record = json(d.join("s.json"));
    let expected = score_documents(&gold, &pred).unwrap();
    assert_eq!(record["corpus"], serde_json::to_value(expected).unwrap());
    assert_eq!(record["documents"].as_array().unwrap().len(), gold.len());

    let whole = ok(
        d,
        &[
            "partition-eval",
            "c.jsonl",
            "k1.jsonl",
            "--partition-size",
            "100",
            "--json",
            "p.json",
        ],
    );
    assert!(whole.contains("Avg. F1"));
    assert_eq!(json(d.join("p.json"))["report"], record["corpus"]);

    fs::write(
        d.join("other.toml"),
        SMALL.replace("coref_hidden = 16", "coref_hidden = 8"),
    )
    .unwrap();
    let mismatch = [
        "--config",
        "other.toml",
        "predict",
        "c.jsonl",
        "--checkpoint",
        "m.ckpt",
        "--out",
        "x.jsonl",
    ];
    assert_eq!(code(d, &mismatch), 1);
    let tiny_budget = [
        "predict",
        "c.jsonl",
        "--checkpoint",
        "m.ckpt",
        "--out",
        "x.jsonl",
        "--budget",
        "3",
    ];
    assert_eq!(code(d, &tiny_budget), 2);

    fs::write(d.join("empty.jsonl"), "").unwrap();
    ok(
        d,
        &[
            "predict",
            "empty.jsonl",
            "--checkpoint",
            "m.ckpt",
            "--out",
            "none.jsonl",
        ],
    );
    assert_eq!(fs::read(d.join("none.jsonl")).unwrap(), b"");
}

#[test]
fn score_identity_empty_and_misaligned() {
    let dir = small_dir();
    let d = dir.path();
    ok(d, &["--config", "small.toml", "synth", "--out", "c.jsonl"]);
    let table = ok(d, &["score", "c.jsonl", "c.jsonl"]);
    let avg = table.lines().find(|l| l.starts_with("Avg. F1")).unwrap();
    assert!(avg.ends_with("100.00"), "{avg}");

    let empty: String = corpus(d.join("c.jsonl"))
        .iter()
        .map(|doc| {
            let mut doc = doc.clone();
            doc.gold_clusters = Default::default();
            write_document(&doc) + "\n"
        })
        .collect();
    fs::write(d.join("empty.jsonl"), empty).unwrap();
    ok(d, &["score", "c.jsonl", "empty.jsonl", "--json", "e.json"]);
    assert_eq!(json(d.join("e.json"))["corpus"]["conll_f1"], 0.0);

    let first = fs::read_to_string(d.join("c.jsonl"))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    fs::write(d.join("short.jsonl"), first + "\n").unwrap();
    assert_eq!(code(d, &["score", "c.jsonl", "short.jsonl"]), 1);
}

/// synth, oracle, train, predict and score with every setting at its default.
#[test]
fn pipeline_closure_on_defaults() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--out", "corpus.jsonl"]);
    ok(d, &["oracle", "corpus.jsonl"]);
    ok(d, &["train", "corpus.jsonl", "--out", "model.ckpt"]);
    let model = load_checkpoint(
        &fs::read(d.join("model.ckpt")).unwrap()[..],
        Some(&ModelConfig::default()),
    )
    .unwrap();
    assert!(model.all_finite());
    ok(
        d,
        &[
            "predict",
            "corpus.jsonl",
            "--checkpoint",
            "model.ckpt",
            "--out",
            "pred.jsonl",
        ],
    );
    let table = ok(d, &["score", "corpus.jsonl", "pred.jsonl"]);
    assert!(table.contains("Avg. F1"));
}
