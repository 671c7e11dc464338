//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use shiftcoref::corpus::{
    parse_document, synthesize_corpus, write_document, write_predictions, Document,
};
use shiftcoref::incremental::{partition_eval, stream_decode, window_schedule, PartitionSpec};
use shiftcoref::metrics::{check_alignment, conll, CorpusScorer, MetricReport};
use shiftcoref::model::{
    evaluate_teacher_forced, load_checkpoint, save_checkpoint, train_model, ScoringModel,
    TrainError,
};
use shiftcoref::oracle::{action_counts, derive_actions, split_steps};
use shiftcoref::transition::{format_trace, replay, Action};

use crate::config::RunConfig;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// Validation, round-trip or I/O failure.
    Failed = 1,
    Usage = 2,
    Numerical = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub status: Status,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        CliError {
            status: Status::Usage,
            error: error.into(),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(error: E) -> Self {
        CliError {
            status: Status::Failed,
            error: error.into(),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Shared by every command: effective config and worker pool.
pub struct Ctx {
    pub config: RunConfig,
    /// Whether the config came from a file, in which case checkpoints must match it.
    pub explicit_config: bool,
    pub pool: rayon::ThreadPool,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn write_manifest(ctx: &Ctx, command: &str, out: &Path, details: serde_json::Value) -> CliResult {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": ctx.config.hash(),
        "config": ctx.config,
        "output": out,
        "details": details,
    });
    let path = manifest_path(out);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

/// Parses every record, keeping line numbers; errors are collected rather
/// than stopping at the first.
fn read_records(path: &Path) -> CliResult<(Vec<Document>, Vec<String>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut docs = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_document(line.as_bytes()) {
            Ok(doc) => docs.push(doc),
            Err(e) => errors.push(format!("{}:{}: {e}", path.display(), i + 1)),
        }
    }
    Ok((docs, errors))
}

/// Reads a corpus that must parse completely.
fn read_corpus(path: &Path) -> CliResult<Vec<Document>> {
    let (docs, errors) = read_records(path)?;
    if !errors.is_empty() {
        return Err(anyhow!("{} invalid record(s):\n{}", errors.len(), errors.join("\n")).into());
    }
    Ok(docs)
}

pub fn synth(ctx: &Ctx, out: &Path, docs: Option<usize>) -> CliResult {
    let mut config = ctx.config.synth.clone();
    if let Some(n) = docs {
        config.num_docs = n;
    }
    let corpus = synthesize_corpus(&config).map_err(CliError::usage)?;
    let mut w = create(out)?;
    for doc in &corpus {
        writeln!(w, "{}", write_document(doc))?;
    }
    w.flush()?;
    let tokens: usize = corpus.iter().map(Document::num_tokens).sum();
    let mentions: usize = corpus.iter().map(|d| d.gold_clusters.num_mentions()).sum();
    write_manifest(
        ctx,
        "synth",
        out,
        json!({ "synth": config, "documents": corpus.len(), "tokens": tokens, "mentions": mentions }),
    )?;
    eprintln!("wrote {} documents to {}", corpus.len(), out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct OracleRow {
    doc_key: String,
    tokens: usize,
    counts: [usize; 4],
    actions: usize,
    bound: usize,
    roundtrip: bool,
    error: Option<String>,
    #[serde(skip)]
    trace: Option<String>,
}

fn oracle_row(doc: &Document) -> OracleRow {
    let n = doc.num_tokens();
    let mut row = OracleRow {
        doc_key: doc.doc_key.clone(),
        tokens: n,
        counts: [0; 4],
        actions: 0,
        bound: 4 * n,
        roundtrip: false,
        error: None,
        trace: None,
    };
    let steps = match derive_actions(doc) {
        Ok(steps) => steps,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.counts = action_counts(&steps);
    row.actions = steps.len();
    let (actions, decisions) = split_steps(&steps);
    match replay(doc, &actions, &decisions) {
        Ok(clusters) => row.roundtrip = clusters.same_partition(&doc.gold_clusters),
        Err(e) => row.error = Some(e.to_string()),
    }
    if row.actions > row.bound {
        row.roundtrip = false;
        row.error = Some(format!(
            "{} actions exceed the bound of {}",
            row.actions, row.bound
        ));
    }
    row.trace = format_trace(&actions, n).ok();
    row
}

pub fn oracle(ctx: &Ctx, corpus: &Path, traces: Option<&Path>) -> CliResult {
    let (docs, errors) = read_records(corpus)?;
    let rows: Vec<OracleRow> = ctx
        .pool
        .install(|| docs.par_iter().map(oracle_row).collect());

    let mut out = String::new();
    writeln!(
        out,
        "{:<24}{:>8}{:>7}{:>7}{:>7}{:>7}{:>9}{:>8}{:>8}  status",
        "doc_key", "tokens", "PUSH", "ADV", "POP", "PEEK", "actions", "bound", "margin"
    )?;
    for row in &rows {
        let c = row.counts;
        let [push, advance, pop, peek] =
            [Action::Push, Action::Advance, Action::Pop, Action::Peek].map(|a| c[a.index()]);
        writeln!(
            out,
            "{:<24}{:>8}{:>7}{:>7}{:>7}{:>7}{:>9}{:>8}{:>8}  {}",
            row.doc_key,
            row.tokens,
            push,
            advance,
            pop,
            peek,
            row.actions,
            row.bound,
            row.bound as i64 - row.actions as i64,
            match (&row.error, row.roundtrip) {
                (Some(e), _) => format!("FAIL: {e}"),
                (None, true) => "ok".to_string(),
                (None, false) => "FAIL: round-trip mismatch".to_string(),
            }
        )?;
    }
    for e in &errors {
        writeln!(out, "{e}")?;
    }
    let passed = rows.iter().filter(|r| r.roundtrip).count();
    let failed = rows.len() - passed + errors.len();
    writeln!(
        out,
        "{} records: {passed} passed, {failed} failed",
        rows.len() + errors.len()
    )?;
    print!("{out}");

    if let Some(path) = traces {
        let mut w = create(path)?;
        for row in &rows {
            writeln!(w, "# {}", row.doc_key)?;
            if let Some(trace) = &row.trace {
                write!(w, "{trace}")?;
                if !trace.is_empty() && !trace.ends_with('\n') {
                    writeln!(w)?;
                }
            }
        }
        w.flush()?;
        write_manifest(
            ctx,
            "oracle",
            path,
            json!({ "corpus": corpus, "passed": passed, "failed": failed, "documents": rows }),
        )?;
    }
    if failed > 0 {
        return Err(anyhow!("{failed} record(s) failed the oracle check").into());
    }
    Ok(())
}

pub fn train(ctx: &Ctx, corpus_path: &Path, out: &Path) -> CliResult {
    let corpus = read_corpus(corpus_path)?;
    let config = &ctx.config;
    let mut model = ScoringModel::new(config.model.clone());
    let history = train_model(&mut model, &corpus, &config.train, |e| {
        eprintln!(
            "epoch {:>2}: mention loss {:.4} coref loss {:.4} action acc {:.4} coref acc {:.4}",
            e.epoch, e.mention_loss, e.coref_loss, e.action_accuracy, e.coref_accuracy
        );
    })
    .map_err(|e| match e {
        TrainError::NonFinite { .. } => CliError {
            status: Status::Numerical,
            error: e.into(),
        },
        TrainError::EmptyCorpus => CliError::usage(e),
        e => e.into(),
    })?;
    let final_stats = evaluate_teacher_forced(&model, &corpus)?;

    let mut w = create(out)?;
    save_checkpoint(&model, &mut w)?;
    write_manifest(
        ctx,
        "train",
        out,
        json!({
            "corpus": corpus_path,
            "documents": corpus.len(),
            "parameters": model.num_params(),
            "action_weights": model.action_weights,
            "epochs": history,
            "final": final_stats,
            "actions": Action::ALL.map(|a| a.mnemonic()),
        }),
    )?;
    eprintln!(
        "final: loss {:.4}, action accuracy {:.4} (PUSH {:.4} ADVANCE {:.4} POP {:.4} PEEK {:.4})",
        final_stats.loss(),
        final_stats.action_accuracy,
        final_stats.per_action_accuracy[Action::Push.index()],
        final_stats.per_action_accuracy[Action::Advance.index()],
        final_stats.per_action_accuracy[Action::Pop.index()],
        final_stats.per_action_accuracy[Action::Peek.index()],
    );
    Ok(())
}

pub struct PredictArgs<'a> {
    pub corpus: &'a Path,
    pub checkpoint: &'a Path,
    pub out: &'a Path,
    pub k: usize,
    pub budget: usize,
    pub emit_partials: Option<&'a Path>,
}

pub fn predict(ctx: &Ctx, args: PredictArgs) -> CliResult {
    let corpus = read_corpus(args.corpus)?;
    let file = File::open(args.checkpoint)
        .with_context(|| format!("opening {}", args.checkpoint.display()))?;
    let expected = ctx.explicit_config.then_some(&ctx.config.model);
    let model = load_checkpoint(BufReader::new(file), expected)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    for doc in &corpus {
        window_schedule(doc, args.k, args.budget)
            .map_err(|e| CliError::usage(anyhow!("document {}: {e}", doc.doc_key)))?;
    }

    let results = ctx.pool.install(|| {
        corpus
            .par_iter()
            .map(|doc| {
                stream_decode(doc, &model, args.k, args.budget, None).expect("schedule checked")
            })
            .collect::<Vec<_>>()
    });

    let mut w = create(args.out)?;
    for (doc, result) in corpus.iter().zip(&results) {
        writeln!(w, "{}", write_predictions(doc, &result.output.clusters)?)?;
    }
    w.flush()?;

    if let Some(path) = args.emit_partials {
        let mut w = create(path)?;
        for (doc, result) in corpus.iter().zip(&results) {
            let schedule = window_schedule(doc, args.k, args.budget).expect("schedule checked");
            for (i, (segment, clusters)) in
                schedule.segments.iter().zip(&result.partials).enumerate()
            {
                let record = json!({
                    "doc_key": doc.doc_key,
                    "window": i,
                    "sentences": [segment.sentences.start, segment.sentences.end],
                    "visible": [segment.cache.start, segment.active.end],
                    "clusters": clusters,
                });
                writeln!(w, "{record}")?;
            }
        }
        w.flush()?;
    }

    write_manifest(
        ctx,
        "predict",
        args.out,
        json!({
            "corpus": args.corpus,
            "checkpoint": args.checkpoint,
            "checkpoint_config_hash": shiftcoref::model::config_hash(model.config()),
            "k": args.k,
            "budget": args.budget,
            "documents": corpus.len(),
            "partials": args.emit_partials,
        }),
    )?;
    eprintln!(
        "wrote predictions for {} documents to {}",
        corpus.len(),
        args.out.display()
    );
    Ok(())
}

fn read_aligned(gold: &Path, pred: &Path) -> CliResult<(Vec<Document>, Vec<Document>)> {
    let gold = read_corpus(gold)?;
    let pred = read_corpus(pred)?;
    check_alignment(&gold, &pred)?;
    Ok((gold, pred))
}

fn write_record(path: Option<&Path>, record: serde_json::Value) -> CliResult {
    if let Some(path) = path {
        fs::write(path, serde_json::to_string_pretty(&record)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn score(
    ctx: &Ctx,
    gold: &Path,
    pred: &Path,
    keep_singletons: bool,
    partition_size: Option<usize>,
    json_out: Option<&Path>,
) -> CliResult {
    let (gold_docs, pred_docs) = read_aligned(gold, pred)?;
    let pairs: Vec<_> = gold_docs
        .iter()
        .zip(&pred_docs)
        .map(|(g, p)| {
            if keep_singletons {
                (g.gold_clusters.clone(), p.gold_clusters.clone())
            } else {
                (
                    g.gold_clusters.without_singletons(),
                    p.gold_clusters.without_singletons(),
                )
            }
        })
        .collect();
    let per_doc: Vec<MetricReport> = ctx
        .pool
        .install(|| pairs.par_iter().map(|(g, p)| conll(g, p)).collect());
    let mut scorer = CorpusScorer::new();
    for (g, p) in &pairs {
        scorer.add(g, p);
    }
    let corpus = scorer.report();

    let mut out = String::new();
    writeln!(
        out,
        "{:<24}{:>8}{:>8}{:>8}{:>8}",
        "doc_key", "MUC", "B3", "CEAF", "Avg."
    )?;
    for (doc, r) in gold_docs.iter().zip(&per_doc) {
        writeln!(
            out,
            "{:<24}{:>8.4}{:>8.4}{:>8.4}{:>8.4}",
            doc.doc_key, r.muc.f1, r.b_cubed.f1, r.ceaf_phi4.f1, r.conll_f1
        )?;
    }
    writeln!(out)?;
    out.push_str(&corpus.table());

    let partitioned = match partition_size {
        Some(size) => {
            let spec = PartitionSpec::new(size).map_err(CliError::usage)?;
            let report = partition_eval(&gold_docs, &pred_docs, spec)?;
            writeln!(out, "\npartition size {size}")?;
            out.push_str(&report.table());
            Some(report)
        }
        None => None,
    };
    print!("{out}");

    let documents: Vec<_> = gold_docs
        .iter()
        .zip(&per_doc)
        .map(|(d, r)| json!({ "doc_key": d.doc_key, "report": r }))
        .collect();
    write_record(
        json_out,
        json!({
            "config_hash": ctx.config.hash(),
            "keep_singletons": keep_singletons,
            "documents": documents,
            "corpus": corpus,
            "partition_size": partition_size,
            "partitioned": partitioned,
        }),
    )
}

pub fn partition(
    ctx: &Ctx,
    gold: &Path,
    pred: &Path,
    size: usize,
    json_out: Option<&Path>,
) -> CliResult {
    let (gold_docs, pred_docs) = read_aligned(gold, pred)?;
    let spec = PartitionSpec::new(size).map_err(CliError::usage)?;
    let report = partition_eval(&gold_docs, &pred_docs, spec)?;
    println!("partition size {size}");
    print!("{}", report.table());
    write_record(
        json_out,
        json!({ "config_hash": ctx.config.hash(), "partition_size": size, "report": report }),
    )
}
