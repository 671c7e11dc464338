//! Acceptance criteria 1-10, one line each.
//!
//! Runs without the libtest harness so every criterion reports even when an
//! earlier one fails. Exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::*;
use shiftcoref::clustering::{ClusterMemory, CorefChoice};
use shiftcoref::corpus::{
    auto_workers_document, synthesize_corpus, ClusterSet, Document, MentionSpan, SynthConfig,
};
use shiftcoref::incremental::{
    is_refinement, partition_eval, stream_decode, PartitionSpec, DEFAULT_BUDGET,
};
use shiftcoref::metrics::{b_cubed, ceaf_phi4, max_weight_assignment, muc, score_documents, Score};
use shiftcoref::model::{
    compute_action_weights, decode_document, gradient_check, train_model, ModelConfig, ReadAudit,
    ScoringModel, TrainConfig, WindowPolicy,
};
use shiftcoref::oracle::{derive_actions, split_steps, verify_roundtrip};
use shiftcoref::transition::{Action, TransitionState};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

/// An error and its sources, joined with ": ".
fn chain(e: impl std::error::Error) -> String {
    let mut out = e.to_string();
    let mut source = e.source();
    while let Some(s) = source {
        out = format!("{out}: {s}");
        source = s.source();
    }
    out
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("took {elapsed:.1?}, limit {limit:?}")
    })
}

fn roundtrip_corpus() -> &'static Vec<Document> {
    static CORPUS: OnceLock<Vec<Document>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        synthesize_corpus(&SynthConfig {
            num_docs: 1000,
            seed: 2,
            ..SynthConfig::default()
        })
        .expect("valid synth config")
    })
}

struct Trained {
    model: ScoringModel,
    heldout: Vec<Document>,
    train_time: Duration,
}

/// The criterion-8 model: default configs, 500 training documents.
fn trained() -> &'static Trained {
    static TRAINED: OnceLock<Trained> = OnceLock::new();
    TRAINED.get_or_init(|| {
        let start = Instant::now();
        let train_docs = synthesize_corpus(&SynthConfig {
            num_docs: 500,
            seed: 8,
            doc_key_prefix: "train".into(),
            ..SynthConfig::default()
        })
        .expect("valid synth config");
        let heldout = synthesize_corpus(&SynthConfig {
            num_docs: 100,
            seed: 9,
            doc_key_prefix: "heldout".into(),
            ..SynthConfig::default()
        })
        .expect("valid synth config");
        let mut model = ScoringModel::new(ModelConfig::default());
        let config = TrainConfig::default();
        train_model(&mut model, &train_docs, &config, |s| {
            eprintln!(
                "  epoch {:2}: loss {:.2} action acc {:.4} coref acc {:.4}",
                s.epoch,
                s.loss(),
                s.action_accuracy,
                s.coref_accuracy
            )
        })
        .expect("training succeeds");
        Trained {
            model,
            heldout,
            train_time: start.elapsed(),
        }
    })
}

fn with_clusters(doc: &Document, clusters: ClusterSet) -> Document {
    Document {
        gold_clusters: clusters,
        ..doc.clone()
    }
}

fn predict(docs: &[Document], model: &ScoringModel, policy: WindowPolicy) -> Vec<Document> {
    docs.iter()
        .map(|d| with_clusters(d, decode_document(d, model, policy).clusters))
        .collect()
}

fn criterion_1() -> Outcome {
    use Action::*;
    let start = Instant::now();
    let doc = auto_workers_document();
    let steps = derive_actions(&doc).map_err(chain)?;
    let (actions, choices) = split_steps(&steps);
    let expected = [
        Push, Advance, Pop, Advance, Advance, Push, Peek, Advance, Pop, Advance,
    ];
    ensure(actions == expected, || format!("trace {actions:?}"))?;
    let all = shiftcoref::transition::replay(&doc, &actions, &choices).map_err(chain)?;
    let before = ClusterSet::new(vec![
        vec![MentionSpan::new(0, 1), MentionSpan::new(3, 3)],
        vec![MentionSpan::new(3, 4)],
    ]);
    let after = ClusterSet::new(vec![vec![MentionSpan::new(0, 1), MentionSpan::new(3, 3)]]);
    ensure(all == before, || {
        format!("clusters before singleton removal {all:?}")
    })?;
    ensure(all.without_singletons() == after, || {
        "clusters after singleton removal".into()
    })?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("10 actions in {:.1?}", start.elapsed()))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let corpus = roundtrip_corpus();
    for doc in corpus {
        ensure(doc.num_tokens() <= 120, || {
            format!("{} has {} tokens", doc.doc_key, doc.num_tokens())
        })?;
        ensure(nesting_depth(doc) <= 3, || {
            format!("{} nests deeper than 3", doc.doc_key)
        })?;
    }
    let failures: Vec<&str> = corpus
        .iter()
        .filter(|d| !verify_roundtrip(d))
        .map(|d| d.doc_key.as_str())
        .collect();
    ensure(failures.is_empty(), || {
        format!("round-trip failed for {failures:?}")
    })?;
    let deepest = corpus.iter().map(nesting_depth).max().unwrap_or(0);
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "{} docs, max depth {deepest}, {:.1?}",
        corpus.len(),
        start.elapsed()
    ))
}

fn check_bound(doc: &Document, actions: &[Action], what: &str) -> Result<(), String> {
    let n = doc.num_tokens();
    let advances = actions.iter().filter(|a| **a == Action::Advance).count();
    ensure(actions.len() <= 4 * n && advances == n, || {
        format!(
            "{what} trace of {}: {} actions, {advances} ADVANCE, n = {n}",
            doc.doc_key,
            actions.len()
        )
    })
}

fn criterion_3() -> Outcome {
    let corpus = roundtrip_corpus();
    let fresh = ScoringModel::new(ModelConfig {
        seed: 3,
        ..ModelConfig::default()
    });
    let trained = &trained().model;
    let start = Instant::now();
    let mut decoded = 0;
    for doc in corpus {
        let steps = derive_actions(doc).map_err(chain)?;
        let (actions, _) = split_steps(&steps);
        check_bound(doc, &actions, "oracle")?;
        for model in [&fresh, trained] {
            let out = decode_document(doc, model, WindowPolicy::Full);
            check_bound(doc, &out.actions, "greedy")?;
            decoded += 1;
        }
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "{} oracle + {decoded} greedy traces (untrained and trained), {:.1?}",
        corpus.len(),
        start.elapsed()
    ))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut longest = 0;
    for walk in 0..10_000 {
        let n = rng.gen_range(0..=40);
        let mut state = TransitionState::initial(n);
        let mut steps = 0;
        while !state.is_terminal() {
            let valid = state
                .valid_actions()
                .map_err(|e| format!("walk {walk}: {e}"))?;
            ensure(!valid.is_empty(), || {
                format!("walk {walk}: empty valid set at {state:?}")
            })?;
            let options: Vec<Action> = valid.iter().collect();
            let action = options[rng.gen_range(0..options.len())];
            state
                .apply(action)
                .map_err(|e| format!("walk {walk}: {e}"))?;
            steps += 1;
            ensure(steps <= 4 * n, || {
                format!("walk {walk}: more than 4n actions on n = {n}")
            })?;
        }
        longest = longest.max(steps);
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "10000 walks terminated, longest {longest} actions, {:.1?}",
        start.elapsed()
    ))
}

fn scores(s: Score) -> Prf {
    (s.recall, s.precision, s.f1)
}

fn compare_all(gold: &ClusterSet, pred: &ClusterSet, ceaf_ref: Prf) -> Result<(), String> {
    let pairs = [
        ("MUC", scores(muc(gold, pred)), muc_reference(gold, pred)),
        (
            "B3",
            scores(b_cubed(gold, pred)),
            b_cubed_reference(gold, pred),
        ),
        ("CEAF", scores(ceaf_phi4(gold, pred)), ceaf_ref),
    ];
    for (name, got, want) in pairs {
        ensure(close(got, want, 1e-9), || {
            format!(
                "{name} on gold {:?} pred {:?}: {got:?} vs reference {want:?}",
                gold.canonical(),
                pred.canonical()
            )
        })?;
    }
    Ok(())
}

fn criterion_5() -> Outcome {
    let start = Instant::now();

    let exact = [
        (
            2.0 / 3.0,
            muc(&clusters(&[&[0, 1, 2]]), &clusters(&[&[0, 1], &[2]])).f1,
        ),
        (
            2.0 / 3.0,
            b_cubed(&clusters(&[&[0, 1], &[2, 3]]), &clusters(&[&[0, 1, 2, 3]])).f1,
        ),
        (
            8.0 / 15.0,
            ceaf_phi4(&clusters(&[&[0, 1], &[2]]), &clusters(&[&[0, 1, 2]])).f1,
        ),
    ];
    for (want, got) in exact {
        ensure(got == want, || {
            format!("hand-derived vector: {got} != {want}")
        })?;
    }

    let mut pairs = 0usize;
    for n in 1..=6 {
        let parts = partial_partitions(n);
        parts.par_iter().try_for_each(|gold| {
            parts
                .iter()
                .try_for_each(|pred| compare_all(gold, pred, ceaf_reference(gold, pred)))
        })?;
        pairs += parts.len() * parts.len();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let instances: Vec<(ClusterSet, ClusterSet)> = (0..1000)
        .map(|_| {
            (
                random_clustering(&mut rng, 20, 0.9),
                random_clustering(&mut rng, 20, 0.9),
            )
        })
        .collect();
    instances.par_iter().try_for_each(|(gold, pred)| {
        let best = best_matching_dp(gold, pred);
        compare_all(gold, pred, ceaf_reference_with(gold, pred, best))
    })?;

    let mut matrices = 0;
    for _ in 0..2000 {
        let rows = rng.gen_range(0..=6);
        let cols = rng.gen_range(0..=6);
        let w: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                (0..cols)
                    .map(|_| {
                        if rng.gen_bool(0.3) {
                            0.0
                        } else {
                            rng.gen_range(0.0..1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let got = max_weight_assignment(&w).value;
        let want = if rows == 0 || cols == 0 {
            0.0
        } else {
            brute_force_assignment(&w)
        };
        ensure((got - want).abs() <= 1e-9, || {
            format!("assignment {got} vs enumeration {want} on {w:?}")
        })?;
        matrices += 1;
    }
    within(start.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "{pairs} exhaustive pairs, 1000 random 20-mention instances, {matrices} assignment matrices, {:.1?}",
        start.elapsed()
    ))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let dim = rng.gen_range(1..=8);
        let mut memory = ClusterMemory::new(dim);
        let mut members: Vec<Vec<Vec<f64>>> = Vec::new();
        let updates = rng.gen_range(1..=150);
        for u in 0..updates {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let open: Vec<usize> = (0..members.len())
                .filter(|&c| members[c].len() < 50)
                .collect();
            let choice = if open.is_empty() || rng.gen_bool(0.1) {
                CorefChoice::New
            } else {
                CorefChoice::Link(open[rng.gen_range(0..open.len())])
            };
            let index = memory.apply_choice(choice, MentionSpan::new(u, u), &v);
            if index == members.len() {
                members.push(Vec::new());
            }
            members[index].push(v);
        }
        for (entry, vs) in memory.entries().iter().zip(&members) {
            for d in 0..dim {
                let mean = vs.iter().map(|v| v[d]).sum::<f64>() / vs.len() as f64;
                let err = (entry.representation[d] - mean).abs() / mean.abs().max(1.0);
                worst = worst.max(err);
                ensure(err < 1e-9, || {
                    format!("trial {trial}: relative error {err:e}")
                })?;
            }
        }
    }
    Ok(format!(
        "1000 trials, worst relative error {worst:.1e}, {:.1?}",
        start.elapsed()
    ))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let doc = synthesize_corpus(&SynthConfig {
        num_docs: 1,
        seed: 7,
        ..SynthConfig::default()
    })
    .expect("valid synth config")
    .remove(0);
    let mut model = ScoringModel::new(ModelConfig::default());
    model.action_weights = compute_action_weights(std::slice::from_ref(&doc)).map_err(chain)?;
    let report = gradient_check(&model, &doc, 200, 7).map_err(chain)?;
    ensure(report.checked >= 200, || {
        format!("only {} parameters checked", report.checked)
    })?;
    ensure(report.max_relative_error < 1e-4, || format!("{report:?}"))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "max relative error {:.2e} over {} parameters, {:.1?}",
        report.max_relative_error,
        report.checked,
        start.elapsed()
    ))
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let t = trained();
    let preds = predict(&t.heldout, &t.model, WindowPolicy::Full);
    let report = score_documents(&t.heldout, &preds).map_err(chain)?;
    let total = t.train_time + start.elapsed();
    ensure(report.conll_f1 >= 0.85, || {
        format!("CoNLL F1 {:.4}\n{}", report.conll_f1, report.table())
    })?;
    within(total, Duration::from_secs(600))?;
    Ok(format!(
        "CoNLL F1 {:.4} (MUC {:.4}, B3 {:.4}, CEAF {:.4}) after 15 epochs, {total:.1?}",
        report.conll_f1, report.muc.f1, report.b_cubed.f1, report.ceaf_phi4.f1
    ))
}

fn criterion_9() -> Outcome {
    let t = trained();
    let model = &t.model;
    for doc in &t.heldout {
        let batch = decode_document(doc, model, WindowPolicy::Full);
        let k = doc.sentences.len().max(1);
        let streamed = stream_decode(doc, model, k, DEFAULT_BUDGET, None).map_err(chain)?;
        ensure(
            streamed.partials.len() == 1 && streamed.output == batch,
            || {
                format!(
                    "{}: k = sentence count differs from batch decoding",
                    doc.doc_key
                )
            },
        )?;

        let audit = ReadAudit::new();
        let inc = stream_decode(doc, model, 1, DEFAULT_BUDGET, Some(&audit)).map_err(chain)?;
        ensure(audit.violations() == 0, || {
            format!("{}: {} hidden reads", doc.doc_key, audit.violations())
        })?;
        for pair in inc.partials.windows(2) {
            ensure(is_refinement(&pair[0], &pair[1]), || {
                format!("{}: partials not monotone", doc.doc_key)
            })?;
        }
        ensure(inc.partials.last() == Some(&inc.output.clusters), || {
            format!("{}: last partial differs from output", doc.doc_key)
        })?;
    }

    // Long documents under a tight budget, so k = 1 evicts old tokens.
    let long = synthesize_corpus(&SynthConfig {
        num_docs: 40,
        seed: 10,
        sentences_per_doc: (20, 30),
        max_pronoun_distance: 20,
        doc_key_prefix: "long".into(),
        ..SynthConfig::default()
    })
    .expect("valid synth config");
    let budget = 64;
    let f1_at = |k: usize| -> Result<f64, String> {
        let audit = ReadAudit::new();
        let preds = long
            .iter()
            .map(|d| {
                stream_decode(d, model, k, budget, Some(&audit))
                    .map(|s| with_clusters(d, s.output.clusters))
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(chain)?;
        ensure(audit.violations() == 0, || format!("k = {k}: hidden reads"))?;
        Ok(score_documents(&long, &preds).map_err(chain)?.conll_f1)
    };
    let (f1_k1, f1_k4) = (f1_at(1)?, f1_at(4)?);
    ensure(f1_k4 >= f1_k1 - 0.01, || {
        format!("k=4 F1 {f1_k4:.4} < k=1 F1 {f1_k1:.4} - 0.01")
    })?;
    Ok(format!(
        "{} held-out docs identical at k = sentence count; long-range F1 k=1 {f1_k1:.4}, k=4 {f1_k4:.4}",
        t.heldout.len()
    ))
}

/// Links every gold mention to one in the next sentence, and nothing else.
fn cross_sentence_only(doc: &Document) -> ClusterSet {
    let sentence_of = doc.sentence_map();
    let mut mentions: Vec<MentionSpan> = doc.gold_clusters.mentions().collect();
    mentions.sort();
    let mut out = Vec::new();
    let mut used = vec![false; mentions.len()];
    for i in 0..mentions.len() {
        if used[i] {
            continue;
        }
        let s = sentence_of[mentions[i].start];
        if let Some(j) =
            (i + 1..mentions.len()).find(|&j| !used[j] && sentence_of[mentions[j].start] > s)
        {
            used[i] = true;
            used[j] = true;
            out.push(vec![mentions[i], mentions[j]]);
        }
    }
    ClusterSet::new(out)
}

fn criterion_10() -> Outcome {
    let t = trained();
    let mut docs: Vec<Document> = t.heldout.clone();
    docs.push(auto_workers_document());
    let preds = predict(&docs, &t.model, WindowPolicy::Full);
    let mut cross_checked = 0;
    for (gold, pred) in docs.iter().zip(&preds) {
        let whole = PartitionSpec::new(gold.sentences.len().max(1)).map_err(chain)?;
        let partitioned = partition_eval(
            std::slice::from_ref(gold),
            std::slice::from_ref(pred),
            whole,
        )
        .map_err(chain)?;
        let plain = score_documents(std::slice::from_ref(gold), std::slice::from_ref(pred))
            .map_err(chain)?;
        ensure(partitioned == plain, || {
            format!("{}: partitioned {partitioned:?} vs {plain:?}", gold.doc_key)
        })?;

        let cross = cross_sentence_only(gold);
        if !cross.is_empty() {
            let one = PartitionSpec::new(1).map_err(chain)?;
            let report = partition_eval(
                std::slice::from_ref(gold),
                &[with_clusters(gold, cross)],
                one,
            )
            .map_err(chain)?;
            ensure(report.conll_f1 == 0.0, || {
                format!("{}: cross-sentence links scored {report:?}", gold.doc_key)
            })?;
            cross_checked += 1;
        }
    }
    let max_sentences = docs.iter().map(|d| d.sentences.len()).max().unwrap_or(1);
    let corpus_whole = partition_eval(
        &docs,
        &preds,
        PartitionSpec::new(max_sentences).map_err(chain)?,
    )
    .map_err(chain)?;
    ensure(
        corpus_whole == score_documents(&docs, &preds).map_err(chain)?,
        || "corpus-level partition identity".into(),
    )?;
    Ok(format!(
        "{} docs identical when unpartitioned; {cross_checked} cross-only predictions score 0",
        docs.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        (
            "oracle conformance on the auto-workers example",
            criterion_1,
        ),
        ("oracle round-trip on 1000 synthetic documents", criterion_2),
        (
            "linear action bound for oracle and greedy traces",
            criterion_3,
        ),
        ("random valid walks always terminate", criterion_4),
        ("metrics agree with brute-force references", criterion_5),
        ("running-mean cluster representations", criterion_6),
        ("analytic gradients match finite differences", criterion_7),
        ("end-to-end learning reaches CoNLL F1 >= 0.85", criterion_8),
        ("incremental decoding limit and ordering", criterion_9),
        ("partition-eval identity", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
