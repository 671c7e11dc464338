//! MUC, B-cubed and CEAF-phi4, plus their average.
//!
//! Each metric is computed as recall and precision numerator/denominator
//! pairs so corpus scores can be aggregated the way the reference scorer
//! does it: sum numerators and denominators across documents, then divide.
//! Undefined ratios score zero. Mentions match only on exact spans.

mod assignment;

use std::collections::HashMap;
use std::fmt;
use std::ops::AddAssign;

use serde::Serialize;

use crate::corpus::{ClusterSet, Document, MentionSpan};

pub use assignment::{max_weight_assignment, Assignment};

/// Recall and precision as unreduced fractions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Counts {
    pub recall_num: f64,
    pub recall_den: f64,
    pub precision_num: f64,
    pub precision_den: f64,
}

impl AddAssign for Counts {
    fn add_assign(&mut self, rhs: Counts) {
        self.recall_num += rhs.recall_num;
        self.recall_den += rhs.recall_den;
        self.precision_num += rhs.precision_num;
        self.precision_den += rhs.precision_den;
    }
}

impl Counts {
    pub fn score(&self) -> Score {
        Score::new(
            ratio(self.recall_num, self.recall_den),
            ratio(self.precision_num, self.precision_den),
        )
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Score {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl Score {
    pub fn new(recall: f64, precision: f64) -> Self {
        let f1 = if recall + precision == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Score {
            recall,
            precision,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub muc: Score,
    pub b_cubed: Score,
    pub ceaf_phi4: Score,
    pub conll_f1: f64,
}

impl MetricReport {
    /// Aligned text table: R/P/F1 per metric and the average F1.
    pub fn table(&self) -> String {
        let mut out = format!("{:<10}{:>8}{:>8}{:>8}\n", "metric", "Rec.", "Prec.", "F1");
        for (name, s) in [
            ("MUC", self.muc),
            ("B3", self.b_cubed),
            ("CEAFphi4", self.ceaf_phi4),
        ] {
            out.push_str(&format!(
                "{:<10}{:>8.2}{:>8.2}{:>8.2}\n",
                name,
                100.0 * s.recall,
                100.0 * s.precision,
                100.0 * s.f1
            ));
        }
        out.push_str(&format!(
            "{:<10}{:>24.2}\n",
            "Avg. F1",
            100.0 * self.conll_f1
        ));
        out
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}

fn cluster_index(clusters: &ClusterSet) -> HashMap<MentionSpan, usize> {
    clusters
        .iter()
        .enumerate()
        .flat_map(|(c, members)| members.iter().map(move |m| (*m, c)))
        .collect()
}

/// Sum over `keys` clusters of `|K| - partitions(K)` and `|K| - 1`.
fn muc_side(keys: &ClusterSet, responses: &ClusterSet) -> (f64, f64) {
    let response_of = cluster_index(responses);
    let mut num = 0.0;
    let mut den = 0.0;
    for cluster in keys.iter() {
        let mut seen: Vec<usize> = Vec::with_capacity(cluster.len());
        let mut unaligned = 0;
        for m in cluster {
            match response_of.get(m) {
                Some(&c) if !seen.contains(&c) => seen.push(c),
                Some(_) => {}
                None => unaligned += 1,
            }
        }
        let partitions = seen.len() + unaligned;
        num += (cluster.len() - partitions) as f64;
        den += cluster.len().saturating_sub(1) as f64;
    }
    (num, den)
}

pub fn muc_counts(gold: &ClusterSet, pred: &ClusterSet) -> Counts {
    let (recall_num, recall_den) = muc_side(gold, pred);
    let (precision_num, precision_den) = muc_side(pred, gold);
    Counts {
        recall_num,
        recall_den,
        precision_num,
        precision_den,
    }
}

/// Sum over `keys` clusters of `sum_R |K n R|^2 / |K|`, and the mention count.
fn b_cubed_side(keys: &ClusterSet, responses: &ClusterSet) -> (f64, f64) {
    let response_of = cluster_index(responses);
    let mut num = 0.0;
    let mut den = 0.0;
    for cluster in keys.iter() {
        let mut overlap: HashMap<usize, usize> = HashMap::new();
        for m in cluster {
            if let Some(&c) = response_of.get(m) {
                *overlap.entry(c).or_default() += 1;
            }
        }
        let size = cluster.len() as f64;
        num += overlap.values().map(|&k| (k * k) as f64).sum::<f64>() / size;
        den += size;
    }
    (num, den)
}

pub fn b_cubed_counts(gold: &ClusterSet, pred: &ClusterSet) -> Counts {
    let (recall_num, recall_den) = b_cubed_side(gold, pred);
    let (precision_num, precision_den) = b_cubed_side(pred, gold);
    Counts {
        recall_num,
        recall_den,
        precision_num,
        precision_den,
    }
}

/// `2 |G n P| / (|G| + |P|)`.
pub fn phi4(gold: &[MentionSpan], pred: &[MentionSpan]) -> f64 {
    let common = gold.iter().filter(|m| pred.contains(m)).count();
    2.0 * common as f64 / (gold.len() + pred.len()) as f64
}

pub fn ceaf_phi4_counts(gold: &ClusterSet, pred: &ClusterSet) -> Counts {
    let pred_of = cluster_index(pred);
    let mut similarity = vec![vec![0.0; pred.len()]; gold.len()];
    for (g, cluster) in gold.iter().enumerate() {
        let mut overlap: HashMap<usize, usize> = HashMap::new();
        for m in cluster {
            if let Some(&p) = pred_of.get(m) {
                *overlap.entry(p).or_default() += 1;
            }
        }
        for (p, common) in overlap {
            similarity[g][p] =
                2.0 * common as f64 / (cluster.len() + pred.clusters[p].len()) as f64;
        }
    }
    let best = max_weight_assignment(&similarity).value;
    Counts {
        recall_num: best,
        recall_den: gold.len() as f64,
        precision_num: best,
        precision_den: pred.len() as f64,
    }
}

pub fn muc(gold: &ClusterSet, pred: &ClusterSet) -> Score {
    muc_counts(gold, pred).score()
}

pub fn b_cubed(gold: &ClusterSet, pred: &ClusterSet) -> Score {
    b_cubed_counts(gold, pred).score()
}

pub fn ceaf_phi4(gold: &ClusterSet, pred: &ClusterSet) -> Score {
    ceaf_phi4_counts(gold, pred).score()
}

/// Corpus-level accumulator; merging is associative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CorpusScorer {
    pub muc: Counts,
    pub b_cubed: Counts,
    pub ceaf_phi4: Counts,
}

impl CorpusScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn document(gold: &ClusterSet, pred: &ClusterSet) -> Self {
        CorpusScorer {
            muc: muc_counts(gold, pred),
            b_cubed: b_cubed_counts(gold, pred),
            ceaf_phi4: ceaf_phi4_counts(gold, pred),
        }
    }

    pub fn add(&mut self, gold: &ClusterSet, pred: &ClusterSet) {
        *self += CorpusScorer::document(gold, pred);
    }

    pub fn report(&self) -> MetricReport {
        let muc = self.muc.score();
        let b_cubed = self.b_cubed.score();
        let ceaf_phi4 = self.ceaf_phi4.score();
        MetricReport {
            muc,
            b_cubed,
            ceaf_phi4,
            conll_f1: (muc.f1 + b_cubed.f1 + ceaf_phi4.f1) / 3.0,
        }
    }
}

impl AddAssign for CorpusScorer {
    fn add_assign(&mut self, rhs: CorpusScorer) {
        self.muc += rhs.muc;
        self.b_cubed += rhs.b_cubed;
        self.ceaf_phi4 += rhs.ceaf_phi4;
    }
}

/// Single-document report.
pub fn conll(gold: &ClusterSet, pred: &ClusterSet) -> MetricReport {
    CorpusScorer::document(gold, pred).report()
}

/// Corpus report over aligned `(gold, pred)` pairs.
pub fn conll_corpus<'a>(
    pairs: impl IntoIterator<Item = (&'a ClusterSet, &'a ClusterSet)>,
) -> MetricReport {
    let mut scorer = CorpusScorer::new();
    for (gold, pred) in pairs {
        scorer.add(gold, pred);
    }
    scorer.report()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AlignmentError {
    #[error("gold has {gold} documents, predictions have {pred}")]
    Length { gold: usize, pred: usize },
    #[error("document {index}: gold key {gold:?} but predicted key {pred:?}")]
    Key {
        index: usize,
        gold: String,
        pred: String,
    },
}

/// Checks that `pred` lists the same documents as `gold`, in order.
pub fn check_alignment(gold: &[Document], pred: &[Document]) -> Result<(), AlignmentError> {
    if gold.len() != pred.len() {
        return Err(AlignmentError::Length {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    for (index, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.doc_key != p.doc_key {
            return Err(AlignmentError::Key {
                index,
                gold: g.doc_key.clone(),
                pred: p.doc_key.clone(),
            });
        }
    }
    Ok(())
}

/// Corpus report of predicted against gold clusters, singletons removed
/// from both sides.
pub fn score_documents(
    gold: &[Document],
    pred: &[Document],
) -> Result<MetricReport, AlignmentError> {
    check_alignment(gold, pred)?;
    let mut scorer = CorpusScorer::new();
    for (g, p) in gold.iter().zip(pred) {
        scorer.add(
            &g.gold_clusters.without_singletons(),
            &p.gold_clusters.without_singletons(),
        );
    }
    Ok(scorer.report())
}
