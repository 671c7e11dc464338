//! Sentence-incremental decoding and partitioned evaluation.
//!
//! A document is decoded `k` sentences at a time. While a window is active
//! the encoder sees its tokens plus the most recent preceding tokens that
//! fit in the budget; older tokens are hidden, but the clusters they formed
//! stay in memory.

use std::ops::Range;

use thiserror::Error;

use crate::corpus::{ClusterSet, Document};
use crate::metrics::{check_alignment, AlignmentError, CorpusScorer, MetricReport};
use crate::model::{DecodeOutput, DecodeSession, Encoder, ReadAudit, ScoringModel};

/// Token budget shared by active and cached tokens.
pub const DEFAULT_BUDGET: usize = 512;

/// One active window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    /// Sentence indices decoded in this window.
    pub sentences: Range<usize>,
    /// Token range of those sentences.
    pub active: Range<usize>,
    /// Preceding tokens kept visible.
    pub cache: Range<usize>,
}

impl Segment {
    /// Everything the encoder may read: `[cache.start, active.end)`.
    pub fn visible(&self) -> Range<usize> {
        self.cache.start..self.active.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSchedule {
    pub k: usize,
    pub budget: usize,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error(
        "sentences {}..{} hold {tokens} tokens, over the budget of {budget}; use a smaller k",
        sentences.start, sentences.end
    )]
    WindowTooLarge {
        sentences: Range<usize>,
        tokens: usize,
        budget: usize,
    },
}

/// Consecutive `k`-sentence windows, each caching the latest preceding
/// tokens that fit in `budget`.
pub fn window_schedule(
    doc: &Document,
    k: usize,
    budget: usize,
) -> Result<WindowSchedule, ScheduleError> {
    if k == 0 {
        return Err(ScheduleError::ZeroK);
    }
    let starts = doc.sentence_starts();
    let n = doc.num_tokens();
    let num_sentences = starts.len();
    let mut segments = Vec::with_capacity(num_sentences.div_ceil(k));
    for first in (0..num_sentences).step_by(k) {
        let last = (first + k).min(num_sentences);
        let active = starts[first]..starts.get(last).copied().unwrap_or(n);
        if active.len() > budget {
            return Err(ScheduleError::WindowTooLarge {
                sentences: first..last,
                tokens: active.len(),
                budget,
            });
        }
        let cached = (budget - active.len()).min(active.start);
        segments.push(Segment {
            sentences: first..last,
            cache: active.start - cached..active.start,
            active,
        });
    }
    Ok(WindowSchedule {
        k,
        budget,
        segments,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamResult {
    /// Non-singleton clusters after each window.
    pub partials: Vec<ClusterSet>,
    pub output: DecodeOutput,
}

/// Decodes `doc` window by window with a persistent cluster memory.
pub fn stream_decode<E: Encoder>(
    doc: &Document,
    model: &ScoringModel<E>,
    k: usize,
    budget: usize,
    audit: Option<&ReadAudit>,
) -> Result<StreamResult, ScheduleError> {
    let schedule = window_schedule(doc, k, budget)?;
    let mut session = DecodeSession::new(model, doc);
    let mut partials = Vec::with_capacity(schedule.segments.len());
    for segment in &schedule.segments {
        session.run_until(segment.active.end, &segment.visible(), audit);
        partials.push(session.partial());
    }
    debug_assert!(session.is_finished());
    Ok(StreamResult {
        partials,
        output: session.finish(),
    })
}

/// True when every mention of `earlier` sits in `later`, and mentions that
/// shared a cluster still do.
pub fn is_refinement(earlier: &ClusterSet, later: &ClusterSet) -> bool {
    let mut home = std::collections::HashMap::new();
    for (c, cluster) in later.iter().enumerate() {
        for m in cluster {
            home.insert(*m, c);
        }
    }
    earlier.iter().all(|cluster| {
        let first = home.get(&cluster[0]);
        first.is_some() && cluster.iter().all(|m| home.get(m) == first)
    })
}

/// Sentences per evaluation segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionSpec {
    partition_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartitionError {
    #[error("partition size must be at least 1")]
    ZeroSize,
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
}

impl PartitionSpec {
    pub fn new(partition_size: usize) -> Result<Self, PartitionError> {
        if partition_size == 0 {
            Err(PartitionError::ZeroSize)
        } else {
            Ok(PartitionSpec { partition_size })
        }
    }

    pub fn partition_size(&self) -> usize {
        self.partition_size
    }
}

/// Splits every cluster at segment boundaries and drops the resulting
/// singletons. A mention belongs to the segment of its left boundary.
pub fn partition_clusters(
    clusters: &ClusterSet,
    doc: &Document,
    spec: PartitionSpec,
) -> ClusterSet {
    let sentence_of = doc.sentence_map();
    let mut out = Vec::new();
    for cluster in clusters.iter() {
        let mut groups: Vec<(usize, Vec<_>)> = Vec::new();
        for m in cluster {
            let segment = sentence_of[m.start] / spec.partition_size;
            match groups.iter_mut().find(|(s, _)| *s == segment) {
                Some((_, members)) => members.push(*m),
                None => groups.push((segment, vec![*m])),
            }
        }
        out.extend(groups.into_iter().map(|(_, g)| g).filter(|g| g.len() >= 2));
    }
    ClusterSet::new(out)
}

/// Corpus score after partitioning both sides.
pub fn partition_eval(
    gold: &[Document],
    pred: &[Document],
    spec: PartitionSpec,
) -> Result<MetricReport, PartitionError> {
    check_alignment(gold, pred)?;
    let mut scorer = CorpusScorer::new();
    for (g, p) in gold.iter().zip(pred) {
        scorer.add(
            &partition_clusters(&g.gold_clusters, g, spec),
            &partition_clusters(&p.gold_clusters, g, spec),
        );
    }
    Ok(scorer.report())
}
