//! Online entity memory.
//!
//! Each mention candidate is scored against every existing cluster and a
//! fixed new-cluster threshold; the argmax either links the mention (and
//! folds its representation into the cluster's running mean) or opens a new
//! cluster. Clusters are never evicted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ClusterSet, MentionSpan};

/// Score of the new-cluster slot.
pub const NEW_CLUSTER_THRESHOLD: f64 = 0.0;
/// Cap on the entity-count feature.
pub const MAX_ENTITY_COUNT: usize = 10;
/// Cap on the mention-distance feature.
pub const MAX_MENTION_DISTANCE: usize = 10;

/// Resolution of one mention candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorefChoice {
    /// Join the cluster with this creation-order index.
    Link(usize),
    New,
}

/// How the previous candidate was resolved.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum PreviousCoref {
    #[default]
    None,
    Linked,
    New,
}

impl PreviousCoref {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Bucketed pairwise features between a candidate and one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorefFeatures {
    pub entity_count: usize,
    pub mention_distance: usize,
    pub previous: PreviousCoref,
    pub genre: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEntry {
    pub representation: Vec<f64>,
    pub members: Vec<MentionSpan>,
    /// Candidate ordinal of each member.
    pub member_ordinals: Vec<usize>,
    pub last_update_ordinal: usize,
}

impl ClusterEntry {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ClusteringError {
    #[error("span representation has dimension {found}, memory expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("cluster {0} does not exist")]
    NoSuchCluster(usize),
}

/// Scores a candidate representation against one cluster.
pub trait ClusterScorer {
    fn score(&self, candidate: &[f64], cluster: &ClusterEntry, features: &CorefFeatures) -> f64;
}

impl<F> ClusterScorer for F
where
    F: Fn(&[f64], &ClusterEntry, &CorefFeatures) -> f64,
{
    fn score(&self, candidate: &[f64], cluster: &ClusterEntry, features: &CorefFeatures) -> f64 {
        self(candidate, cluster, features)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMemory {
    dim: usize,
    entries: Vec<ClusterEntry>,
    candidate_counter: usize,
    previous: PreviousCoref,
}

impl ClusterMemory {
    /// Empty memory for span representations of dimension `dim`.
    pub fn new(dim: usize) -> Self {
        ClusterMemory {
            dim,
            entries: Vec::new(),
            candidate_counter: 0,
            previous: PreviousCoref::None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ClusterEntry] {
        &self.entries
    }

    pub fn candidate_counter(&self) -> usize {
        self.candidate_counter
    }

    pub fn previous(&self) -> PreviousCoref {
        self.previous
    }

    /// Features between the next candidate and cluster `index`.
    pub fn features(&self, index: usize, genre: usize) -> CorefFeatures {
        let entry = &self.entries[index];
        CorefFeatures {
            entity_count: entry.size().min(MAX_ENTITY_COUNT),
            mention_distance: (self.candidate_counter - entry.last_update_ordinal)
                .min(MAX_MENTION_DISTANCE),
            previous: self.previous,
            genre,
        }
    }

    fn check_dim(&self, candidate: &[f64]) -> Result<(), ClusteringError> {
        if candidate.len() == self.dim {
            Ok(())
        } else {
            Err(ClusteringError::Dimension {
                expected: self.dim,
                found: candidate.len(),
            })
        }
    }

    /// `[f(m_1, v), ..., f(m_k, v), threshold]`.
    pub fn score_candidate(
        &self,
        candidate: &[f64],
        genre: usize,
        scorer: &impl ClusterScorer,
    ) -> Result<Vec<f64>, ClusteringError> {
        self.check_dim(candidate)?;
        let mut scores: Vec<f64> = (0..self.entries.len())
            .map(|i| scorer.score(candidate, &self.entries[i], &self.features(i, genre)))
            .collect();
        scores.push(NEW_CLUSTER_THRESHOLD);
        Ok(scores)
    }

    /// Scores the candidate and applies the argmax; returns the cluster index.
    pub fn resolve(
        &mut self,
        candidate: &[f64],
        span: MentionSpan,
        genre: usize,
        scorer: &impl ClusterScorer,
    ) -> Result<usize, ClusteringError> {
        let scores = self.score_candidate(candidate, genre, scorer)?;
        let choice = choice_from_scores(&scores);
        Ok(self.apply_choice(choice, span, candidate))
    }

    /// Links to `choice` or opens a new cluster; returns the cluster index.
    ///
    /// Panics if `choice` links to a missing cluster.
    pub fn apply_choice(
        &mut self,
        choice: CorefChoice,
        span: MentionSpan,
        candidate: &[f64],
    ) -> usize {
        let ordinal = self.candidate_counter;
        let index = match choice {
            CorefChoice::Link(i) => {
                self.update_cluster(i, candidate, span)
                    .expect("linked cluster exists");
                self.previous = PreviousCoref::Linked;
                i
            }
            CorefChoice::New => {
                self.entries.push(ClusterEntry {
                    representation: candidate.to_vec(),
                    members: vec![span],
                    member_ordinals: vec![ordinal],
                    last_update_ordinal: ordinal,
                });
                self.previous = PreviousCoref::New;
                self.entries.len() - 1
            }
        };
        self.candidate_counter += 1;
        index
    }

    /// `m <- b*m + (1-b)*v` with `b = |m| / (|m| + 1)`.
    pub fn update_cluster(
        &mut self,
        index: usize,
        candidate: &[f64],
        span: MentionSpan,
    ) -> Result<(), ClusteringError> {
        self.check_dim(candidate)?;
        let ordinal = self.candidate_counter;
        let entry = self
            .entries
            .get_mut(index)
            .ok_or(ClusteringError::NoSuchCluster(index))?;
        let size = entry.size() as f64;
        let beta = size / (size + 1.0);
        for (m, v) in entry.representation.iter_mut().zip(candidate) {
            *m = beta * *m + (1.0 - beta) * v;
        }
        entry.members.push(span);
        entry.member_ordinals.push(ordinal);
        entry.last_update_ordinal = ordinal;
        Ok(())
    }

    /// Clusters in creation order, optionally dropping singletons.
    pub fn cluster_set(&self, keep_singletons: bool) -> ClusterSet {
        self.entries
            .iter()
            .filter(|e| keep_singletons || e.size() >= 2)
            .map(|e| e.members.clone())
            .collect()
    }
}

/// Final clusters with singletons removed.
pub fn finalize(memory: &ClusterMemory) -> ClusterSet {
    memory.cluster_set(false)
}

/// Argmax over `[clusters.., new]`, ties going to the highest index.
pub fn choice_from_scores(scores: &[f64]) -> CorefChoice {
    let k = scores.len() - 1;
    let mut best = k;
    for i in (0..k).rev() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    if best == k {
        CorefChoice::New
    } else {
        CorefChoice::Link(best)
    }
}
