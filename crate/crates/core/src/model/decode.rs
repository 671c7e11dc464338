//! Greedy decoding: argmax over valid actions, argmax over clusters.

use std::ops::Range;

use crate::clustering::{choice_from_scores, ClusterMemory, NEW_CLUSTER_THRESHOLD};
use crate::corpus::{ClusterSet, Document, MentionSpan};
use crate::incremental::stream_decode;
use crate::transition::{Action, TransitionState};

use super::{DocInputs, Encoder, ReadAudit, ScoringModel, SplitCorefScorer};

/// How much of the document the encoder may see while decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowPolicy {
    /// Every token visible throughout.
    Full,
    /// `k` active sentences at a time plus cached tokens, `budget` total.
    Sentences { k: usize, budget: usize },
}

/// Result of decoding one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// Non-singleton clusters.
    pub clusters: ClusterSet,
    /// All clusters including singletons.
    pub all_clusters: ClusterSet,
    pub actions: Vec<Action>,
}

/// One document's decoding state; advanced window by window.
pub struct DecodeSession<'m, E: Encoder> {
    model: &'m ScoringModel<E>,
    inputs: DocInputs,
    state: TransitionState,
    memory: ClusterMemory,
    /// `(size, W_m m)` per cluster, refreshed when the cluster grows.
    projections: Vec<(usize, Vec<f64>)>,
}

impl<'m, E: Encoder> DecodeSession<'m, E> {
    pub fn new(model: &'m ScoringModel<E>, doc: &Document) -> Self {
        DecodeSession {
            model,
            inputs: model.inputs(doc),
            state: TransitionState::initial(doc.num_tokens()),
            memory: ClusterMemory::new(model.span_dim()),
            projections: Vec::new(),
        }
    }

    pub fn state(&self) -> &TransitionState {
        &self.state
    }

    pub fn memory(&self) -> &ClusterMemory {
        &self.memory
    }

    pub fn is_finished(&self) -> bool {
        self.state.is_terminal()
    }

    /// Takes greedy actions until the buffer reaches `stop` or the state is
    /// terminal. Only tokens in `visible` are encoded.
    pub fn run_until(&mut self, stop: usize, visible: &Range<usize>, audit: Option<&ReadAudit>) {
        let model = self.model;
        let genre = self.inputs.genre;
        let features = model.features(&self.inputs, visible, audit);
        let scorer = SplitCorefScorer::new(model);
        let projections = &mut self.projections;
        greedy_steps(
            &mut self.state,
            &mut self.memory,
            stop,
            |state| model.action_logits(&features.state_repr(state)),
            |span| features.span_repr(span),
            |v, memory| {
                let pv = scorer.candidate(v);
                let mut scores: Vec<f64> = memory
                    .entries()
                    .iter()
                    .enumerate()
                    .map(|(i, entry)| {
                        if i == projections.len() {
                            projections.push((0, Vec::new()));
                        }
                        if projections[i].0 != entry.size() {
                            projections[i] = (entry.size(), scorer.cluster(&entry.representation));
                        }
                        let f = memory.features(i, genre);
                        scorer.score(v, &pv, &entry.representation, &projections[i].1, &f)
                    })
                    .collect();
                scores.push(NEW_CLUSTER_THRESHOLD);
                scores
            },
        );
    }

    /// Non-singleton clusters found so far.
    pub fn partial(&self) -> ClusterSet {
        self.memory.cluster_set(false)
    }

    pub fn finish(self) -> DecodeOutput {
        DecodeOutput {
            clusters: self.memory.cluster_set(false),
            all_clusters: self.memory.cluster_set(true),
            actions: self.state.history().to_vec(),
        }
    }
}

/// The greedy loop shared by every decoder: take the best valid action
/// (scoring is skipped when only one is valid), and resolve each emitted
/// span to the best-scoring cluster slot.
pub fn greedy_steps(
    state: &mut TransitionState,
    memory: &mut ClusterMemory,
    stop: usize,
    mut action_logits: impl FnMut(&TransitionState) -> [f64; 4],
    mut span_repr: impl FnMut(MentionSpan) -> Vec<f64>,
    mut cluster_scores: impl FnMut(&[f64], &ClusterMemory) -> Vec<f64>,
) {
    while !state.is_terminal() && state.index() < stop {
        let valid = state
            .valid_actions()
            .expect("non-terminal states have valid actions");
        let action = if valid.len() == 1 {
            valid.iter().next().unwrap()
        } else {
            argmax_action(&action_logits(state), valid.iter())
        };
        let event = state.apply(action).expect("chosen from the valid set");
        if let Some(event) = event {
            let v = span_repr(event.span);
            let scores = cluster_scores(&v, memory);
            memory.apply_choice(choice_from_scores(&scores), event.span, &v);
        }
    }
}

/// First action with the highest logit.
pub(super) fn argmax_action(logits: &[f64; 4], valid: impl Iterator<Item = Action>) -> Action {
    let mut best: Option<Action> = None;
    for a in valid {
        if best.is_none_or(|b| logits[a.index()] > logits[b.index()]) {
            best = Some(a);
        }
    }
    best.expect("valid set is never empty")
}

/// Decodes a whole document and returns the full trace.
pub fn decode_document<E: Encoder>(
    doc: &Document,
    model: &ScoringModel<E>,
    policy: WindowPolicy,
) -> DecodeOutput {
    match policy {
        WindowPolicy::Full => {
            let n = doc.num_tokens();
            let mut session = DecodeSession::new(model, doc);
            session.run_until(n, &(0..n), None);
            session.finish()
        }
        WindowPolicy::Sentences { k, budget } => {
            stream_decode(doc, model, k, budget, None)
                .expect("window schedule fits the budget")
                .output
        }
    }
}

/// Non-singleton clusters predicted for `doc`.
pub fn greedy_decode<E: Encoder>(
    doc: &Document,
    model: &ScoringModel<E>,
    policy: WindowPolicy,
) -> ClusterSet {
    decode_document(doc, model, policy).clusters
}
