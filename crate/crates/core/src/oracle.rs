//! Gold action sequences for annotated documents.
//!
//! At each token: one PUSH if some mention starts there; then, for every
//! mention ending there in decreasing start order, PEEK if a longer mention
//! shares its start and POP otherwise; then ADVANCE.

use std::collections::HashMap;

use thiserror::Error;

use crate::clustering::CorefChoice;
use crate::corpus::{validate_document, Document, MentionSpan, Violation};
use crate::transition::{replay, Action, TransitionError, TransitionState};

/// One gold action; `choice` is set exactly for POP and PEEK.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldStep {
    pub action: Action,
    pub choice: Option<CorefChoice>,
}

impl GoldStep {
    fn plain(action: Action) -> Self {
        GoldStep {
            action,
            choice: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("document violates annotation invariants: {0:?}")]
    InvalidDocument(Vec<Violation>),
    #[error("derived action sequence is not executable")]
    Unexecutable(#[from] TransitionError),
    #[error("derived walk emitted {found} but the gold mention is {expected}")]
    SpanMismatch {
        expected: MentionSpan,
        found: MentionSpan,
    },
}

pub fn derive_actions(doc: &Document) -> Result<Vec<GoldStep>, OracleError> {
    let violations = validate_document(doc);
    if !violations.is_empty() {
        return Err(OracleError::InvalidDocument(violations));
    }
    let n = doc.num_tokens();

    let mut cluster_of: HashMap<MentionSpan, usize> = HashMap::new();
    let mut starts = vec![false; n];
    let mut longest_from = vec![None::<usize>; n];
    let mut ending_at: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (c, cluster) in doc.gold_clusters.iter().enumerate() {
        for span in cluster {
            cluster_of.insert(*span, c);
            starts[span.start] = true;
            let longest = longest_from[span.start].get_or_insert(span.end);
            *longest = (*longest).max(span.end);
            ending_at[span.end].push(span.start);
        }
    }

    let mut ordinal_of_gold: Vec<Option<usize>> = vec![None; doc.gold_clusters.len()];
    let mut created = 0;
    let mut state = TransitionState::initial(n);
    let mut steps = Vec::with_capacity(2 * n);
    let mut take =
        |state: &mut TransitionState, step: GoldStep| -> Result<Option<MentionSpan>, OracleError> {
            let event = state.apply(step.action)?;
            steps.push(step);
            Ok(event.map(|e| e.span))
        };

    for i in 0..n {
        if starts[i] {
            take(&mut state, GoldStep::plain(Action::Push))?;
        }
        let mut lefts = std::mem::take(&mut ending_at[i]);
        lefts.sort_unstable_by(|a, b| b.cmp(a));
        for left in lefts {
            let span = MentionSpan::new(left, i);
            let action = if longest_from[left].is_some_and(|r| r > i) {
                Action::Peek
            } else {
                Action::Pop
            };
            let gold = cluster_of[&span];
            let choice = match ordinal_of_gold[gold] {
                Some(ordinal) => CorefChoice::Link(ordinal),
                None => {
                    ordinal_of_gold[gold] = Some(created);
                    created += 1;
                    CorefChoice::New
                }
            };
            let emitted = take(
                &mut state,
                GoldStep {
                    action,
                    choice: Some(choice),
                },
            )?
            .expect("POP/PEEK always emit");
            if emitted != span {
                return Err(OracleError::SpanMismatch {
                    expected: span,
                    found: emitted,
                });
            }
        }
        take(&mut state, GoldStep::plain(Action::Advance))?;
    }
    debug_assert!(state.is_terminal());
    Ok(steps)
}

/// Splits gold steps into the action sequence and the per-mention decisions.
pub fn split_steps(steps: &[GoldStep]) -> (Vec<Action>, Vec<CorefChoice>) {
    let actions = steps.iter().map(|s| s.action).collect();
    let decisions = steps.iter().filter_map(|s| s.choice).collect();
    (actions, decisions)
}

/// True iff replaying the derived gold steps reproduces the gold clusters.
pub fn verify_roundtrip(doc: &Document) -> bool {
    let Ok(steps) = derive_actions(doc) else {
        return false;
    };
    let (actions, decisions) = split_steps(&steps);
    replay(doc, &actions, &decisions)
        .is_ok_and(|clusters| clusters.same_partition(&doc.gold_clusters))
}

/// Gold action counts in [`Action::ALL`] order.
pub fn action_counts(steps: &[GoldStep]) -> [usize; 4] {
    let mut counts = [0; 4];
    for step in steps {
        counts[step.action.index()] += 1;
    }
    counts
}
