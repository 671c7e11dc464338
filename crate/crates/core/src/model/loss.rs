//! Masked softmax distributions and the two cross-entropy losses.

use crate::corpus::Document;
use crate::oracle::{action_counts, derive_actions, OracleError};
use crate::transition::{Action, ActionSet};

use super::ModelError;

/// Softmax over `logits` restricted to `valid`; others get exactly zero.
pub fn masked_softmax(logits: &[f64; 4], valid: ActionSet) -> Result<[f64; 4], ModelError> {
    if valid.is_empty() {
        return Err(ModelError::EmptyValidSet);
    }
    let max = valid
        .iter()
        .map(|a| logits[a.index()])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs = [0.0; 4];
    let mut total = 0.0;
    for a in valid.iter() {
        let e = (logits[a.index()] - max).exp();
        probs[a.index()] = e;
        total += e;
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    Ok(probs)
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `w[gold] * -ln p[gold]`; infinite if `p[gold]` underflowed to zero.
pub fn mention_loss(
    probs: &[f64; 4],
    valid: ActionSet,
    gold: Action,
    weights: &[f64; 4],
) -> Result<f64, ModelError> {
    if !valid.contains(gold) {
        return Err(ModelError::GoldNotValid(gold));
    }
    Ok(-weights[gold.index()] * probs[gold.index()].ln())
}

/// `-ln p[gold]` over the coreference choices (last slot = new cluster);
/// infinite if `p[gold]` underflowed to zero.
pub fn coref_loss(probs: &[f64], gold: usize) -> Result<f64, ModelError> {
    match probs.get(gold) {
        Some(p) => Ok(-p.ln()),
        None => Err(ModelError::GoldOutOfRange {
            index: gold,
            size: probs.len(),
        }),
    }
}

/// `w_a = N / (4 N_a)` from gold action counts; unseen actions get the
/// largest observed weight.
pub fn weights_from_counts(counts: [usize; 4]) -> Option<[f64; 4]> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let mut weights = [0.0; 4];
    for (w, &c) in weights.iter_mut().zip(&counts) {
        if c > 0 {
            *w = total as f64 / (4.0 * c as f64);
        }
    }
    let max = weights.iter().copied().fold(0.0, f64::max);
    for (w, &c) in weights.iter_mut().zip(&counts) {
        if c == 0 {
            *w = max;
        }
    }
    Some(weights)
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WeightError {
    #[error("corpus has no gold actions")]
    Empty,
    #[error("document {doc_key}")]
    Oracle {
        doc_key: String,
        #[source]
        source: OracleError,
    },
}

/// Balanced mention-loss weights over the corpus' gold action sequences.
pub fn compute_action_weights(corpus: &[Document]) -> Result<[f64; 4], WeightError> {
    let mut counts = [0; 4];
    for doc in corpus {
        let steps = derive_actions(doc).map_err(|source| WeightError::Oracle {
            doc_key: doc.doc_key.clone(),
            source,
        })?;
        for (c, n) in counts.iter_mut().zip(action_counts(&steps)) {
            *c += n;
        }
    }
    weights_from_counts(counts).ok_or(WeightError::Empty)
}
