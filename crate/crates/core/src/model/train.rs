//! Teacher-forced training with per-document Adam updates.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{ClusterMemory, CorefChoice};
use crate::corpus::{ClusterSet, Document, MentionSpan};
use crate::oracle::{derive_actions, GoldStep, OracleError};
use crate::transition::{Action, TransitionError, TransitionState};

use super::decode::argmax_action;
use super::loss::{
    compute_action_weights, coref_loss, masked_softmax, mention_loss, softmax, WeightError,
};
use super::{Encoder, ModelConfig, ModelError, ScoringModel, ALPHA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Seeds document shuffling and dropout masks.
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            learning_rate: 1e-4,
            clip_norm: Some(1.0),
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-6,
            seed: 0,
            shuffle: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error("document {doc_key}")]
    Oracle {
        doc_key: String,
        #[source]
        source: OracleError,
    },
    #[error("document {doc_key}")]
    Model {
        doc_key: String,
        #[source]
        source: ModelError,
    },
    #[error("document {doc_key}")]
    Transition {
        doc_key: String,
        #[source]
        source: TransitionError,
    },
    #[error(
        "non-finite {what} in epoch {epoch} at document {doc_key} \
         (mention loss {mention_loss}, coref loss {coref_loss}, grad norm {grad_norm})"
    )]
    NonFinite {
        what: &'static str,
        epoch: usize,
        doc_key: String,
        mention_loss: f64,
        coref_loss: f64,
        grad_norm: f64,
    },
}

/// Losses and accuracies of one teacher-forced document pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PassStats {
    pub mention_loss: f64,
    pub coref_loss: f64,
    /// Steps where the argmax valid action equals the gold action.
    pub actions_correct: usize,
    pub actions_total: usize,
    /// `(correct, total)` per gold action, in [`Action::ALL`] order.
    pub per_action: [(usize, usize); 4],
    pub coref_correct: usize,
    pub coref_total: usize,
    /// Actions applied, which under teacher forcing are the gold actions.
    pub trace: Vec<Action>,
    /// Clusters built from the gold choices, singletons included.
    pub clusters: ClusterSet,
    /// Every loss term in order: one per action, one per mention.
    pub terms: Vec<f64>,
}

impl PassStats {
    pub fn loss(&self) -> f64 {
        self.mention_loss + self.coref_loss
    }
}

/// Runs the gold steps over `doc`, returning `L_M + L_C` statistics and,
/// when `grads` is given, accumulating the loss gradient into it.
pub fn document_pass<E: Encoder>(
    model: &ScoringModel<E>,
    doc: &Document,
    steps: &[GoldStep],
    mut grads: Option<&mut [f64]>,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<PassStats, TrainError> {
    let n = doc.num_tokens();
    let inputs = model.inputs(doc);
    let visible = 0..n;
    let features = model.features(&inputs, &visible, None);
    let pair = features.pair();
    let rate = model.config.dropout;
    let model_err = |source| TrainError::Model {
        doc_key: doc.doc_key.clone(),
        source,
    };

    let mut state = TransitionState::initial(n);
    let mut memory = ClusterMemory::new(model.span_dim());
    // Per candidate ordinal: its span, representation and accumulated gradient.
    let mut spans: Vec<MentionSpan> = Vec::new();
    let mut reprs: Vec<Vec<f64>> = Vec::new();
    let mut d_reprs: Vec<Vec<f64>> = Vec::new();
    let mut stats = PassStats::default();

    for step in steps {
        let valid = state
            .valid_actions()
            .map_err(|source| TrainError::Transition {
                doc_key: doc.doc_key.clone(),
                source,
            })?;
        let state_repr = features.state_repr(&state);
        let dropout = match dropout_rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => Some((rate, rng)),
            _ => None,
        };
        let cache = model.mention_forward(state_repr, dropout);
        let mut logits = [0.0; 4];
        logits.copy_from_slice(&cache.output);
        let probs = masked_softmax(&logits, valid).map_err(model_err)?;
        let term =
            mention_loss(&probs, valid, step.action, &model.action_weights).map_err(model_err)?;
        stats.mention_loss += term;
        stats.terms.push(term);
        stats.actions_total += 1;
        stats.per_action[step.action.index()].1 += 1;
        if argmax_action(&logits, valid.iter()) == step.action {
            stats.actions_correct += 1;
            stats.per_action[step.action.index()].0 += 1;
        }
        if let Some(grads) = grads.as_deref_mut() {
            let w = model.action_weights[step.action.index()];
            let mut d_logits = [0.0; 4];
            for a in valid.iter() {
                let target = if a == step.action { 1.0 } else { 0.0 };
                d_logits[a.index()] = w * (probs[a.index()] - target);
            }
            let d_state = model
                .layout
                .mention
                .backward(&model.params, &cache, &d_logits, grads);
            features.state_backward(&state, &d_state, grads);
        }

        let event = state
            .apply(step.action)
            .map_err(|source| TrainError::Transition {
                doc_key: doc.doc_key.clone(),
                source,
            })?;
        let Some(event) = event else { continue };
        let choice = step.choice.unwrap_or(CorefChoice::New);
        let v = features.span_repr(event.span);

        let k = memory.len();
        let mut caches = Vec::with_capacity(k);
        let mut scores = Vec::with_capacity(k + 1);
        for i in 0..k {
            let f = memory.features(i, inputs.genre);
            let input = pair.pair_input(&v, &memory.entries()[i].representation, &f);
            let dropout = match dropout_rng.as_deref_mut() {
                Some(rng) if rate > 0.0 => Some((rate, rng)),
                _ => None,
            };
            let c = model.coref_forward(input, dropout);
            scores.push(c.output[0]);
            caches.push((c, f));
        }
        scores.push(ALPHA);
        let probs = softmax(&scores);
        let gold = match choice {
            CorefChoice::Link(i) => i,
            CorefChoice::New => k,
        };
        let term = coref_loss(&probs, gold).map_err(model_err)?;
        stats.coref_loss += term;
        stats.terms.push(term);
        stats.coref_total += 1;
        if crate::clustering::choice_from_scores(&scores) == choice {
            stats.coref_correct += 1;
        }

        let mut dv = vec![0.0; v.len()];
        if let Some(grads) = grads.as_deref_mut() {
            for (i, (c, f)) in caches.iter().enumerate() {
                let ds = probs[i] - if i == gold { 1.0 } else { 0.0 };
                let d_input = model.layout.coref.backward(&model.params, c, &[ds], grads);
                let entry = &memory.entries()[i];
                let (dv_i, dm) = pair.pair_backward(&v, &entry.representation, f, &d_input, grads);
                super::add_to(&mut dv, &dv_i);
                // The cluster representation is the mean of its members.
                let scale = 1.0 / entry.size() as f64;
                for &ordinal in &entry.member_ordinals {
                    crate::model::nn::axpy(scale, &dm, &mut d_reprs[ordinal]);
                }
            }
        }
        memory.apply_choice(choice, event.span, &v);
        spans.push(event.span);
        reprs.push(v);
        d_reprs.push(dv);
    }

    if let Some(grads) = grads {
        for (span, d) in spans.iter().zip(&d_reprs) {
            features.span_backward(*span, d, grads);
        }
    }
    debug_assert_eq!(reprs.len(), memory.candidate_counter());
    stats.trace = state.history().to_vec();
    stats.clusters = memory.cluster_set(true);
    Ok(stats)
}

/// Scales `grads` so its L2 norm is at most `max`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max: Option<f64>) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if let Some(max) = max {
        if norm > max {
            let scale = max / norm;
            grads.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], config: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
        }
    }
}

/// Aggregate statistics of one training epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mention_loss: f64,
    pub coref_loss: f64,
    pub action_accuracy: f64,
    /// Accuracy on steps whose gold action is each of [`Action::ALL`].
    pub per_action_accuracy: [f64; 4],
    pub coref_accuracy: f64,
    pub documents: usize,
}

impl EpochStats {
    pub fn loss(&self) -> f64 {
        self.mention_loss + self.coref_loss
    }

    fn accumulate(epoch: usize, passes: &[PassStats]) -> Self {
        let sum = |f: fn(&PassStats) -> usize| passes.iter().map(f).sum::<usize>();
        let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
        EpochStats {
            epoch,
            mention_loss: passes.iter().map(|p| p.mention_loss).sum(),
            coref_loss: passes.iter().map(|p| p.coref_loss).sum(),
            action_accuracy: ratio(sum(|p| p.actions_correct), sum(|p| p.actions_total)),
            per_action_accuracy: std::array::from_fn(|a| {
                let correct = passes.iter().map(|p| p.per_action[a].0).sum();
                let total = passes.iter().map(|p| p.per_action[a].1).sum();
                ratio(correct, total)
            }),
            coref_accuracy: ratio(sum(|p| p.coref_correct), sum(|p| p.coref_total)),
            documents: passes.len(),
        }
    }
}

fn gold_steps(corpus: &[Document]) -> Result<Vec<Vec<GoldStep>>, TrainError> {
    corpus
        .iter()
        .map(|doc| {
            derive_actions(doc).map_err(|source| TrainError::Oracle {
                doc_key: doc.doc_key.clone(),
                source,
            })
        })
        .collect()
}

/// Trains `model` in place; `on_epoch` sees each epoch's statistics.
///
/// Action weights are recomputed from `corpus` before the first epoch.
pub fn train_model<E: Encoder>(
    model: &mut ScoringModel<E>,
    corpus: &[Document],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    model.action_weights = compute_action_weights(corpus)?;
    let steps = gold_steps(corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model.num_params());
    let mut grads = vec![0.0; model.num_params()];
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut passes = Vec::with_capacity(corpus.len());
        for &d in &order {
            let doc = &corpus[d];
            grads.fill(0.0);
            let mut dropout_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            let pass = document_pass(
                model,
                doc,
                &steps[d],
                Some(&mut grads),
                Some(&mut dropout_rng),
            )?;
            let grad_norm = clip_global_norm(&mut grads, config.clip_norm);
            let abort = |what| TrainError::NonFinite {
                what,
                epoch,
                doc_key: doc.doc_key.clone(),
                mention_loss: pass.mention_loss,
                coref_loss: pass.coref_loss,
                grad_norm,
            };
            if !pass.loss().is_finite() {
                return Err(abort("loss"));
            }
            if !grad_norm.is_finite() {
                return Err(abort("gradient"));
            }
            adam.step(&mut model.params, &grads, config);
            if !model.all_finite() {
                return Err(abort("parameter"));
            }
            passes.push(pass);
        }
        let stats = EpochStats::accumulate(epoch, &passes);
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

/// Builds a model from `model_config` and trains it on `corpus`.
pub fn train(
    corpus: &[Document],
    model_config: ModelConfig,
    config: &TrainConfig,
) -> Result<(ScoringModel, Vec<EpochStats>), TrainError> {
    let mut model = ScoringModel::new(model_config);
    let history = train_model(&mut model, corpus, config, |_| {})?;
    Ok((model, history))
}

/// Teacher-forced statistics without updating anything.
pub fn evaluate_teacher_forced<E: Encoder>(
    model: &ScoringModel<E>,
    corpus: &[Document],
) -> Result<EpochStats, TrainError> {
    let steps = gold_steps(corpus)?;
    let passes = corpus
        .iter()
        .zip(&steps)
        .map(|(doc, s)| document_pass(model, doc, s, None, None))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EpochStats::accumulate(0, &passes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter index where the maximum occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Finite-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Magnitudes below this are compared absolutely rather than relatively.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares analytic gradients of `L_M + L_C` on `doc` with central
/// differences on `samples` parameters: half drawn uniformly, half from
/// entries with a nonzero analytic gradient.
pub fn gradient_check<E: Encoder + Clone>(
    model: &ScoringModel<E>,
    doc: &Document,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport, TrainError> {
    let steps = derive_actions(doc).map_err(|source| TrainError::Oracle {
        doc_key: doc.doc_key.clone(),
        source,
    })?;
    let mut grads = vec![0.0; model.num_params()];
    document_pass(model, doc, &steps, Some(&mut grads), None)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nonzero: Vec<usize> = (0..grads.len()).filter(|&i| grads[i] != 0.0).collect();
    let mut indices: Vec<usize> = (0..samples / 2)
        .map(|_| rng.gen_range(0..grads.len()))
        .collect();
    if nonzero.is_empty() {
        indices.extend((indices.len()..samples).map(|_| rng.gen_range(0..grads.len())));
    } else {
        indices.extend(
            nonzero
                .choose_multiple(&mut rng, samples - indices.len())
                .copied(),
        );
        while indices.len() < samples {
            indices.push(nonzero[rng.gen_range(0..nonzero.len())]);
        }
    }

    // Differencing term by term keeps the rounding error of the full sum
    // out of the numeric gradient.
    let mut probe = model.clone();
    let mut terms_at = |i: usize, value: f64| -> Result<Vec<f64>, TrainError> {
        let orig = probe.params[i];
        probe.params[i] = value;
        let terms = document_pass(&probe, doc, &steps, None, None)?.terms;
        probe.params[i] = orig;
        Ok(terms)
    };
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: indices.len(),
    };
    for &i in &indices {
        let p = model.params[i];
        let up = terms_at(i, p + GRAD_CHECK_STEP)?;
        let down = terms_at(i, p - GRAD_CHECK_STEP)?;
        let numeric = up
            .iter()
            .zip(&down)
            .map(|(u, d)| (u - d) / (2.0 * GRAD_CHECK_STEP))
            .sum::<f64>();
        let err = relative_error(grads[i], numeric);
        if err >= report.max_relative_error {
            report.max_relative_error = err;
            report.worst_index = i;
            report.analytic = grads[i];
            report.numeric = numeric;
        }
    }
    Ok(report)
}
