//! Action classifier, cluster scorer and their inputs.
//!
//! All parameters live in one flat `Vec<f64>`; layers address it through
//! [`Tensor`](nn::Tensor) handles. This keeps the optimizer, gradient
//! checking and checkpointing indifferent to the network structure.
//!
//! Parser state: `[x_i; mean(x_stack); mean(last actions); width(i - top); genre]`.
//! Span `(l, r)`: `[x_l; x_r; mean(x_l..=x_r); width(r - l); speaker(l)]`.
//! Cluster pair: `[v; m; v*m; count(m); distance(m); previous coref; genre]`.

mod checkpoint;
mod decode;
mod encoder;
mod loss;
pub mod nn;
mod train;

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{
    ClusterEntry, ClusterMemory, ClusterScorer, CorefFeatures, PreviousCoref, MAX_ENTITY_COUNT,
    MAX_MENTION_DISTANCE, NEW_CLUSTER_THRESHOLD,
};
use crate::corpus::{Document, MentionSpan, GENRE_TABLE_SIZE};
use crate::transition::{Action, ActionSet, TransitionState};

use nn::{uniform_init, LayoutBuilder, Mlp, MlpCache, Tensor};

pub use checkpoint::{
    config_hash, load_checkpoint, save_checkpoint, CheckpointError, CheckpointHeader,
};
pub use decode::{
    decode_document, greedy_decode, greedy_steps, DecodeOutput, DecodeSession, WindowPolicy,
};
pub use encoder::{
    fnv1a, Encoder, HashedEncoder, HashedEncoderConfig, ReadAudit, TokenRead, TokenView,
};
pub use loss::{
    compute_action_weights, coref_loss, masked_softmax, mention_loss, softmax, weights_from_counts,
    WeightError,
};
pub use train::{
    clip_global_norm, document_pass, evaluate_teacher_forced, gradient_check, relative_error,
    train, train_model, EpochStats, GradCheckReport, PassStats, TrainConfig, TrainError,
    GRAD_CHECK_FLOOR, GRAD_CHECK_STEP,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: HashedEncoderConfig,
    /// Width of every learned feature embedding.
    pub feature_dim: usize,
    pub mention_hidden: usize,
    pub coref_hidden: usize,
    /// Number of most recent actions averaged into the history feature.
    pub history_window: usize,
    pub max_span_width: usize,
    pub max_speakers: usize,
    /// Hidden-unit dropout during training; 0 disables it.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: HashedEncoderConfig::default(),
            feature_dim: 20,
            mention_hidden: 128,
            coref_hidden: 128,
            history_window: 4,
            max_span_width: 30,
            max_speakers: 20,
            dropout: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("no valid actions to normalize over")]
    EmptyValidSet,
    #[error("gold action {0} is not in the valid set")]
    GoldNotValid(Action),
    #[error("gold choice {index} outside distribution of size {size}")]
    GoldOutOfRange { index: usize, size: usize },
}

/// Per-document inputs shared by every step.
#[derive(Debug, Clone)]
pub struct DocInputs {
    pub token_ids: Vec<u32>,
    pub speakers: Vec<usize>,
    pub genre: usize,
}

impl DocInputs {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Speaker ids by first appearance, capped at `cap`.
pub fn speaker_ids(doc: &Document, cap: usize) -> Vec<usize> {
    let mut seen: Vec<&str> = Vec::new();
    doc.flat_speakers()
        .map(|s| {
            let id = match seen.iter().position(|x| *x == s) {
                Some(id) => id,
                None => {
                    seen.push(s);
                    seen.len() - 1
                }
            };
            id.min(cap)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    width: Tensor,
    speaker: Tensor,
    genre: Tensor,
    action: Tensor,
    distance: Tensor,
    count: Tensor,
    previous: Tensor,
    mention: Mlp,
    coref: Mlp,
    token_dim: usize,
    state_dim: usize,
    span_dim: usize,
    pair_dim: usize,
}

/// Parameters of the action classifier and cluster scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringModel<E: Encoder = HashedEncoder> {
    config: ModelConfig,
    encoder: E,
    layout: Layout,
    tensors: Vec<(String, Tensor)>,
    pub params: Vec<f64>,
    /// Per-action weights of the mention loss, in [`Action::ALL`] order.
    pub action_weights: [f64; 4],
}

impl ScoringModel<HashedEncoder> {
    /// Freshly initialized model seeded from `config.seed`.
    pub fn new(config: ModelConfig) -> Self {
        let encoder = HashedEncoder::new(config.encoder.clone());
        ScoringModel::with_encoder(config, encoder)
    }
}

impl<E: Encoder> ScoringModel<E> {
    pub fn with_encoder(config: ModelConfig, mut encoder: E) -> Self {
        let mut builder = LayoutBuilder::default();
        encoder.register(&mut builder);
        let fd = config.feature_dim;
        let width = builder.tensor("features.width", config.max_span_width + 1, fd);
        let speaker = builder.tensor("features.speaker", config.max_speakers + 1, fd);
        let genre = builder.tensor("features.genre", GENRE_TABLE_SIZE, fd);
        let action = builder.tensor("features.action", Action::ALL.len(), fd);
        let distance = builder.tensor("features.distance", MAX_MENTION_DISTANCE + 1, fd);
        let count = builder.tensor("features.entity_count", MAX_ENTITY_COUNT + 1, fd);
        let previous = builder.tensor("features.previous_coref", PreviousCoref::COUNT, fd);

        let token_dim = encoder.output_dim();
        let state_dim = 2 * token_dim + 3 * fd;
        let span_dim = 3 * token_dim + 2 * fd;
        let pair_dim = 3 * span_dim + 4 * fd;
        let mention = Mlp::new(
            &mut builder,
            "mention",
            state_dim,
            config.mention_hidden,
            Action::ALL.len(),
            false,
        );
        let coref = Mlp::new(
            &mut builder,
            "coref",
            pair_dim,
            config.coref_hidden,
            1,
            true,
        );

        let layout = Layout {
            width,
            speaker,
            genre,
            action,
            distance,
            count,
            previous,
            mention,
            coref,
            token_dim,
            state_dim,
            span_dim,
            pair_dim,
        };
        let mut model = ScoringModel {
            params: vec![0.0; builder.len()],
            tensors: builder.names,
            config,
            encoder,
            layout,
            action_weights: [1.0; 4],
        };
        model.reinitialize();
        model
    }

    /// Re-draws every parameter from the configured seed.
    pub fn reinitialize(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let params = &mut self.params;
        self.encoder.init(params, &mut rng);
        let l = &self.layout;
        for t in [
            l.width, l.speaker, l.genre, l.action, l.distance, l.count, l.previous,
        ] {
            uniform_init(params, t, 0.1, &mut rng);
        }
        l.mention.init(params, &mut rng);
        l.coref.init(params, &mut rng);
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &E {
        &self.encoder
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Named parameter blocks in storage order.
    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn span_dim(&self) -> usize {
        self.layout.span_dim
    }

    pub fn state_dim(&self) -> usize {
        self.layout.state_dim
    }

    pub fn pair_dim(&self) -> usize {
        self.layout.pair_dim
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Zeroes the action read-out weights `w_a`.
    pub fn zero_action_outputs(&mut self) {
        let w = self.layout.mention.output.weight;
        w.view_mut(&mut self.params).fill(0.0);
    }

    pub fn inputs(&self, doc: &Document) -> DocInputs {
        DocInputs {
            token_ids: self.encoder.token_ids(doc),
            speakers: speaker_ids(doc, self.config.max_speakers),
            genre: doc.genre_id(),
        }
    }

    /// Feature builder restricted to `visible` tokens.
    pub fn features<'a>(
        &'a self,
        inputs: &'a DocInputs,
        visible: &'a Range<usize>,
        audit: Option<&'a ReadAudit>,
    ) -> Features<'a, E> {
        Features {
            model: self,
            inputs,
            view: TokenView::new(&inputs.token_ids, visible, audit),
        }
    }

    /// Raw action scores `w_a . f_M(p)` for all four actions.
    pub fn action_logits(&self, state_repr: &[f64]) -> [f64; 4] {
        let cache =
            self.layout
                .mention
                .forward::<ChaCha8Rng>(&self.params, state_repr.to_vec(), None);
        let mut logits = [0.0; 4];
        logits.copy_from_slice(&cache.output);
        logits
    }

    /// Distribution over actions; invalid actions get probability zero.
    pub fn action_distribution(
        &self,
        state_repr: &[f64],
        valid: ActionSet,
    ) -> Result<[f64; 4], ModelError> {
        masked_softmax(&self.action_logits(state_repr), valid)
    }

    fn mention_forward(
        &self,
        state_repr: Vec<f64>,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> MlpCache {
        self.layout
            .mention
            .forward(&self.params, state_repr, dropout)
    }

    fn coref_forward(&self, pair: Vec<f64>, dropout: Option<(f64, &mut ChaCha8Rng)>) -> MlpCache {
        self.layout.coref.forward(&self.params, pair, dropout)
    }

    /// Cluster scorer `f_C` bound to this model's parameters.
    pub fn cluster_scorer(&self) -> ModelScorer<'_, E> {
        ModelScorer { model: self }
    }

    /// Softmax over `[f_C(m_1, v), ..., f_C(m_k, v), threshold]`.
    pub fn coref_distribution(
        &self,
        candidate: &[f64],
        memory: &ClusterMemory,
        genre: usize,
    ) -> Vec<f64> {
        let scores = memory
            .score_candidate(candidate, genre, &self.cluster_scorer())
            .expect("candidate has span dimension");
        softmax(&scores)
    }
}

/// [`ClusterScorer`] backed by the model's `f_C`.
pub struct ModelScorer<'a, E: Encoder> {
    model: &'a ScoringModel<E>,
}

impl<E: Encoder> ClusterScorer for ModelScorer<'_, E> {
    fn score(&self, candidate: &[f64], cluster: &ClusterEntry, features: &CorefFeatures) -> f64 {
        let pair =
            self.model
                .features_unbound()
                .pair_input(candidate, &cluster.representation, features);
        self.model.coref_forward(pair, None).output[0]
    }
}

/// `f_C` with its first layer split by input block: `[v; m; v*m; features]`.
/// The `v` and `m` projections are computed once per candidate and once per
/// cluster version instead of once per pair, and the feature rows once per
/// document. Agrees with [`ModelScorer`] up to rounding.
pub struct SplitCorefScorer<'a, E: Encoder> {
    model: &'a ScoringModel<E>,
    /// Projections of every row of the count, distance, previous and genre tables.
    feature_rows: [Vec<Vec<f64>>; 4],
}

impl<'a, E: Encoder> SplitCorefScorer<'a, E> {
    pub fn new(model: &'a ScoringModel<E>) -> Self {
        let l = &model.layout;
        let fd = model.config.feature_dim;
        let base = 3 * l.span_dim;
        let tables = [l.count, l.distance, l.previous, l.genre];
        let feature_rows = std::array::from_fn(|k| {
            (0..tables[k].rows)
                .map(|r| self_project(model, base + k * fd, tables[k].row(&model.params, r)))
                .collect()
        });
        SplitCorefScorer {
            model,
            feature_rows,
        }
    }

    /// First-layer bias plus the projection of the candidate block.
    pub fn candidate(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self_project(self.model, 0, v);
        let bias = self
            .model
            .layout
            .coref
            .hidden1
            .bias
            .expect("hidden layers have bias");
        add_to(&mut out, bias.view(&self.model.params));
        out
    }

    pub fn cluster(&self, m: &[f64]) -> Vec<f64> {
        self_project(self.model, self.model.layout.span_dim, m)
    }

    pub fn score(&self, v: &[f64], pv: &[f64], m: &[f64], pm: &[f64], f: &CorefFeatures) -> f64 {
        let l = &self.model.layout;
        let p = &self.model.params;
        let s = l.span_dim;
        let w1 = l.coref.hidden1.weight;
        let product: Vec<f64> = v.iter().zip(m).map(|(a, b)| a * b).collect();
        let rows = [
            f.entity_count,
            f.mention_distance,
            f.previous.index(),
            f.genre,
        ];
        let h1: Vec<f64> = (0..w1.rows)
            .map(|r| {
                let row = w1.row(p, r);
                let mut x = pv[r] + pm[r] + nn::dot(&row[2 * s..3 * s], &product);
                for (k, &i) in rows.iter().enumerate() {
                    x += self.feature_rows[k][i][r];
                }
                x.tanh()
            })
            .collect();
        let mut h2 = vec![0.0; l.coref.hidden2.output_dim()];
        l.coref.hidden2.forward(p, &h1, &mut h2);
        h2.iter_mut().for_each(|x| *x = x.tanh());
        let mut out = [0.0];
        l.coref.output.forward(p, &h2, &mut out);
        out[0]
    }
}

/// `W1[:, offset..offset + x.len()] x` for the coref first layer.
fn self_project<E: Encoder>(model: &ScoringModel<E>, offset: usize, x: &[f64]) -> Vec<f64> {
    let w1 = model.layout.coref.hidden1.weight;
    (0..w1.rows)
        .map(|r| nn::dot(&w1.row(&model.params, r)[offset..offset + x.len()], x))
        .collect()
}

/// Builders for state, span and pair inputs, and their backward passes.
pub struct Features<'a, E: Encoder> {
    model: &'a ScoringModel<E>,
    inputs: &'a DocInputs,
    view: TokenView<'a>,
}

/// Pair inputs need no token access.
pub struct PairFeatures<'a, E: Encoder> {
    model: &'a ScoringModel<E>,
}

impl<E: Encoder> ScoringModel<E> {
    fn features_unbound(&self) -> PairFeatures<'_, E> {
        PairFeatures { model: self }
    }
}

fn add_to(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<E: Encoder> PairFeatures<'_, E> {
    pub fn pair_input(&self, v: &[f64], m: &[f64], f: &CorefFeatures) -> Vec<f64> {
        let l = &self.model.layout;
        let p = &self.model.params;
        let mut out = Vec::with_capacity(l.pair_dim);
        out.extend_from_slice(v);
        out.extend_from_slice(m);
        out.extend(v.iter().zip(m).map(|(a, b)| a * b));
        out.extend_from_slice(l.count.row(p, f.entity_count));
        out.extend_from_slice(l.distance.row(p, f.mention_distance));
        out.extend_from_slice(l.previous.row(p, f.previous.index()));
        out.extend_from_slice(l.genre.row(p, f.genre));
        out
    }

    /// Splits a pair-input gradient into `(dv, dm)`, accumulating the
    /// feature-embedding gradients into `grads`.
    pub fn pair_backward(
        &self,
        v: &[f64],
        m: &[f64],
        f: &CorefFeatures,
        d: &[f64],
        grads: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let l = &self.model.layout;
        let s = l.span_dim;
        let fd = self.model.config.feature_dim;
        let (dv_direct, rest) = d.split_at(s);
        let (dm_direct, rest) = rest.split_at(s);
        let (dprod, rest) = rest.split_at(s);
        let mut dv = dv_direct.to_vec();
        let mut dm = dm_direct.to_vec();
        for i in 0..s {
            dv[i] += dprod[i] * m[i];
            dm[i] += dprod[i] * v[i];
        }
        let rows = [
            (l.count, f.entity_count),
            (l.distance, f.mention_distance),
            (l.previous, f.previous.index()),
            (l.genre, f.genre),
        ];
        for (k, (table, row)) in rows.into_iter().enumerate() {
            add_to(table.row_mut(grads, row), &rest[k * fd..(k + 1) * fd]);
        }
        (dv, dm)
    }
}

impl<'a, E: Encoder> Features<'a, E> {
    pub fn view(&self) -> &TokenView<'a> {
        &self.view
    }

    pub fn token(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.model.layout.token_dim];
        self.model
            .encoder
            .encode(&self.model.params, &self.view, index, &mut out);
        out
    }

    fn token_backward(&self, index: usize, d: &[f64], grads: &mut [f64]) {
        self.model.encoder.backward(&self.view, index, d, grads);
    }

    fn state_width(&self, state: &TransitionState) -> usize {
        state.stack().last().map_or(0, |top| {
            (state.index() - top).min(self.model.config.max_span_width)
        })
    }

    /// Parser-state representation `p_t`.
    pub fn state_repr(&self, state: &TransitionState) -> Vec<f64> {
        let l = &self.model.layout;
        let p = &self.model.params;
        let td = l.token_dim;
        let fd = self.model.config.feature_dim;
        let mut out = Vec::with_capacity(l.state_dim);
        out.extend(self.token(state.index()));

        let mut stack = vec![0.0; td];
        if !state.stack().is_empty() {
            let scale = 1.0 / state.stack().len() as f64;
            for &s in state.stack() {
                nn::axpy(scale, &self.token(s), &mut stack);
            }
        }
        out.extend(stack);

        let mut history = vec![0.0; fd];
        let recent = recent_actions(state.history(), self.model.config.history_window);
        if !recent.is_empty() {
            let scale = 1.0 / recent.len() as f64;
            for a in recent {
                nn::axpy(scale, l.action.row(p, a.index()), &mut history);
            }
        }
        out.extend(history);
        out.extend_from_slice(l.width.row(p, self.state_width(state)));
        out.extend_from_slice(l.genre.row(p, self.inputs.genre));
        out
    }

    pub fn state_backward(&self, state: &TransitionState, d: &[f64], grads: &mut [f64]) {
        let l = &self.model.layout;
        let td = l.token_dim;
        let fd = self.model.config.feature_dim;
        let (d_token, rest) = d.split_at(td);
        let (d_stack, rest) = rest.split_at(td);
        let (d_history, rest) = rest.split_at(fd);
        let (d_width, d_genre) = rest.split_at(fd);

        self.token_backward(state.index(), d_token, grads);
        if !state.stack().is_empty() {
            let scale = 1.0 / state.stack().len() as f64;
            let scaled: Vec<f64> = d_stack.iter().map(|g| g * scale).collect();
            for &s in state.stack() {
                self.token_backward(s, &scaled, grads);
            }
        }
        let recent = recent_actions(state.history(), self.model.config.history_window);
        if !recent.is_empty() {
            let scale = 1.0 / recent.len() as f64;
            for a in recent {
                nn::axpy(scale, d_history, l.action.row_mut(grads, a.index()));
            }
        }
        add_to(l.width.row_mut(grads, self.state_width(state)), d_width);
        add_to(l.genre.row_mut(grads, self.inputs.genre), d_genre);
    }

    fn span_width(&self, span: MentionSpan) -> usize {
        span.width().min(self.model.config.max_span_width)
    }

    /// Span representation `v`.
    pub fn span_repr(&self, span: MentionSpan) -> Vec<f64> {
        let l = &self.model.layout;
        let p = &self.model.params;
        let td = l.token_dim;
        let mut out = Vec::with_capacity(l.span_dim);
        out.extend(self.token(span.start));
        out.extend(self.token(span.end));
        let mut mean = vec![0.0; td];
        let scale = 1.0 / (span.width() + 1) as f64;
        for i in span.start..=span.end {
            nn::axpy(scale, &self.token(i), &mut mean);
        }
        out.extend(mean);
        out.extend_from_slice(l.width.row(p, self.span_width(span)));
        out.extend_from_slice(l.speaker.row(p, self.inputs.speakers[span.start]));
        out
    }

    pub fn span_backward(&self, span: MentionSpan, d: &[f64], grads: &mut [f64]) {
        let l = &self.model.layout;
        let td = l.token_dim;
        let fd = self.model.config.feature_dim;
        let (d_left, rest) = d.split_at(td);
        let (d_right, rest) = rest.split_at(td);
        let (d_mean, rest) = rest.split_at(td);
        let (d_width, d_speaker) = rest.split_at(fd);
        self.token_backward(span.start, d_left, grads);
        self.token_backward(span.end, d_right, grads);
        let scale = 1.0 / (span.width() + 1) as f64;
        let scaled: Vec<f64> = d_mean.iter().map(|g| g * scale).collect();
        for i in span.start..=span.end {
            self.token_backward(i, &scaled, grads);
        }
        add_to(l.width.row_mut(grads, self.span_width(span)), d_width);
        add_to(
            l.speaker.row_mut(grads, self.inputs.speakers[span.start]),
            d_speaker,
        );
    }

    pub fn pair(&self) -> PairFeatures<'a, E> {
        PairFeatures { model: self.model }
    }
}

fn recent_actions(history: &[Action], window: usize) -> &[Action] {
    &history[history.len().saturating_sub(window)..]
}

/// Score of the new-cluster slot, re-exported for model users.
pub const ALPHA: f64 = NEW_CLUSTER_THRESHOLD;
