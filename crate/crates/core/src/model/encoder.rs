//! Token feature encoders.
//!
//! The parser only sees tokens through an [`Encoder`], and the encoder only
//! sees tokens through a [`TokenView`], which hides everything outside the
//! currently visible range. Hidden tokens contribute zero features.

use std::cell::RefCell;
use std::ops::Range;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::nn::{uniform_init, LayoutBuilder, Tensor};
use crate::corpus::Document;

/// A token read together with the range that was visible at the time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRead {
    pub index: usize,
    pub visible: Range<usize>,
}

impl TokenRead {
    pub fn is_violation(&self) -> bool {
        !self.visible.contains(&self.index)
    }
}

/// Records every token whose content an encoder received.
#[derive(Debug, Default)]
pub struct ReadAudit {
    reads: RefCell<Vec<TokenRead>>,
}

impl ReadAudit {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, index: usize, visible: &Range<usize>) {
        self.reads.borrow_mut().push(TokenRead {
            index,
            visible: visible.clone(),
        });
    }

    pub fn reads(&self) -> Vec<TokenRead> {
        self.reads.borrow().clone()
    }

    pub fn violations(&self) -> usize {
        self.reads
            .borrow()
            .iter()
            .filter(|r| r.is_violation())
            .count()
    }

    pub fn len(&self) -> usize {
        self.reads.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.reads.borrow().is_empty()
    }
}

/// Encoded token ids of one document, restricted to a visible range.
#[derive(Debug, Clone, Copy)]
pub struct TokenView<'a> {
    ids: &'a [u32],
    visible: &'a Range<usize>,
    audit: Option<&'a ReadAudit>,
}

impl<'a> TokenView<'a> {
    pub fn new(ids: &'a [u32], visible: &'a Range<usize>, audit: Option<&'a ReadAudit>) -> Self {
        TokenView {
            ids,
            visible,
            audit,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn visible(&self) -> &Range<usize> {
        self.visible
    }

    pub fn is_visible(&self, index: usize) -> bool {
        index < self.ids.len() && self.visible.contains(&index)
    }

    /// The token id at `index`, or `None` when hidden or out of range.
    pub fn get(&self, index: usize) -> Option<u32> {
        if !self.is_visible(index) {
            return None;
        }
        if let Some(audit) = self.audit {
            audit.record(index, self.visible);
        }
        Some(self.ids[index])
    }
}

/// Maps a token (in context) to a feature vector.
pub trait Encoder {
    /// Width of one token's feature vector.
    fn output_dim(&self) -> usize;

    /// Allocates this encoder's parameters.
    fn register(&mut self, layout: &mut LayoutBuilder);

    fn init(&self, params: &mut [f64], rng: &mut dyn RngCore);

    /// Token ids consumed through [`TokenView`].
    fn token_ids(&self, doc: &Document) -> Vec<u32>;

    /// Writes the features of token `index` into `out` (already zeroed).
    fn encode(&self, params: &[f64], view: &TokenView, index: usize, out: &mut [f64]);

    /// Accumulates parameter gradients given `d_out` for token `index`.
    fn backward(&self, view: &TokenView, index: usize, d_out: &[f64], grads: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HashedEncoderConfig {
    pub buckets: usize,
    pub dim: usize,
    /// Neighbours on each side concatenated to the centre token.
    pub radius: usize,
}

impl Default for HashedEncoderConfig {
    fn default() -> Self {
        HashedEncoderConfig {
            buckets: 4096,
            dim: 16,
            radius: 1,
        }
    }
}

/// Hashed token-identity embeddings of a token and its neighbours,
/// concatenated in the order centre, left neighbours, right neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct HashedEncoder {
    pub config: HashedEncoderConfig,
    table: Option<Tensor>,
}

impl HashedEncoder {
    pub fn new(config: HashedEncoderConfig) -> Self {
        HashedEncoder {
            config,
            table: None,
        }
    }

    fn table(&self) -> Tensor {
        self.table.expect("encoder registered")
    }

    /// Offsets read for token `index`, paired with their output slot.
    fn window(&self, index: usize) -> impl Iterator<Item = (usize, Option<usize>)> {
        let r = self.config.radius;
        let left = (1..=r).map(move |d| index.checked_sub(d));
        let right = (1..=r).map(move |d| Some(index + d));
        std::iter::once(Some(index))
            .chain(left)
            .chain(right)
            .enumerate()
    }
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl Encoder for HashedEncoder {
    fn output_dim(&self) -> usize {
        self.config.dim * (2 * self.config.radius + 1)
    }

    fn register(&mut self, layout: &mut LayoutBuilder) {
        self.table = Some(layout.tensor("encoder.tokens", self.config.buckets, self.config.dim));
    }

    fn init(&self, params: &mut [f64], mut rng: &mut dyn RngCore) {
        uniform_init(params, self.table(), 0.1, &mut rng);
    }

    fn token_ids(&self, doc: &Document) -> Vec<u32> {
        doc.tokens()
            .map(|t| (fnv1a(t) % self.config.buckets as u64) as u32)
            .collect()
    }

    fn encode(&self, params: &[f64], view: &TokenView, index: usize, out: &mut [f64]) {
        let dim = self.config.dim;
        let table = self.table();
        for (slot, pos) in self.window(index) {
            if let Some(id) = pos.and_then(|p| view.get(p)) {
                out[slot * dim..(slot + 1) * dim].copy_from_slice(table.row(params, id as usize));
            }
        }
    }

    fn backward(&self, view: &TokenView, index: usize, d_out: &[f64], grads: &mut [f64]) {
        let dim = self.config.dim;
        let table = self.table();
        for (slot, pos) in self.window(index) {
            if let Some(id) = pos.and_then(|p| view.get(p)) {
                let row = table.row_mut(grads, id as usize);
                for (g, d) in row.iter_mut().zip(&d_out[slot * dim..(slot + 1) * dim]) {
                    *g += d;
                }
            }
        }
    }
}
