//! Checkpoint files: one JSON header line, then the parameters as raw
//! little-endian `f64`s.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ModelConfig, ScoringModel};

pub const CHECKPOINT_FORMAT: &str = "shiftcoref-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub config_hash: String,
    pub param_count: usize,
    pub action_weights: [f64; 4],
    /// `(name, rows, cols)` in storage order.
    pub tensors: Vec<(String, usize, usize)>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed checkpoint header")]
    Header(#[from] serde_json::Error),
    #[error("not a checkpoint (format {found:?}, version {version})")]
    Format { found: String, version: u32 },
    #[error("header config hash {recorded} does not match its config ({computed})")]
    HashMismatch { recorded: String, computed: String },
    #[error("checkpoint config does not match the requested model config")]
    ConfigMismatch,
    #[error("checkpoint layout does not match its config: {0}")]
    Layout(String),
    #[error("expected {expected} parameters, found {found}")]
    ParamCount { expected: usize, found: usize },
}

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn config_hash(value: &impl Serialize) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn header_of(model: &ScoringModel) -> CheckpointHeader {
    CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        config_hash: config_hash(model.config()),
        param_count: model.num_params(),
        action_weights: model.action_weights,
        tensors: model
            .tensors()
            .iter()
            .map(|(name, t)| (name.clone(), t.rows, t.cols))
            .collect(),
    }
}

pub fn save_checkpoint(model: &ScoringModel, mut out: impl Write) -> Result<(), CheckpointError> {
    serde_json::to_writer(&mut out, &header_of(model))?;
    out.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(model.num_params() * 8);
    for p in &model.params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

/// Reads a checkpoint, rejecting inconsistent headers and, when `expected`
/// is given, any config other than `expected`.
pub fn load_checkpoint(
    mut input: impl BufRead,
    expected: Option<&ModelConfig>,
) -> Result<ScoringModel, CheckpointError> {
    let mut line = Vec::new();
    input.read_until(b'\n', &mut line)?;
    let header: CheckpointHeader = serde_json::from_slice(&line)?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Format {
            found: header.format,
            version: header.version,
        });
    }
    let computed = config_hash(&header.config);
    if computed != header.config_hash {
        return Err(CheckpointError::HashMismatch {
            recorded: header.config_hash,
            computed,
        });
    }
    if expected.is_some_and(|c| *c != header.config) {
        return Err(CheckpointError::ConfigMismatch);
    }

    let mut model = ScoringModel::new(header.config.clone());
    let layout = header_of(&model);
    if layout.param_count != header.param_count {
        return Err(CheckpointError::ParamCount {
            expected: layout.param_count,
            found: header.param_count,
        });
    }
    if layout.tensors != header.tensors {
        return Err(CheckpointError::Layout("tensor table differs".into()));
    }

    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != header.param_count * 8 {
        return Err(CheckpointError::ParamCount {
            expected: header.param_count,
            found: bytes.len() / 8,
        });
    }
    for (p, chunk) in model.params.iter_mut().zip(bytes.chunks_exact(8)) {
        *p = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
    }
    model.action_weights = header.action_weights;
    Ok(model)
}
