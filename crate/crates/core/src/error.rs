// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every stage of the pipeline.

use thiserror::Error;

/// Errors raised by corpus generation, I/O, localization, SAE training,
/// detection, projection and the ablation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{what} = {value} is out of range [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },

    #[error("empty token set: {0}")]
    EmptyTokenSet(&'static str),

    #[error("layer {layer} out of range (trace has {layers} layers)")]
    LayerOutOfRange { layer: usize, layers: usize },

    #[error("no complete sensitive/non-sensitive trace pairs")]
    NoPairs,

    #[error("corpus contains no activations of class {0}")]
    EmptyClass(&'static str),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },

    #[error("coupled set is empty")]
    EmptyCoupledSet,

    #[error("Gram matrix of the coupled decoder columns is singular (enable the pseudo-inverse fallback)")]
    SingularGram,

    #[error("unknown ablation strategy `{0}`")]
    UnknownStrategy(String),

    #[error("corpora are not aligned: {0}")]
    MisalignedCorpora(String),

    #[error("corpus carries no ground truth")]
    MissingGroundTruth,

    #[error("malformed file: {0}")]
    MalformedFile(String),

    #[error("schema version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("dimension inconsistency: {0}")]
    DimensionInconsistency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
