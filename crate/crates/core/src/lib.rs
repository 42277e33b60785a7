// SPDX-License-Identifier: MIT OR Apache-2.0

//! Concept erasure by null-space projection of sparse-autoencoder features.
//!
//! The pipeline has four numerical stages plus an evaluation harness:
//!
//! 1. [`localizer`] scores layers from paired attention traces and picks
//!    the one where sensitive tokens attend most distinctly to their target.
//! 2. [`sae`] trains a Top-K sparse autoencoder on that layer's activations.
//! 3. [`detector`] ranks SAE neurons by weighted frequency score to find the
//!    sensitive set, then zero-ablates it to find the benign neurons coupled
//!    to it.
//! 4. [`projector`] builds an orthonormal basis of the coupled decoder
//!    columns and removes the sensitive direction only within its
//!    orthogonal complement, so every coupled projection is preserved.
//!
//! [`corpus`] generates synthetic activations with a planted dictionary so
//! every stage can be checked against known ground truth, and [`harness`]
//! reproduces the ablation studies on it.
//!
//! ```
//! use orthoeraser::corpus::{generate, CorpusConfig};
//! use orthoeraser::projector::{orthogonalize, ProtectedBasis};
//! use nalgebra::DMatrix;
//!
//! let corpus = generate(&CorpusConfig { n_sensitive: 8, n_non_sensitive: 8, traces: None, ..Default::default() })?;
//! assert_eq!(corpus.len(), 16);
//!
//! let basis = ProtectedBasis::from_columns(DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]))?;
//! assert_eq!(orthogonalize(&[1.0, 1.0, 0.0], &basis)?, vec![0.0, 1.0, 0.0]);
//! # Ok::<(), orthoeraser::Error>(())
//! ```

pub mod corpus;
pub mod detector;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod localizer;
pub mod projector;
pub mod sae;

pub use corpus::{Corpus, CorpusConfig, DenseActivation, GroundTruth, PromptClass};
pub use detector::{CoupledSet, DetectionPlan, NeuronStats, SensitiveSet};
pub use error::{Error, Result};
pub use harness::{ErasureMetrics, Strategy};
pub use localizer::{AttentionTrace, LayerScoreReport};
pub use projector::{ProjectionPlan, ProtectedBasis};
pub use sae::{SaeModel, SparseCode, TrainConfig};
