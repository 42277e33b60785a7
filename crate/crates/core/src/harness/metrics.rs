// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, GroundTruth, PromptClass};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::projector::ProtectedBasis;

/// Activation-space stand-ins for concept detection rate and collateral
/// damage.
///
/// Energies are means over sensitive-class activations and over directions
/// of `max(⟨h, u⟩, 0)²`: only positive presence of a direction counts, so
/// pushing a feature below zero does not read as the concept reappearing.
/// Sensitive directions are the planted sensitive columns with their
/// benign-span component removed (see
/// [`GroundTruth::erasable_sensitive_directions`]); benign directions are
/// the planted benign columns themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErasureMetrics {
    pub sensitive_energy_before: f64,
    pub sensitive_energy_after: f64,
    pub benign_energy_before: f64,
    pub benign_energy_after: f64,
    /// `max ‖W_Cᵀ(h̃ − h)‖` over every activation.
    pub protected_drift: f64,
    /// Mean `‖h̃ − h‖ / ‖h‖` over non-sensitive-class activations.
    pub reconstruction_drift: f64,
    /// `max ‖h‖` of the input corpus, the scale for drift tolerances.
    pub max_activation_norm: f64,
}

impl ErasureMetrics {
    /// Residual sensitive energy as a fraction of the baseline.
    pub fn sensitive_ratio(&self) -> f64 {
        ratio(self.sensitive_energy_after, self.sensitive_energy_before)
    }

    /// Relative change of benign energy.
    pub fn benign_change(&self) -> f64 {
        (self.benign_energy_after - self.benign_energy_before).abs() / self.benign_energy_before.max(f64::MIN_POSITIVE)
    }

    /// Protected drift relative to the largest activation norm.
    pub fn relative_protected_drift(&self) -> f64 {
        self.protected_drift / self.max_activation_norm.max(f64::MIN_POSITIVE)
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

/// `max(⟨h, u⟩, 0)²` averaged over the directions.
pub fn presence_energy(h: &[f64], directions: &[Vec<f64>]) -> f64 {
    if directions.is_empty() {
        return 0.0;
    }
    directions
        .iter()
        .map(|u| dot(h, u).max(0.0).powi(2))
        .sum::<f64>()
        / directions.len() as f64
}

fn class_energy(corpus: &Corpus, directions: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for a in corpus.of_class(PromptClass::Sensitive) {
        total += presence_energy(&a.values, directions);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

/// Check that two corpora hold the same prompts in the same order.
pub fn check_aligned(before: &Corpus, after: &Corpus) -> Result<()> {
    if before.d != after.d {
        return Err(Error::MisalignedCorpora(format!(
            "dimensions {} and {}",
            before.d, after.d
        )));
    }
    if before.len() != after.len() {
        return Err(Error::MisalignedCorpora(format!(
            "{} vs {} activations",
            before.len(),
            after.len()
        )));
    }
    for (a, b) in before.activations.iter().zip(&after.activations) {
        if a.prompt_id != b.prompt_id || a.prompt_class != b.prompt_class {
            return Err(Error::MisalignedCorpora(format!(
                "prompt {} paired with prompt {}",
                a.prompt_id, b.prompt_id
            )));
        }
    }
    Ok(())
}

/// Planted directions the metrics are measured along.
#[derive(Debug, Clone)]
pub struct MetricDirections {
    pub sensitive: Vec<Vec<f64>>,
    pub benign: Vec<Vec<f64>>,
}

impl MetricDirections {
    pub fn from_truth(truth: &GroundTruth) -> Result<Self> {
        Ok(MetricDirections {
            sensitive: truth.erasable_sensitive_directions()?,
            benign: truth.benign_directions().iter().map(|v| unit(v)).collect(),
        })
    }
}

/// Compare an intervened corpus with its source.
pub fn evaluate(
    before: &Corpus,
    after: &Corpus,
    truth: &GroundTruth,
    basis: &ProtectedBasis,
) -> Result<ErasureMetrics> {
    check_aligned(before, after)?;
    if truth.dim() != before.d || basis.dim() != before.d {
        return Err(Error::DimensionMismatch {
            context: "evaluation",
            expected: before.d,
            found: if truth.dim() != before.d { truth.dim() } else { basis.dim() },
        });
    }
    let dirs = MetricDirections::from_truth(truth)?;

    let mut protected_drift: f64 = 0.0;
    let mut max_norm: f64 = 0.0;
    let mut recon_total = 0.0;
    let mut recon_n = 0usize;
    let mut diff = vec![0.0; before.d];
    for (a, b) in before.activations.iter().zip(&after.activations) {
        for ((o, x), y) in diff.iter_mut().zip(&b.values).zip(&a.values) {
            *o = x - y;
        }
        let drift = (0..basis.w_c.ncols())
            .map(|j| dot(crate::linalg::col(&basis.w_c, j), &diff).powi(2))
            .sum::<f64>()
            .sqrt();
        protected_drift = protected_drift.max(drift);
        let hn = norm(&a.values);
        max_norm = max_norm.max(hn);
        if a.prompt_class == PromptClass::NonSensitive {
            let change = norm(&diff);
            recon_total += if hn > 0.0 {
                change / hn
            } else if change == 0.0 {
                0.0
            } else {
                1.0
            };
            recon_n += 1;
        }
    }

    Ok(ErasureMetrics {
        sensitive_energy_before: class_energy(before, &dirs.sensitive),
        sensitive_energy_after: class_energy(after, &dirs.sensitive),
        benign_energy_before: class_energy(before, &dirs.benign),
        benign_energy_after: class_energy(after, &dirs.benign),
        protected_drift,
        reconstruction_drift: if recon_n == 0 { 0.0 } else { recon_total / recon_n as f64 },
        max_activation_norm: max_norm,
    })
}
