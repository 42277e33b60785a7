// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, ErasureMetrics};
use crate::corpus::Corpus;
use crate::detector::{DetectionPlan, SensitiveSet};
use crate::error::{Error, Result};
use crate::linalg::axpy;
use crate::projector::{build_basis, ProjectionPlan};
use crate::sae::SaeModel;

/// Intervention variants compared by the ablation suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// `h − λ d*`: the null-space projected direction.
    Ortho,
    /// `h − λ d_raw`: no protection.
    OnlySensitive,
    /// `h − λ Σ_{j∈C} z_j w_j`: suppress the coupled neurons instead.
    OnlyCoupled,
    /// `h − λ QQᵀ d_raw`: only the protected component of the direction.
    CoupledAligned,
    /// Ortho with a random neuron set in place of the detected one.
    RandomNeurons,
    /// `h + λ d_raw`: push the concept up.
    Amplify,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Ortho,
        Strategy::OnlySensitive,
        Strategy::OnlyCoupled,
        Strategy::CoupledAligned,
        Strategy::RandomNeurons,
        Strategy::Amplify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ortho => "ortho",
            Strategy::OnlySensitive => "only_sensitive",
            Strategy::OnlyCoupled => "only_coupled",
            Strategy::CoupledAligned => "coupled_aligned",
            Strategy::RandomNeurons => "random_neurons",
            Strategy::Amplify => "amplify",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::UnknownStrategy(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub strategy: Strategy,
    pub lambda: f64,
    pub seed: u64,
    pub k_sens: usize,
    pub k_coupled: usize,
    pub metrics: ErasureMetrics,
}

/// Seeded random neuron set of the same size as `sensitive`, drawn from the
/// neurons outside it.
pub fn random_neuron_set(d_sae: usize, sensitive: &SensitiveSet, seed: u64) -> Result<SensitiveSet> {
    let pool: Vec<usize> = (0..d_sae).filter(|i| !sensitive.contains(*i)).collect();
    if pool.len() < sensitive.len() {
        return Err(Error::OutOfRange {
            what: "random neuron count",
            value: sensitive.len(),
            min: 1,
            max: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x7261_6e64);
    let mut indices: Vec<usize> = sample(&mut rng, pool.len(), sensitive.len())
        .into_iter()
        .map(|i| pool[i])
        .collect();
    indices.sort_unstable();
    Ok(SensitiveSet { indices })
}

/// Apply `strategy` at strength `lambda` to every activation of `corpus`.
pub fn intervene(
    strategy: Strategy,
    corpus: &Corpus,
    model: &SaeModel,
    detection: &DetectionPlan,
    lambda: f64,
    seed: u64,
) -> Result<Corpus> {
    let sensitive = match strategy {
        Strategy::RandomNeurons => random_neuron_set(model.d_sae(), &detection.sensitive, seed)?,
        _ => detection.sensitive.clone(),
    };
    let basis = build_basis(model, &detection.coupled)?;
    let plan = ProjectionPlan::from_basis(model, basis, sensitive, lambda)?;
    let coupled = &detection.coupled.indices;
    corpus.map_values(|a| {
        let h = &a.values;
        let code = model.encode(h)?;
        match strategy {
            Strategy::Ortho | Strategy::RandomNeurons => plan.apply_code(h, &code),
            Strategy::OnlySensitive | Strategy::Amplify => {
                let sign = if strategy == Strategy::Amplify { 1.0 } else { -1.0 };
                let mut out = h.clone();
                plan.add_contribution(&code, &plan.sensitive.indices, sign * lambda, &mut out);
                Ok(out)
            }
            Strategy::OnlyCoupled => {
                let mut out = h.clone();
                plan.add_contribution(&code, coupled, -lambda, &mut out);
                Ok(out)
            }
            Strategy::CoupledAligned => {
                let mut raw = vec![0.0; h.len()];
                plan.add_contribution(&code, &plan.sensitive.indices, 1.0, &mut raw);
                let aligned = plan.basis.protected_component(&raw);
                let mut out = h.clone();
                axpy(-lambda, &aligned, &mut out);
                Ok(out)
            }
        }
    })
}

/// Intervene and score one strategy.
pub fn run_ablation(
    strategy: Strategy,
    corpus: &Corpus,
    model: &SaeModel,
    detection: &DetectionPlan,
    lambda: f64,
    seed: u64,
) -> Result<AblationResult> {
    let truth = corpus.ground_truth()?;
    let after = intervene(strategy, corpus, model, detection, lambda, seed)?;
    let basis = build_basis(model, &detection.coupled)?;
    Ok(AblationResult {
        strategy,
        lambda,
        seed,
        k_sens: detection.sensitive.len(),
        k_coupled: detection.coupled.len(),
        metrics: evaluate(corpus, &after, truth, &basis)?,
    })
}

/// Every strategy at the same `lambda`.
pub fn run_suite(
    corpus: &Corpus,
    model: &SaeModel,
    detection: &DetectionPlan,
    lambda: f64,
    seed: u64,
) -> Result<Vec<AblationResult>> {
    Strategy::ALL
        .iter()
        .map(|&s| run_ablation(s, corpus, model, detection, lambda, seed))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub metrics: ErasureMetrics,
}

/// Ortho erasure at each suppression strength.
pub fn lambda_sweep(
    corpus: &Corpus,
    model: &SaeModel,
    detection: &DetectionPlan,
    lambdas: &[f64],
) -> Result<Vec<SweepPoint>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("λ list is empty".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidConfig(format!("λ must be finite and >= 0, got {bad}")));
    }
    lambdas
        .iter()
        .map(|&lambda| {
            let r = run_ablation(Strategy::Ortho, corpus, model, detection, lambda, 0)?;
            Ok(SweepPoint {
                lambda,
                metrics: r.metrics,
            })
        })
        .collect()
}
