// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::ablation::{intervene, Strategy};
use super::metrics::{check_aligned, MetricDirections};
use crate::corpus::{generate_layered, Corpus, CorpusConfig, PromptClass};
use crate::detector::detect;
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::localizer::{select_layer, synthetic_traces, AttentionTrace, TraceConfig};
use crate::sae::{train, TrainConfig};

/// Per-layer sensitive gains for a layered corpus: the peak layer carries
/// the full concept, every other layer a leak proportional to its share of
/// the attention profile.
pub fn bypass_gains(profile: &[f64], leak: f64) -> Vec<f64> {
    let (peak, &top) = profile
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |best, (i, v)| if *v > *best.1 { (i, v) } else { best });
    profile
        .iter()
        .enumerate()
        .map(|(l, &p)| if l == peak { 1.0 } else { leak * p / top })
        .collect()
}

/// Leak of non-peak layers relative to the peak in [`layered_scenario`].
pub const DEFAULT_LEAK: f64 = 0.05;

/// Attention traces plus per-layer corpora of the same prompts.
#[derive(Debug, Clone)]
pub struct LayeredScenario {
    pub traces: Vec<AttentionTrace>,
    pub layers: Vec<Corpus>,
    pub gains: Vec<f64>,
}

/// Traces from `traces` and one corpus per traced layer, with sensitive
/// gains from [`bypass_gains`] over the planted attention profile. Both use
/// `corpus.seed`.
pub fn layered_scenario(corpus: &CorpusConfig, traces: &TraceConfig, leak: f64) -> Result<LayeredScenario> {
    let gains = bypass_gains(&traces.boost_profile(), leak);
    let cfg = CorpusConfig {
        traces: None,
        ..corpus.clone()
    };
    Ok(LayeredScenario {
        traces: synthetic_traces(traces, corpus.seed)?,
        layers: generate_layered(&cfg, &gains)?,
        gains,
    })
}

/// Pipeline settings used at every erased layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSetup {
    pub train: TrainConfig,
    pub k_sens: usize,
    pub k_coupled: usize,
    pub lambda: f64,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAblationRow {
    /// 1-based.
    pub layer: usize,
    pub sensitive_score: f64,
    pub residual_energy: f64,
    pub residual_ratio: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAblationTable {
    pub selected_layer: usize,
    /// Output concept energy when no layer is erased.
    pub baseline_energy: f64,
    pub rows: Vec<LayerAblationRow>,
}

/// Concept readouts of sensitive prompts: `[prompt][direction]` clamped
/// inner products at one layer.
fn readouts(corpus: &Corpus, dirs: &MetricDirections) -> Vec<Vec<f64>> {
    corpus
        .of_class(PromptClass::Sensitive)
        .map(|a| dirs.sensitive.iter().map(|u| dot(&a.values, u).max(0.0)).collect())
        .collect()
}

/// Every layer writes its share of the concept into the output; the output
/// energy is the mean squared sum of per-layer readouts.
fn output_energy(per_layer: &[&Vec<Vec<f64>>]) -> f64 {
    let n_prompts = per_layer[0].len();
    let n_dirs = per_layer[0].first().map_or(0, |r| r.len());
    if n_prompts == 0 || n_dirs == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for p in 0..n_prompts {
        for u in 0..n_dirs {
            let s: f64 = per_layer.iter().map(|r| r[p][u]).sum();
            total += s * s;
        }
    }
    total / (n_prompts * n_dirs) as f64
}

/// Localize with the traces, then erase at each layer of `erase_at`
/// (1-based) and measure the residual output concept energy.
pub fn layer_ablation(
    traces: &[AttentionTrace],
    layers: &[Corpus],
    erase_at: &[usize],
    setup: &LayerSetup,
) -> Result<LayerAblationTable> {
    if layers.len() < 2 {
        return Err(Error::InvalidConfig(
            "layer ablation needs a multi-layer corpus".into(),
        ));
    }
    let scores = select_layer(traces)?;
    if scores.sensitive_score.len() != layers.len() {
        return Err(Error::DimensionMismatch {
            context: "trace layers vs corpus layers",
            expected: layers.len(),
            found: scores.sensitive_score.len(),
        });
    }
    for c in &layers[1..] {
        check_aligned(&layers[0], c)?;
    }
    let dirs = MetricDirections::from_truth(layers[0].ground_truth()?)?;
    let base: Vec<Vec<Vec<f64>>> = layers.iter().map(|c| readouts(c, &dirs)).collect();
    let baseline_energy = output_energy(&base.iter().collect::<Vec<_>>());

    let mut rows = Vec::with_capacity(erase_at.len());
    for &layer in erase_at {
        if layer == 0 || layer > layers.len() {
            return Err(Error::LayerOutOfRange {
                layer,
                layers: layers.len(),
            });
        }
        let corpus = &layers[layer - 1];
        let (model, _) = train(corpus, &setup.train)?;
        let detection = detect(&model, corpus, setup.k_sens, setup.k_coupled)?;
        let erased = intervene(setup.strategy, corpus, &model, &detection, setup.lambda, setup.train.seed)?;
        let erased_readout = readouts(&erased, &dirs);
        let mixed: Vec<&Vec<Vec<f64>>> = base
            .iter()
            .enumerate()
            .map(|(m, r)| if m == layer - 1 { &erased_readout } else { r })
            .collect();
        let residual_energy = output_energy(&mixed);
        log::info!("layer {layer}: residual output energy {residual_energy:.6}");
        rows.push(LayerAblationRow {
            layer,
            sensitive_score: scores.sensitive_score[layer - 1],
            residual_energy,
            residual_ratio: residual_energy / baseline_energy.max(f64::MIN_POSITIVE),
            selected: layer == scores.selected_layer,
        });
    }
    Ok(LayerAblationTable {
        selected_layer: scores.selected_layer,
        baseline_energy,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gains_peak_at_profile_maximum() {
        let g = bypass_gains(&[0.1, 0.5, 0.2], 0.1);
        assert_eq!(g, vec![0.1 * 0.1 / 0.5, 1.0, 0.1 * 0.2 / 0.5]);
    }

    #[test]
    fn output_energy_sums_layers_before_squaring() {
        let a = vec![vec![1.0], vec![0.0]];
        let b = vec![vec![2.0], vec![1.0]];
        // prompt 0: (1+2)² = 9, prompt 1: 1
        assert_eq!(output_energy(&[&a, &b]), 5.0);
    }
}
