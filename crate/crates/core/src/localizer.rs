// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention-based localization of the intervention layer.
//!
//! A layer is scored by how strongly sensitive modifier tokens attend to
//! the target entity (sensitive attention, SA) minus how much the
//! background rows of the attention map move between a sensitive prompt
//! and its non-sensitive counterpart (contextual disturbance, CD). The
//! layer with the largest mean difference is selected.
//!
//! SA reads the raw head-averaged matrix; CD reads row-normalized rows.
//! Layer indices passed to the scoring functions are 0-based, while
//! [`LayerScoreReport::selected_layer`] is a 1-based layer number.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PromptClass;
use crate::error::{Error, Result};

/// Disjoint token index sets (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPartition {
    /// Sensitive modifier tokens.
    pub sensitive: Vec<usize>,
    /// Target entity tokens.
    pub target: Vec<usize>,
    /// Background tokens compared by the disturbance metric.
    pub context: Vec<usize>,
}

/// Head-averaged attention maps of one prompt, one `T×T` matrix per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub layers: Vec<DMatrix<f64>>,
    pub partition: TokenPartition,
    pub prompt_class: PromptClass,
    pub pair_id: u64,
}

impl AttentionTrace {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.layers.first().map_or(0, |m| m.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.n_tokens();
        for m in &self.layers {
            if m.nrows() != t || m.ncols() != t {
                return Err(Error::DimensionInconsistency(format!(
                    "attention matrix {}x{} in a trace of {t} tokens",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidConfig(
                    "attention entries must be finite and non-negative".into(),
                ));
            }
        }
        let p = &self.partition;
        let mut seen = vec![false; t];
        for &i in p.sensitive.iter().chain(&p.target).chain(&p.context) {
            if i >= t {
                return Err(Error::OutOfRange {
                    what: "token index",
                    value: i,
                    min: 0,
                    max: t.saturating_sub(1),
                });
            }
            if seen[i] {
                return Err(Error::InvalidConfig(format!(
                    "token {i} belongs to more than one partition set"
                )));
            }
            seen[i] = true;
        }
        if self.prompt_class == PromptClass::Sensitive {
            if p.sensitive.is_empty() {
                return Err(Error::EmptyTokenSet("sensitive modifier tokens"));
            }
            if p.target.is_empty() {
                return Err(Error::EmptyTokenSet("target entity tokens"));
            }
        }
        Ok(())
    }

    fn layer(&self, layer: usize) -> Result<&DMatrix<f64>> {
        self.layers.get(layer).ok_or(Error::LayerOutOfRange {
            layer,
            layers: self.layers.len(),
        })
    }
}

/// Mean raw attention weight from sensitive modifier tokens to target tokens.
pub fn sensitive_attention(trace: &AttentionTrace, layer: usize) -> Result<f64> {
    let a = trace.layer(layer)?;
    let p = &trace.partition;
    if p.sensitive.is_empty() {
        return Err(Error::EmptyTokenSet("sensitive modifier tokens"));
    }
    if p.target.is_empty() {
        return Err(Error::EmptyTokenSet("target entity tokens"));
    }
    let mut sum = 0.0;
    for &i in &p.sensitive {
        for &j in &p.target {
            sum += a[(i, j)];
        }
    }
    Ok(sum / (p.sensitive.len() * p.target.len()) as f64)
}

/// Row `t` scaled to sum to one; an all-zero row becomes uniform.
fn normalized_row(a: &DMatrix<f64>, t: usize) -> impl Iterator<Item = f64> + '_ {
    let n = a.ncols();
    let sum: f64 = a.row(t).iter().sum();
    (0..n).map(move |j| {
        if sum > 0.0 {
            a[(t, j)] / sum
        } else {
            1.0 / n as f64
        }
    })
}

/// Mean L1 distance between row-normalized background rows of a sensitive
/// trace and its non-sensitive counterpart. Lies in `[0, 2]`.
pub fn contextual_disturbance(
    sensitive: &AttentionTrace,
    non_sensitive: &AttentionTrace,
    layer: usize,
) -> Result<f64> {
    let a = sensitive.layer(layer)?;
    let b = non_sensitive.layer(layer)?;
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            context: "contextual disturbance pair",
            expected: a.nrows(),
            found: b.nrows(),
        });
    }
    if sensitive.partition.context != non_sensitive.partition.context {
        return Err(Error::InvalidConfig(
            "paired traces disagree on the background token set".into(),
        ));
    }
    let context = &sensitive.partition.context;
    if context.is_empty() {
        return Err(Error::EmptyTokenSet("background tokens"));
    }
    let mut total = 0.0;
    for &t in context {
        if t >= a.nrows() {
            return Err(Error::OutOfRange {
                what: "token index",
                value: t,
                min: 0,
                max: a.nrows().saturating_sub(1),
            });
        }
        total += normalized_row(a, t)
            .zip(normalized_row(b, t))
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>();
    }
    Ok(total / context.len() as f64)
}

/// A sensitive trace with its non-sensitive counterpart.
pub type TracePair<'a> = (&'a AttentionTrace, &'a AttentionTrace);

/// Match sensitive and non-sensitive traces by `pair_id`, ordered by id.
/// Unmatched traces are ignored.
pub fn pair_traces(traces: &[AttentionTrace]) -> Result<Vec<TracePair<'_>>> {
    let mut sens: BTreeMap<u64, &AttentionTrace> = BTreeMap::new();
    let mut non: BTreeMap<u64, &AttentionTrace> = BTreeMap::new();
    for t in traces {
        let slot = match t.prompt_class {
            PromptClass::Sensitive => &mut sens,
            PromptClass::NonSensitive => &mut non,
        };
        slot.entry(t.pair_id).or_insert(t);
    }
    let pairs: Vec<_> = sens
        .iter()
        .filter_map(|(id, s)| non.get(id).map(|n| (*s, *n)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    Ok(pairs)
}

/// Mean of `SA − CD` over the pairs at one layer.
pub fn sensitive_score(pairs: &[TracePair<'_>], layer: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    let mut sum = 0.0;
    for (s, n) in pairs {
        sum += sensitive_attention(s, layer)? - contextual_disturbance(s, n, layer)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// 1-based number of the first maximal entry.
pub fn argmax_layer(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScoreReport {
    pub sensitive_attention: Vec<f64>,
    pub contextual_disturbance: Vec<f64>,
    pub sensitive_score: Vec<f64>,
    /// 1-based number of the layer with the largest sensitive score.
    pub selected_layer: usize,
    pub n_pairs: usize,
}

/// Score every layer and pick the global maximum (lowest layer on ties).
pub fn select_layer(traces: &[AttentionTrace]) -> Result<LayerScoreReport> {
    for t in traces {
        t.validate()?;
    }
    let pairs = pair_traces(traces)?;
    let n_layers = pairs[0].0.n_layers();
    for (s, n) in &pairs {
        for t in [s, n] {
            if t.n_layers() != n_layers {
                return Err(Error::DimensionMismatch {
                    context: "layers per trace",
                    expected: n_layers,
                    found: t.n_layers(),
                });
            }
        }
    }
    if n_layers == 0 {
        return Err(Error::LayerOutOfRange { layer: 0, layers: 0 });
    }
    let count = pairs.len() as f64;
    let mut sa = Vec::with_capacity(n_layers);
    let mut cd = Vec::with_capacity(n_layers);
    let mut ss = Vec::with_capacity(n_layers);
    for layer in 0..n_layers {
        let (mut sa_sum, mut cd_sum) = (0.0, 0.0);
        for (s, n) in &pairs {
            sa_sum += sensitive_attention(s, layer)?;
            cd_sum += contextual_disturbance(s, n, layer)?;
        }
        sa.push(sa_sum / count);
        cd.push(cd_sum / count);
        ss.push(sensitive_score(&pairs, layer)?);
    }
    let selected_layer = argmax_layer(&ss).expect("at least one layer");
    Ok(LayerScoreReport {
        sensitive_attention: sa,
        contextual_disturbance: cd,
        sensitive_score: ss,
        selected_layer,
        n_pairs: pairs.len(),
    })
}

/// Synthetic attention traces with a planted sensitive-attention peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub n_layers: usize,
    /// 1-based layer carrying the strongest modifier→target attention.
    pub peak_layer: usize,
    pub n_pairs: usize,
    pub n_tokens: usize,
    /// Attention mass routed from modifiers to the target at the peak.
    pub peak_boost: f64,
    /// Routed mass far from the peak.
    pub base_boost: f64,
    /// Width (in layers) of the bump around the peak.
    pub width: f64,
    /// Mixing weight of the per-pair perturbation of background rows.
    pub context_jitter: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            n_layers: 12,
            peak_layer: 10,
            n_pairs: 16,
            n_tokens: 12,
            peak_boost: 0.6,
            base_boost: 0.05,
            width: 1.5,
            context_jitter: 0.02,
        }
    }
}

impl TraceConfig {
    /// Planted modifier→target mass per layer (0-based index).
    pub fn boost_profile(&self) -> Vec<f64> {
        let peak = self.peak_layer as f64 - 1.0;
        (0..self.n_layers)
            .map(|l| {
                let x = (l as f64 - peak) / self.width;
                self.base_boost + (self.peak_boost - self.base_boost) * (-0.5 * x * x).exp()
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_pairs == 0 {
            return Err(Error::InvalidConfig("trace set needs layers and pairs".into()));
        }
        if self.peak_layer == 0 || self.peak_layer > self.n_layers {
            return Err(Error::OutOfRange {
                what: "peak_layer",
                value: self.peak_layer,
                min: 1,
                max: self.n_layers,
            });
        }
        if self.n_tokens < 6 {
            return Err(Error::InvalidConfig("traces need at least 6 tokens".into()));
        }
        for (name, v) in [
            ("peak_boost", self.peak_boost),
            ("base_boost", self.base_boost),
            ("context_jitter", self.context_jitter),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.width <= 0.0 {
            return Err(Error::InvalidConfig("width must be positive".into()));
        }
        Ok(())
    }
}

fn random_stochastic_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let row: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = row.iter().sum();
    row.into_iter().map(|v| v / s).collect()
}

/// Generate paired traces: sensitive prompts route `boost(l)` of every
/// modifier row to the target token, their counterparts do not, and the
/// background rows differ only by a small jitter.
pub fn synthetic_traces(config: &TraceConfig, seed: u64) -> Result<Vec<AttentionTrace>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x7472_6163_6573); // independent of the activation stream
    let t = config.n_tokens;
    let partition = TokenPartition {
        sensitive: vec![2, 3],
        target: vec![5],
        context: (0..t).filter(|i| ![2, 3, 5].contains(i)).collect(),
    };
    let profile = config.boost_profile();
    let mut out = Vec::with_capacity(2 * config.n_pairs);
    for pair in 0..config.n_pairs {
        let mut sens_layers = Vec::with_capacity(config.n_layers);
        let mut non_layers = Vec::with_capacity(config.n_layers);
        for &boost in &profile {
            let mut base = DMatrix::<f64>::zeros(t, t);
            for i in 0..t {
                let row = random_stochastic_row(&mut rng, t);
                for (j, v) in row.into_iter().enumerate() {
                    base[(i, j)] = v;
                }
            }
            let mut sens = base.clone();
            let mut non = base;
            for &i in &partition.sensitive {
                for j in 0..t {
                    let routed = if partition.target.contains(&j) {
                        1.0 / partition.target.len() as f64
                    } else {
                        0.0
                    };
                    sens[(i, j)] = (1.0 - boost) * sens[(i, j)] + boost * routed;
                }
            }
            for &i in &partition.context {
                let jitter = random_stochastic_row(&mut rng, t);
                for (j, v) in jitter.into_iter().enumerate() {
                    non[(i, j)] = (1.0 - config.context_jitter) * non[(i, j)]
                        + config.context_jitter * v;
                }
            }
            sens_layers.push(sens);
            non_layers.push(non);
        }
        out.push(AttentionTrace {
            layers: sens_layers,
            partition: partition.clone(),
            prompt_class: PromptClass::Sensitive,
            pair_id: pair as u64,
        });
        out.push(AttentionTrace {
            layers: non_layers,
            partition: partition.clone(),
            prompt_class: PromptClass::NonSensitive,
            pair_id: pair as u64,
        });
    }
    Ok(out)
}
