// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sensitive and coupled neuron detection.
//!
//! Sensitive neurons are the SAE features whose weighted frequency score
//! (firing rate times mean firing magnitude) rises most from non-sensitive
//! to sensitive prompts. Coupled neurons are the remaining features whose
//! codes move most when the sensitive features' decoder contributions are
//! subtracted from the dense activation and the result is re-encoded.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PromptClass};
use crate::error::{Error, Result};
use crate::io;
use crate::linalg::axpy;
use crate::sae::{SaeModel, SparseCode};

pub const PLAN_SCHEMA: &str = "orthoeraser-plan/1";

/// Firing statistics of one prompt class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub frequency: Vec<f64>,
    pub mean_magnitude: Vec<f64>,
    pub wfs: Vec<f64>,
    pub n_prompts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronStats {
    pub sensitive: ClassStats,
    pub non_sensitive: ClassStats,
    /// `WFS_sens − WFS_non` per neuron.
    pub delta_wfs: Vec<f64>,
}

impl NeuronStats {
    pub fn n_neurons(&self) -> usize {
        self.delta_wfs.len()
    }
}

fn class_stats(model: &SaeModel, corpus: &Corpus, class: PromptClass) -> Result<ClassStats> {
    let n = model.d_sae();
    let mut fires = vec![0usize; n];
    let mut sums = vec![0.0; n];
    let mut count = 0usize;
    for a in corpus.of_class(class) {
        let z = model.encode(&a.values)?;
        for &i in &z.active {
            fires[i] += 1;
            sums[i] += z.values[i];
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyClass(class.name()));
    }
    let frequency: Vec<f64> = fires.iter().map(|&f| f as f64 / count as f64).collect();
    let mean_magnitude: Vec<f64> = fires
        .iter()
        .zip(&sums)
        .map(|(&f, &s)| if f == 0 { 0.0 } else { s / f as f64 })
        .collect();
    let wfs = frequency
        .iter()
        .zip(&mean_magnitude)
        .map(|(f, mu)| f * mu)
        .collect();
    Ok(ClassStats {
        frequency,
        mean_magnitude,
        wfs,
        n_prompts: count,
    })
}

/// Per-neuron frequency, firing-conditional mean magnitude and WFS for both
/// prompt classes, plus their difference.
pub fn neuron_stats(model: &SaeModel, corpus: &Corpus) -> Result<NeuronStats> {
    corpus.require_both_classes()?;
    let sensitive = class_stats(model, corpus, PromptClass::Sensitive)?;
    let non_sensitive = class_stats(model, corpus, PromptClass::NonSensitive)?;
    let delta_wfs = sensitive
        .wfs
        .iter()
        .zip(&non_sensitive.wfs)
        .map(|(s, n)| s - n)
        .collect();
    Ok(NeuronStats {
        sensitive,
        non_sensitive,
        delta_wfs,
    })
}

/// Indices ordered by descending score, ascending index on ties.
fn rank_desc(scores: &[f64], candidates: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = candidates.collect();
    idx.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    idx
}

/// `N_sens`: the top-`K_s` neurons by ΔWFS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensitiveSet {
    pub indices: Vec<usize>,
}

impl SensitiveSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.contains(&i)
    }

    /// Membership mask over `n` neurons.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in &self.indices {
            if i < n {
                m[i] = true;
            }
        }
        m
    }
}

pub fn select_sensitive(stats: &NeuronStats, k_sens: usize) -> Result<SensitiveSet> {
    let n = stats.n_neurons();
    if k_sens == 0 || k_sens > n {
        return Err(Error::OutOfRange {
            what: "K_s",
            value: k_sens,
            min: 1,
            max: n,
        });
    }
    let mut indices = rank_desc(&stats.delta_wfs, 0..n);
    indices.truncate(k_sens);
    Ok(SensitiveSet { indices })
}

/// Result of subtracting the sensitive decoder contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub ablated: Vec<f64>,
    pub code: SparseCode,
    pub ablated_code: SparseCode,
}

/// `h′ = h − Σ_{i∈N_sens} z_i w_i^dec`, together with `z = Enc(h)` and
/// `z′ = Enc(h′)`.
pub fn zero_ablate(model: &SaeModel, h: &[f64], sensitive: &SensitiveSet) -> Result<Ablation> {
    let code = model.encode(h)?;
    let mut ablated = h.to_vec();
    for &i in &sensitive.indices {
        let zi = code.values[i];
        if zi != 0.0 {
            axpy(-zi, model.decoder_column(i), &mut ablated);
        }
    }
    let ablated_code = model.encode(&ablated)?;
    Ok(Ablation {
        ablated,
        code,
        ablated_code,
    })
}

/// Coupling strengths `δ_j = E|z_j − z′_j|` over sensitive-class prompts.
/// Entries of sensitive neurons are reported as 0.
pub fn coupling_strengths(
    model: &SaeModel,
    corpus: &Corpus,
    sensitive: &SensitiveSet,
) -> Result<Vec<f64>> {
    let n = model.d_sae();
    let mask = sensitive.mask(n);
    let mut delta = vec![0.0; n];
    let mut count = 0usize;
    for a in corpus.of_class(PromptClass::Sensitive) {
        let ab = zero_ablate(model, &a.values, sensitive)?;
        for j in 0..n {
            if !mask[j] {
                delta[j] += (ab.code.values[j] - ab.ablated_code.values[j]).abs();
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyClass(PromptClass::Sensitive.name()));
    }
    delta.iter_mut().for_each(|v| *v /= count as f64);
    Ok(delta)
}

/// `C`: the top-`k_c` non-sensitive neurons by coupling strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledSet {
    pub indices: Vec<usize>,
    pub strengths: Vec<f64>,
    /// Every candidate had zero coupling; the set is just the first indices.
    pub degenerate: bool,
}

impl CoupledSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn select_coupled(delta: &[f64], sensitive: &SensitiveSet, k_coupled: usize) -> Result<CoupledSet> {
    let n = delta.len();
    let mask = sensitive.mask(n);
    let available = mask.iter().filter(|m| !**m).count();
    if k_coupled == 0 || k_coupled > available {
        return Err(Error::OutOfRange {
            what: "k_c",
            value: k_coupled,
            min: 1,
            max: available,
        });
    }
    let benign = (0..n).filter(|&j| !mask[j]);
    let degenerate = benign.clone().all(|j| delta[j] == 0.0);
    if degenerate {
        log::warn!("all coupling strengths are zero; coupled set falls back to the lowest indices");
    }
    let mut indices = rank_desc(delta, benign);
    indices.truncate(k_coupled);
    let strengths = indices.iter().map(|&j| delta[j]).collect();
    Ok(CoupledSet {
        indices,
        strengths,
        degenerate,
    })
}

/// Detection output persisted between the `detect` and `erase` stages.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionPlan {
    pub sensitive: SensitiveSet,
    pub coupled: CoupledSet,
    pub coupling: Vec<f64>,
    pub stats: NeuronStats,
}

/// Run the full detection stage.
pub fn detect(
    model: &SaeModel,
    corpus: &Corpus,
    k_sens: usize,
    k_coupled: usize,
) -> Result<DetectionPlan> {
    let stats = neuron_stats(model, corpus)?;
    let sensitive = select_sensitive(&stats, k_sens)?;
    let coupling = coupling_strengths(model, corpus, &sensitive)?;
    let coupled = select_coupled(&coupling, &sensitive, k_coupled)?;
    Ok(DetectionPlan {
        sensitive,
        coupled,
        coupling,
        stats,
    })
}

#[derive(Serialize, Deserialize)]
struct WfsTable {
    frequency_sensitive: Vec<f64>,
    mean_magnitude_sensitive: Vec<f64>,
    wfs_sensitive: Vec<f64>,
    frequency_non_sensitive: Vec<f64>,
    mean_magnitude_non_sensitive: Vec<f64>,
    wfs_non_sensitive: Vec<f64>,
    delta_wfs: Vec<f64>,
    n_sensitive_prompts: usize,
    n_non_sensitive_prompts: usize,
}

#[derive(Serialize, Deserialize)]
struct PlanDoc {
    schema: String,
    version: u32,
    d_sae: usize,
    k_sens: usize,
    k_coupled: usize,
    sensitive: Vec<usize>,
    coupled: Vec<usize>,
    coupled_strengths: Vec<f64>,
    degenerate_coupling: bool,
    coupling: Vec<f64>,
    wfs: WfsTable,
}

impl DetectionPlan {
    fn to_doc(&self) -> PlanDoc {
        let s = &self.stats;
        PlanDoc {
            schema: PLAN_SCHEMA.to_owned(),
            version: io::FORMAT_VERSION,
            d_sae: s.n_neurons(),
            k_sens: self.sensitive.len(),
            k_coupled: self.coupled.len(),
            sensitive: self.sensitive.indices.clone(),
            coupled: self.coupled.indices.clone(),
            coupled_strengths: self.coupled.strengths.clone(),
            degenerate_coupling: self.coupled.degenerate,
            coupling: self.coupling.clone(),
            wfs: WfsTable {
                frequency_sensitive: s.sensitive.frequency.clone(),
                mean_magnitude_sensitive: s.sensitive.mean_magnitude.clone(),
                wfs_sensitive: s.sensitive.wfs.clone(),
                frequency_non_sensitive: s.non_sensitive.frequency.clone(),
                mean_magnitude_non_sensitive: s.non_sensitive.mean_magnitude.clone(),
                wfs_non_sensitive: s.non_sensitive.wfs.clone(),
                delta_wfs: s.delta_wfs.clone(),
                n_sensitive_prompts: s.sensitive.n_prompts,
                n_non_sensitive_prompts: s.non_sensitive.n_prompts,
            },
        }
    }

    /// Plans are stored as plain JSON numbers (shortest round-trip form).
    pub fn to_json(&self) -> String {
        io::to_pretty_json(&self.to_doc())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PlanDoc = io::parse_document(text, PLAN_SCHEMA)?;
        let n = doc.d_sae;
        let w = doc.wfs;
        for (name, v) in [
            ("coupling", &doc.coupling),
            ("delta_wfs", &w.delta_wfs),
            ("wfs_sensitive", &w.wfs_sensitive),
            ("wfs_non_sensitive", &w.wfs_non_sensitive),
        ] {
            if v.len() != n {
                return Err(Error::DimensionInconsistency(format!(
                    "plan field {name} has {} entries for {n} neurons",
                    v.len()
                )));
            }
        }
        if doc.sensitive.iter().chain(&doc.coupled).any(|&i| i >= n)
            || doc.coupled.len() != doc.coupled_strengths.len()
        {
            return Err(Error::DimensionInconsistency(
                "plan indices do not match the SAE width".into(),
            ));
        }
        if doc.coupled.iter().any(|i| doc.sensitive.contains(i)) {
            return Err(Error::MalformedFile("sensitive and coupled sets overlap".into()));
        }
        Ok(DetectionPlan {
            sensitive: SensitiveSet {
                indices: doc.sensitive,
            },
            coupled: CoupledSet {
                indices: doc.coupled,
                strengths: doc.coupled_strengths,
                degenerate: doc.degenerate_coupling,
            },
            coupling: doc.coupling,
            stats: NeuronStats {
                sensitive: ClassStats {
                    frequency: w.frequency_sensitive,
                    mean_magnitude: w.mean_magnitude_sensitive,
                    wfs: w.wfs_sensitive,
                    n_prompts: w.n_sensitive_prompts,
                },
                non_sensitive: ClassStats {
                    frequency: w.frequency_non_sensitive,
                    mean_magnitude: w.mean_magnitude_non_sensitive,
                    wfs: w.wfs_non_sensitive,
                    n_prompts: w.n_non_sensitive_prompts,
                },
                delta_wfs: w.delta_wfs,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DenseActivation;
    use nalgebra::DMatrix;

    fn act(values: Vec<f64>, id: u64, class: PromptClass) -> DenseActivation {
        DenseActivation {
            values,
            prompt_id: id,
            prompt_class: class,
        }
    }

    fn corpus(acts: Vec<DenseActivation>) -> Corpus {
        Corpus {
            d: acts[0].values.len(),
            activations: acts,
            ground_truth: None,
            attention: None,
            provenance: None,
        }
    }

    fn identity_model(d: usize) -> SaeModel {
        SaeModel::from_parts(
            DMatrix::identity(d, d),
            vec![0.0; d],
            DMatrix::identity(d, d),
            vec![0.0; d],
            d,
        )
        .unwrap()
    }

    /// Two-feature model with tied weights and decoder cosine 0.6.
    fn tilted_model() -> SaeModel {
        let w_dec = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.6, 0.8]);
        SaeModel::from_parts(w_dec.transpose(), vec![0.0; 2], w_dec, vec![0.0; 2], 2).unwrap()
    }

    #[test]
    fn constant_firing_neuron() {
        let m = identity_model(3);
        let c = corpus(vec![
            act(vec![2.0, 0.0, 1.0], 0, PromptClass::Sensitive),
            act(vec![2.0, 0.0, 0.0], 1, PromptClass::Sensitive),
            act(vec![0.0, 0.0, 4.0], 2, PromptClass::NonSensitive),
        ]);
        let s = neuron_stats(&m, &c).unwrap();
        assert_eq!(s.sensitive.wfs[0], 2.0);
        assert_eq!(s.non_sensitive.wfs[0], 0.0);
        assert_eq!(s.delta_wfs[0], 2.0);
        // never fires
        assert_eq!(s.sensitive.frequency[1], 0.0);
        assert_eq!(s.sensitive.mean_magnitude[1], 0.0);
        assert_eq!(s.delta_wfs[1], 0.0);
        // half the sensitive prompts with magnitude 1 → f=0.5, μ=1
        assert_eq!(s.sensitive.frequency[2], 0.5);
        assert_eq!(s.sensitive.mean_magnitude[2], 1.0);
        assert_eq!(s.sensitive.wfs[2], 0.5);
        assert_eq!(s.delta_wfs[2], 0.5 - 4.0);
    }

    #[test]
    fn wfs_is_frequency_times_magnitude() {
        let m = identity_model(1);
        let c = corpus(vec![
            act(vec![2.0], 0, PromptClass::Sensitive),
            act(vec![-1.0], 1, PromptClass::Sensitive),
            act(vec![0.0], 2, PromptClass::NonSensitive),
        ]);
        let s = neuron_stats(&m, &c).unwrap();
        assert_eq!(s.sensitive.frequency[0], 0.5);
        assert_eq!(s.sensitive.mean_magnitude[0], 2.0);
        assert_eq!(s.sensitive.wfs[0], 1.0);
    }

    #[test]
    fn stats_need_both_classes() {
        let m = identity_model(1);
        let c = corpus(vec![act(vec![1.0], 0, PromptClass::Sensitive)]);
        assert!(matches!(neuron_stats(&m, &c), Err(Error::EmptyClass(_))));
    }

    fn stats_with_delta(delta: Vec<f64>) -> NeuronStats {
        let n = delta.len();
        let zeros = ClassStats {
            frequency: vec![0.0; n],
            mean_magnitude: vec![0.0; n],
            wfs: vec![0.0; n],
            n_prompts: 1,
        };
        NeuronStats {
            sensitive: zeros.clone(),
            non_sensitive: zeros,
            delta_wfs: delta,
        }
    }

    #[test]
    fn sensitive_selection_tie_break() {
        let s = stats_with_delta(vec![0.9, 0.1, 0.9]);
        assert_eq!(select_sensitive(&s, 2).unwrap().indices, vec![0, 2]);
        assert_eq!(select_sensitive(&s, 3).unwrap().indices, vec![0, 2, 1]);
        assert!(select_sensitive(&s, 0).is_err());
        assert!(select_sensitive(&s, 4).is_err());
    }

    #[test]
    fn ablation_without_active_sensitive_neurons_is_identity() {
        let m = identity_model(3);
        let h = [0.0, 1.0, 2.0];
        let ab = zero_ablate(&m, &h, &SensitiveSet { indices: vec![0] }).unwrap();
        assert_eq!(ab.ablated, h.to_vec());
        assert_eq!(ab.code, ab.ablated_code);
    }

    #[test]
    fn orthonormal_ablation_only_removes_the_target() {
        let m = identity_model(3);
        let h = [1.5, 1.0, 2.0];
        let ab = zero_ablate(&m, &h, &SensitiveSet { indices: vec![0] }).unwrap();
        assert_eq!(ab.ablated_code.values[0], 0.0);
        assert_eq!(ab.ablated_code.values[1], ab.code.values[1]);
        assert_eq!(ab.ablated_code.values[2], ab.code.values[2]);
    }

    #[test]
    fn tilted_ablation_shifts_the_partner() {
        // h = 1.0·w0 + 0.5·w1; tied encoder pre-activations are W_decᵀ h
        let m = tilted_model();
        let h = [1.0 + 0.5 * 0.6, 0.5 * 0.8];
        let ab = zero_ablate(&m, &h, &SensitiveSet { indices: vec![0] }).unwrap();
        let z0 = ab.code.values[0];
        let z1 = ab.code.values[1];
        // oracle: a = W_decᵀ h, so z0 = 1.3, z1 = 0.6 + 0.5 = 1.1
        assert!((z0 - 1.3).abs() < 1e-12);
        assert!((z1 - 1.1).abs() < 1e-12);
        // removing z0·w0 lowers the partner pre-activation by 0.6·z0
        assert!((ab.ablated_code.values[1] - (z1 - 0.6 * z0)).abs() < 1e-12);

        let c = corpus(vec![
            act(h.to_vec(), 0, PromptClass::Sensitive),
            act(vec![0.0, 1.0], 1, PromptClass::NonSensitive),
        ]);
        let delta = coupling_strengths(&m, &c, &SensitiveSet { indices: vec![0] }).unwrap();
        assert_eq!(delta[0], 0.0);
        assert!((delta[1] - 0.6 * 1.3).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_model_has_no_coupling() {
        let m = identity_model(3);
        let c = corpus(vec![
            act(vec![1.0, 0.5, 0.2], 0, PromptClass::Sensitive),
            act(vec![0.7, 0.0, 0.9], 1, PromptClass::Sensitive),
            act(vec![0.0, 1.0, 1.0], 2, PromptClass::NonSensitive),
        ]);
        let sens = SensitiveSet { indices: vec![0] };
        let delta = coupling_strengths(&m, &c, &sens).unwrap();
        assert!(delta.iter().all(|&v| v == 0.0));
        let coupled = select_coupled(&delta, &sens, 2).unwrap();
        assert!(coupled.degenerate);
        assert_eq!(coupled.indices, vec![1, 2]);
    }

    #[test]
    fn coupled_selection() {
        let sens = SensitiveSet { indices: vec![0] };
        let c = select_coupled(&[0.0, 0.0, 0.5, 0.5], &sens, 1).unwrap();
        assert_eq!(c.indices, vec![2]);
        assert!(!c.degenerate);
        let c = select_coupled(&[9.0, 0.1, 0.5, 0.3], &sens, 3).unwrap();
        assert_eq!(c.indices, vec![2, 3, 1]);
        assert!(!c.indices.contains(&0));
        assert!(select_coupled(&[9.0, 0.1], &sens, 2).is_err());
        assert!(select_coupled(&[9.0, 0.1], &sens, 0).is_err());
    }

    #[test]
    fn coupling_needs_sensitive_prompts() {
        let m = identity_model(1);
        let c = corpus(vec![act(vec![1.0], 0, PromptClass::NonSensitive)]);
        assert!(coupling_strengths(&m, &c, &SensitiveSet { indices: vec![0] }).is_err());
    }
}
