// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic activation corpora with planted, deliberately non-orthogonal
//! sensitive and benign feature directions.
//!
//! The dictionary is built on an orthonormal scaffold. Each sensitive
//! column `s` is paired with a benign column tilted towards it,
//! `b = c·s + sqrt(1 − c²)·o`, so `cos(s, b) = c` exactly. Sensitive-class
//! activations mix one or more sensitive columns with benign ones;
//! non-sensitive activations use benign columns only. All coefficients
//! are non-negative and isotropic Gaussian noise is added last.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, MatrixWire};
use crate::linalg::{axpy, col, col_mut, dot, norm};
use crate::localizer::{synthetic_traces, AttentionTrace, TokenPartition, TraceConfig};

pub const CORPUS_SCHEMA: &str = "orthoeraser-corpus/1";

const SENSITIVE_COEFF: (f64, f64) = (0.5, 1.5);
const BENIGN_COEFF: (f64, f64) = (0.2, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptClass {
    Sensitive,
    NonSensitive,
}

impl PromptClass {
    pub fn name(self) -> &'static str {
        match self {
            PromptClass::Sensitive => "sensitive",
            PromptClass::NonSensitive => "non_sensitive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLabel {
    Sensitive,
    Benign,
}

impl FeatureLabel {
    pub fn name(self) -> &'static str {
        match self {
            FeatureLabel::Sensitive => "sensitive",
            FeatureLabel::Benign => "benign",
        }
    }
}

/// Planted dictionary. Column `i` of `dictionary` is a unit direction
/// tagged by `labels[i]`; `pairs` lists `(sensitive, benign)` columns whose
/// cosine equals `overlap`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub dictionary: DMatrix<f64>,
    pub labels: Vec<FeatureLabel>,
    pub pairs: Vec<(usize, usize)>,
    pub overlap: f64,
    pub seed: u64,
}

impl GroundTruth {
    pub fn dim(&self) -> usize {
        self.dictionary.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.dictionary.ncols()
    }

    pub fn column(&self, i: usize) -> &[f64] {
        col(&self.dictionary, i)
    }

    fn indices(&self, label: FeatureLabel) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == label)
            .collect()
    }

    pub fn sensitive_indices(&self) -> Vec<usize> {
        self.indices(FeatureLabel::Sensitive)
    }

    pub fn benign_indices(&self) -> Vec<usize> {
        self.indices(FeatureLabel::Benign)
    }

    pub fn benign_directions(&self) -> Vec<Vec<f64>> {
        self.benign_indices()
            .into_iter()
            .map(|i| self.column(i).to_vec())
            .collect()
    }

    /// Unit components of each sensitive column orthogonal to the span of
    /// all benign columns: the part of a sensitive feature that benign
    /// features cannot account for.
    pub fn erasable_sensitive_directions(&self) -> Result<Vec<Vec<f64>>> {
        let benign = self.benign_indices();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for &j in &benign {
            let mut v = self.column(j).to_vec();
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &v);
                    axpy(-c, q, &mut v);
                }
            }
            let n = norm(&v);
            if n > 1e-10 {
                v.iter_mut().for_each(|x| *x /= n);
                basis.push(v);
            }
        }
        let mut out = Vec::new();
        for i in self.sensitive_indices() {
            let mut v = self.column(i).to_vec();
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &v);
                    axpy(-c, q, &mut v);
                }
            }
            let n = norm(&v);
            if n < 1e-6 {
                return Err(Error::InvalidConfig(format!(
                    "sensitive column {i} lies in the span of the benign columns"
                )));
            }
            v.iter_mut().for_each(|x| *x /= n);
            out.push(v);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.n_features() {
            return Err(Error::DimensionInconsistency(format!(
                "{} labels for {} dictionary columns",
                self.labels.len(),
                self.n_features()
            )));
        }
        if self.sensitive_indices().is_empty() || self.benign_indices().is_empty() {
            return Err(Error::InvalidConfig(
                "ground truth needs at least one sensitive and one benign column".into(),
            ));
        }
        for i in 0..self.n_features() {
            let n = norm(self.column(i));
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "dictionary column {i} has norm {n}"
                )));
            }
        }
        for &(s, b) in &self.pairs {
            if s >= self.n_features() || b >= self.n_features() {
                return Err(Error::DimensionInconsistency(format!(
                    "pair ({s}, {b}) outside the dictionary"
                )));
            }
            let c = dot(self.column(s), self.column(b));
            if (c.abs() - self.overlap).abs() > 1e-6 {
                return Err(Error::InvalidConfig(format!(
                    "pair ({s}, {b}) has cosine {c}, expected {}",
                    self.overlap
                )));
            }
        }
        Ok(())
    }
}

/// One dense latent vector at the intervention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseActivation {
    pub values: Vec<f64>,
    pub prompt_id: u64,
    pub prompt_class: PromptClass,
}

/// Records where an erased corpus came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 (hex) of the plan document used for erasure.
    pub plan_hash: String,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub d: usize,
    pub activations: Vec<DenseActivation>,
    pub ground_truth: Option<GroundTruth>,
    pub attention: Option<Vec<AttentionTrace>>,
    pub provenance: Option<Provenance>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activations.is_empty()
    }

    pub fn of_class(&self, class: PromptClass) -> impl Iterator<Item = &DenseActivation> {
        self.activations
            .iter()
            .filter(move |a| a.prompt_class == class)
    }

    pub fn count(&self, class: PromptClass) -> usize {
        self.of_class(class).count()
    }

    /// Both prompt classes present; required by detection.
    pub fn require_both_classes(&self) -> Result<()> {
        for class in [PromptClass::Sensitive, PromptClass::NonSensitive] {
            if self.count(class) == 0 {
                return Err(Error::EmptyClass(class.name()));
            }
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> Result<&GroundTruth> {
        self.ground_truth.as_ref().ok_or(Error::MissingGroundTruth)
    }

    /// Same prompts with every activation replaced by `f(activation)`.
    pub fn map_values<F>(&self, mut f: F) -> Result<Corpus>
    where
        F: FnMut(&DenseActivation) -> Result<Vec<f64>>,
    {
        let activations = self
            .activations
            .iter()
            .map(|a| {
                Ok(DenseActivation {
                    values: f(a)?,
                    prompt_id: a.prompt_id,
                    prompt_class: a.prompt_class,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            d: self.d,
            activations,
            ground_truth: self.ground_truth.clone(),
            attention: self.attention.clone(),
            provenance: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for a in &self.activations {
            if a.values.len() != self.d {
                return Err(Error::DimensionInconsistency(format!(
                    "activation {} has length {}, header dimension is {}",
                    a.prompt_id,
                    a.values.len(),
                    self.d
                )));
            }
            if a.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "activation {} has non-finite entries",
                    a.prompt_id
                )));
            }
        }
        if let Some(gt) = &self.ground_truth {
            if gt.dim() != self.d {
                return Err(Error::DimensionInconsistency(format!(
                    "ground-truth dimension {} vs corpus dimension {}",
                    gt.dim(),
                    self.d
                )));
            }
            gt.validate()?;
        }
        if let Some(traces) = &self.attention {
            for t in traces {
                t.validate()?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_document(path, &CorpusDoc::from_corpus(self))
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        let doc: CorpusDoc = io::read_document(path, CORPUS_SCHEMA)?;
        doc.into_corpus()
    }

    pub fn to_json(&self) -> String {
        io::to_pretty_json(&CorpusDoc::from_corpus(self))
    }

    pub fn from_json(text: &str) -> Result<Corpus> {
        let doc: CorpusDoc = io::parse_document(text, CORPUS_SCHEMA)?;
        doc.into_corpus()
    }
}

/// Generator settings. Counts of active features per prompt are inclusive
/// ranges, clamped to the number of available columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub dim: usize,
    pub n_features: usize,
    pub n_sensitive_features: usize,
    pub overlap: f64,
    pub n_sensitive: usize,
    pub n_non_sensitive: usize,
    pub noise: f64,
    pub seed: u64,
    pub sensitive_per_prompt: (usize, usize),
    pub benign_per_prompt: (usize, usize),
    pub traces: Option<TraceConfig>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            dim: 64,
            n_features: 16,
            n_sensitive_features: 4,
            overlap: 0.6,
            n_sensitive: 512,
            n_non_sensitive: 512,
            noise: 0.01,
            seed: 0,
            sensitive_per_prompt: (1, 2),
            benign_per_prompt: (4, 5),
            traces: Some(TraceConfig::default()),
        }
    }
}

impl CorpusConfig {
    fn n_benign(&self) -> usize {
        self.n_features.saturating_sub(self.n_sensitive_features)
    }

    fn n_pairs(&self) -> usize {
        self.n_sensitive_features.min(self.n_benign())
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 4 {
            return Err(Error::InvalidConfig(format!("dim must be >= 4, got {}", self.dim)));
        }
        if self.n_features > 4 * self.dim {
            return Err(Error::OutOfRange {
                what: "n_features",
                value: self.n_features,
                min: 2,
                max: 4 * self.dim,
            });
        }
        if self.n_sensitive_features == 0 || self.n_benign() == 0 {
            return Err(Error::InvalidConfig(
                "need at least one sensitive and one benign feature".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::InvalidConfig(format!(
                "overlap must lie in [0, 1), got {}",
                self.overlap
            )));
        }
        if self.n_sensitive == 0 || self.n_non_sensitive == 0 {
            return Err(Error::InvalidConfig("prompt counts must be >= 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig("noise must be finite and >= 0".into()));
        }
        if self.n_sensitive_features + self.n_pairs() > self.dim {
            return Err(Error::DimensionMismatch {
                context: "orthonormal scaffold for the requested overlap",
                expected: self.dim,
                found: self.n_sensitive_features + self.n_pairs(),
            });
        }
        let (lo, hi) = self.sensitive_per_prompt;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(
                "sensitive_per_prompt must be a non-empty range starting at >= 1".into(),
            ));
        }
        let (lo, hi) = self.benign_per_prompt;
        if lo > hi {
            return Err(Error::InvalidConfig("benign_per_prompt is an empty range".into()));
        }
        Ok(())
    }
}

/// `n` orthonormal columns in `R^dim` by modified Gram–Schmidt (with one
/// re-orthogonalization pass) on Gaussian draws.
fn orthonormal_columns(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> DMatrix<f64> {
    debug_assert!(n <= dim);
    let mut q = DMatrix::<f64>::zeros(dim, n);
    let mut j = 0;
    while j < n {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for k in 0..j {
                let c = dot(col(&q, k), &v);
                axpy(-c, col(&q, k), &mut v);
            }
        }
        let nv = norm(&v);
        if nv < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        col_mut(&mut q, j).copy_from_slice(&v);
        j += 1;
    }
    q
}

fn build_ground_truth(cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> GroundTruth {
    let d = cfg.dim;
    let n_sens = cfg.n_sensitive_features;
    let n_benign = cfg.n_benign();
    let n_pairs = cfg.n_pairs();
    let f = cfg.n_features;
    let scaffold_cols = f.min(d);
    let scaffold = orthonormal_columns(rng, d, scaffold_cols);

    let mut dictionary = DMatrix::<f64>::zeros(d, f);
    let mut labels = Vec::with_capacity(f);
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_sens {
        col_mut(&mut dictionary, i).copy_from_slice(col(&scaffold, i));
        labels.push(FeatureLabel::Sensitive);
    }
    let c = cfg.overlap;
    let s = (1.0 - c * c).sqrt();
    for j in 0..n_benign {
        let target = n_sens + j;
        let column: Vec<f64> = if j < n_pairs {
            // tilt the free scaffold direction towards its sensitive partner
            let sens = col(&scaffold, j);
            let free = col(&scaffold, n_sens + j);
            let mut v: Vec<f64> = sens.iter().zip(free).map(|(a, b)| c * a + s * b).collect();
            let nv = norm(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            pairs.push((j, target));
            v
        } else if target < scaffold_cols {
            col(&scaffold, target).to_vec()
        } else {
            // overcomplete tail: random unit directions
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let nv = norm(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            v
        };
        col_mut(&mut dictionary, target).copy_from_slice(&column);
        labels.push(FeatureLabel::Benign);
    }
    GroundTruth {
        dictionary,
        labels,
        pairs,
        overlap: c,
        seed: cfg.seed,
    }
}

/// Planted coefficients of one prompt before rendering.
#[derive(Debug, Clone)]
struct PromptDraw {
    class: PromptClass,
    sensitive: Vec<(usize, f64)>,
    benign: Vec<(usize, f64)>,
}

fn draw_prompts(cfg: &CorpusConfig, gt: &GroundTruth, rng: &mut ChaCha8Rng) -> Vec<PromptDraw> {
    let sens_idx = gt.sensitive_indices();
    let benign_idx = gt.benign_indices();
    let pick = |rng: &mut ChaCha8Rng, pool: &[usize], range: (usize, usize), coeff: (f64, f64)| {
        let lo = range.0.min(pool.len());
        let hi = range.1.min(pool.len());
        let count = rng.random_range(lo..=hi);
        let mut chosen: Vec<usize> = sample(rng, pool.len(), count).into_iter().collect();
        chosen.sort_unstable();
        chosen
            .into_iter()
            .map(|k| (pool[k], rng.random_range(coeff.0..=coeff.1)))
            .collect::<Vec<_>>()
    };
    let mut out = Vec::with_capacity(cfg.n_sensitive + cfg.n_non_sensitive);
    for _ in 0..cfg.n_sensitive {
        let sensitive = pick(rng, &sens_idx, cfg.sensitive_per_prompt, SENSITIVE_COEFF);
        let benign = pick(rng, &benign_idx, cfg.benign_per_prompt, BENIGN_COEFF);
        out.push(PromptDraw {
            class: PromptClass::Sensitive,
            sensitive,
            benign,
        });
    }
    for _ in 0..cfg.n_non_sensitive {
        let benign = pick(rng, &benign_idx, cfg.benign_per_prompt, BENIGN_COEFF);
        out.push(PromptDraw {
            class: PromptClass::NonSensitive,
            sensitive: Vec::new(),
            benign,
        });
    }
    out
}

fn render(
    draws: &[PromptDraw],
    gt: &GroundTruth,
    sensitive_gain: f64,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<DenseActivation> {
    let d = gt.dim();
    let gauss = Normal::new(0.0, noise).expect("validated noise level");
    draws
        .iter()
        .enumerate()
        .map(|(id, p)| {
            let mut h = vec![0.0; d];
            for &(i, a) in &p.sensitive {
                axpy(sensitive_gain * a, gt.column(i), &mut h);
            }
            for &(j, b) in &p.benign {
                axpy(b, gt.column(j), &mut h);
            }
            if noise > 0.0 {
                for v in h.iter_mut() {
                    *v += gauss.sample(rng);
                }
            }
            DenseActivation {
                values: h,
                prompt_id: id as u64,
                prompt_class: p.class,
            }
        })
        .collect()
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generate a corpus. Pure function of the configuration (seed included).
pub fn generate(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed, 0);
    let gt = build_ground_truth(cfg, &mut rng);
    let draws = draw_prompts(cfg, &gt, &mut rng);
    let activations = render(&draws, &gt, 1.0, cfg.noise, &mut seeded(cfg.seed, 1));
    let attention = match &cfg.traces {
        Some(tc) => Some(synthetic_traces(tc, cfg.seed)?),
        None => None,
    };
    Ok(Corpus {
        d: cfg.dim,
        activations,
        ground_truth: Some(gt),
        attention,
        provenance: None,
    })
}

/// Per-layer corpora of the same prompts. At layer `l` the sensitive
/// coefficients are scaled by `gains[l]`; benign content is shared and each
/// layer draws its own noise. Attention traces are not attached.
pub fn generate_layered(cfg: &CorpusConfig, gains: &[f64]) -> Result<Vec<Corpus>> {
    cfg.validate()?;
    if gains.len() < 2 {
        return Err(Error::InvalidConfig(
            "a layered corpus needs at least two layers".into(),
        ));
    }
    if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::InvalidConfig("layer gains must be finite and >= 0".into()));
    }
    let mut rng = seeded(cfg.seed, 0);
    let gt = build_ground_truth(cfg, &mut rng);
    let draws = draw_prompts(cfg, &gt, &mut rng);
    Ok(gains
        .iter()
        .enumerate()
        .map(|(layer, &g)| Corpus {
            d: cfg.dim,
            activations: render(&draws, &gt, g, cfg.noise, &mut seeded(cfg.seed, 2 + layer as u64)),
            ground_truth: Some(gt.clone()),
            attention: None,
            provenance: None,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ActivationWire {
    id: u64,
    class: PromptClass,
    values: String,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthWire {
    dictionary: MatrixWire,
    labels: Vec<FeatureLabel>,
    pairs: Vec<(usize, usize)>,
    overlap: f64,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct TraceWire {
    pair_id: u64,
    class: PromptClass,
    partition: TokenPartition,
    layers: Vec<MatrixWire>,
}

#[derive(Serialize, Deserialize)]
struct CorpusDoc {
    schema: String,
    version: u32,
    d: usize,
    activations: Vec<ActivationWire>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<GroundTruthWire>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attention: Option<Vec<TraceWire>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

impl CorpusDoc {
    fn from_corpus(c: &Corpus) -> Self {
        CorpusDoc {
            schema: CORPUS_SCHEMA.to_owned(),
            version: io::FORMAT_VERSION,
            d: c.d,
            activations: c
                .activations
                .iter()
                .map(|a| ActivationWire {
                    id: a.prompt_id,
                    class: a.prompt_class,
                    values: io::encode_f64s(&a.values),
                })
                .collect(),
            ground_truth: c.ground_truth.as_ref().map(|g| GroundTruthWire {
                dictionary: MatrixWire::from_matrix(&g.dictionary),
                labels: g.labels.clone(),
                pairs: g.pairs.clone(),
                overlap: g.overlap,
                seed: g.seed,
            }),
            attention: c.attention.as_ref().map(|ts| {
                ts.iter()
                    .map(|t| TraceWire {
                        pair_id: t.pair_id,
                        class: t.prompt_class,
                        partition: t.partition.clone(),
                        layers: t.layers.iter().map(MatrixWire::from_matrix).collect(),
                    })
                    .collect()
            }),
            provenance: c.provenance.clone(),
        }
    }

    fn into_corpus(self) -> Result<Corpus> {
        let d = self.d;
        let activations = self
            .activations
            .into_iter()
            .map(|a| {
                Ok(DenseActivation {
                    values: io::vector_of_len(&a.values, d, &format!("activation {}", a.id))?,
                    prompt_id: a.id,
                    prompt_class: a.class,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ground_truth = self
            .ground_truth
            .map(|g| {
                Ok::<_, Error>(GroundTruth {
                    dictionary: g.dictionary.to_matrix("ground-truth dictionary")?,
                    labels: g.labels,
                    pairs: g.pairs,
                    overlap: g.overlap,
                    seed: g.seed,
                })
            })
            .transpose()?;
        let attention = self
            .attention
            .map(|ts| {
                ts.into_iter()
                    .map(|t| {
                        Ok(AttentionTrace {
                            layers: t
                                .layers
                                .iter()
                                .map(|m| m.to_matrix("attention layer"))
                                .collect::<Result<Vec<_>>>()?,
                            partition: t.partition,
                            prompt_class: t.class,
                            pair_id: t.pair_id,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        let corpus = Corpus {
            d,
            activations,
            ground_truth,
            attention,
            provenance: self.provenance,
        };
        corpus.validate()?;
        Ok(corpus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(overlap: f64, noise: f64) -> CorpusConfig {
        CorpusConfig {
            dim: 8,
            n_features: 2,
            n_sensitive_features: 1,
            overlap,
            n_sensitive: 1,
            n_non_sensitive: 1,
            noise,
            seed: 3,
            traces: None,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn zero_noise_activation_is_in_the_planted_span() {
        let c = generate(&small(0.0, 0.0)).unwrap();
        let gt = c.ground_truth.as_ref().unwrap();
        let s = gt.column(0);
        let b = gt.column(1);
        assert!(dot(s, b).abs() < 1e-12);
        let h = &c.of_class(PromptClass::Sensitive).next().unwrap().values;
        let mut r = h.clone();
        axpy(-dot(s, h), s, &mut r);
        axpy(-dot(b, &r), b, &mut r);
        assert!(norm(&r) < 1e-12);
    }

    #[test]
    fn requested_overlap_is_exact() {
        let c = generate(&CorpusConfig {
            overlap: 0.6,
            traces: None,
            n_sensitive: 4,
            n_non_sensitive: 4,
            ..CorpusConfig::default()
        })
        .unwrap();
        let gt = c.ground_truth.unwrap();
        assert_eq!(gt.pairs.len(), 4);
        for &(s, b) in &gt.pairs {
            assert!((dot(gt.column(s), gt.column(b)) - 0.6).abs() < 1e-6);
        }
        gt.validate().unwrap();
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = CorpusConfig {
            n_sensitive: 16,
            n_non_sensitive: 16,
            ..CorpusConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap().to_json(), generate(&cfg).unwrap().to_json());
        let other = CorpusConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap().to_json(), generate(&other).unwrap().to_json());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(generate(&small(1.0, 0.0)).is_err());
        assert!(generate(&CorpusConfig { dim: 3, ..small(0.0, 0.0) }).is_err());
        assert!(generate(&CorpusConfig { noise: -1.0, ..small(0.0, 0.0) }).is_err());
        assert!(generate(&CorpusConfig { n_features: 33, ..small(0.0, 0.0) }).is_err());
        // 5 sensitive columns need 5 free partners: 10 > 8
        let err = generate(&CorpusConfig {
            n_features: 12,
            n_sensitive_features: 5,
            ..small(0.5, 0.0)
        })
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn overcomplete_dictionary_is_unit_norm() {
        let c = generate(&CorpusConfig {
            dim: 8,
            n_features: 30,
            n_sensitive_features: 2,
            n_sensitive: 4,
            n_non_sensitive: 4,
            traces: None,
            ..CorpusConfig::default()
        })
        .unwrap();
        c.validate().unwrap();
    }

    #[test]
    fn sensitive_prompts_carry_sensitive_energy() {
        let c = generate(&CorpusConfig {
            n_sensitive: 32,
            n_non_sensitive: 32,
            noise: 0.0,
            traces: None,
            ..CorpusConfig::default()
        })
        .unwrap();
        let u = c.ground_truth().unwrap().erasable_sensitive_directions().unwrap();
        for a in c.of_class(PromptClass::NonSensitive) {
            for ui in &u {
                assert!(dot(ui, &a.values).abs() < 1e-12);
            }
        }
        for a in c.of_class(PromptClass::Sensitive) {
            assert!(u.iter().any(|ui| dot(ui, &a.values) > 0.3));
        }
    }

    #[test]
    fn layered_corpora_share_prompts() {
        let cfg = CorpusConfig {
            n_sensitive: 8,
            n_non_sensitive: 8,
            noise: 0.0,
            traces: None,
            ..CorpusConfig::default()
        };
        let layers = generate_layered(&cfg, &[1.0, 0.0]).unwrap();
        let base = generate(&cfg).unwrap();
        for (a, b) in layers[0].activations.iter().zip(&base.activations) {
            assert_eq!(a.values, b.values);
        }
        let u = base.ground_truth().unwrap().erasable_sensitive_directions().unwrap();
        for a in &layers[1].activations {
            for ui in &u {
                assert!(dot(ui, &a.values).abs() < 1e-12);
            }
        }
        assert!(generate_layered(&cfg, &[1.0]).is_err());
    }
}
