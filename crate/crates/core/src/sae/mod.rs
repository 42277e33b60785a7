// SPDX-License-Identifier: MIT OR Apache-2.0

//! Top-K sparse autoencoder.
//!
//! `a = W_enc (h − b_dec) + b_enc`, `z = TopK(ReLU(a))`, `ĥ = W_dec z + b_dec`.
//! Top-K keeps the `k` largest strictly positive pre-activations and breaks
//! ties at the boundary towards the lower feature index.

mod adam;
mod train;

use std::cmp::Ordering;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::io::{self, MatrixWire};
use crate::linalg::{axpy, col, col_mut, dot, norm};

pub use adam::Adam;
pub use train::{train, TrainConfig, TrainReport};

pub const SAE_SCHEMA: &str = "orthoeraser-sae/1";

/// ChaCha stream for decoder initialization.
const INIT_STREAM: u64 = 0x7361_6569;

/// Sparse feature vector with its support listed in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub values: Vec<f64>,
    pub active: Vec<usize>,
}

impl SparseCode {
    pub fn from_dense(values: Vec<f64>) -> Self {
        let active = (0..values.len()).filter(|&i| values[i] != 0.0).collect();
        SparseCode { values, active }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.active.len()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    /// `d × D_sae`; column `i` is row `i` of `W_enc`.
    encoder: DMatrix<f64>,
    b_enc: Vec<f64>,
    /// `d × D_sae`; column `i` is the decoder direction of feature `i`.
    decoder: DMatrix<f64>,
    b_dec: Vec<f64>,
    k: usize,
}

impl SaeModel {
    /// Build from `W_enc` (`D_sae × d`), `b_enc`, `W_dec` (`d × D_sae`) and `b_dec`.
    pub fn from_parts(
        w_enc: DMatrix<f64>,
        b_enc: Vec<f64>,
        w_dec: DMatrix<f64>,
        b_dec: Vec<f64>,
        k: usize,
    ) -> Result<Self> {
        let (d_sae, d) = w_enc.shape();
        if w_dec.shape() != (d, d_sae) {
            return Err(Error::DimensionInconsistency(format!(
                "W_enc is {d_sae}x{d} but W_dec is {}x{}",
                w_dec.nrows(),
                w_dec.ncols()
            )));
        }
        if b_enc.len() != d_sae {
            return Err(Error::DimensionMismatch {
                context: "b_enc",
                expected: d_sae,
                found: b_enc.len(),
            });
        }
        if b_dec.len() != d {
            return Err(Error::DimensionMismatch {
                context: "b_dec",
                expected: d,
                found: b_dec.len(),
            });
        }
        if k == 0 || k > d_sae {
            return Err(Error::OutOfRange {
                what: "k",
                value: k,
                min: 1,
                max: d_sae,
            });
        }
        Ok(SaeModel {
            encoder: w_enc.transpose(),
            b_enc,
            decoder: w_dec,
            b_dec,
            k,
        })
    }

    /// Seeded initialization: unit Gaussian decoder columns, tied encoder,
    /// zero biases.
    pub fn init(d: usize, d_sae: usize, k: usize, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // Own stream: the corpus draws its dictionary from stream 0 of the
        // same seed, and a shared stream would start the decoder on it.
        rng.set_stream(INIT_STREAM);
        let mut decoder = DMatrix::<f64>::zeros(d, d_sae);
        for j in 0..d_sae {
            let c = col_mut(&mut decoder, j);
            loop {
                for v in c.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let n = norm(c);
                if n > 1e-8 {
                    c.iter_mut().for_each(|v| *v /= n);
                    break;
                }
            }
        }
        let w_enc = decoder.transpose();
        SaeModel::from_parts(w_enc, vec![0.0; d_sae], decoder, vec![0.0; d], k)
    }

    pub fn d(&self) -> usize {
        self.decoder.nrows()
    }

    pub fn d_sae(&self) -> usize {
        self.decoder.ncols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn w_dec(&self) -> &DMatrix<f64> {
        &self.decoder
    }

    pub fn w_enc(&self) -> DMatrix<f64> {
        self.encoder.transpose()
    }

    pub fn b_enc(&self) -> &[f64] {
        &self.b_enc
    }

    pub fn b_dec(&self) -> &[f64] {
        &self.b_dec
    }

    /// Decoder direction `w_i^dec`.
    pub fn decoder_column(&self, i: usize) -> &[f64] {
        col(&self.decoder, i)
    }

    pub fn encoder_row(&self, i: usize) -> &[f64] {
        col(&self.encoder, i)
    }

    /// `W_C`: the decoder columns of `indices`, in order.
    pub fn decoder_columns(&self, indices: &[usize]) -> DMatrix<f64> {
        let mut out = DMatrix::<f64>::zeros(self.d(), indices.len());
        for (j, &i) in indices.iter().enumerate() {
            col_mut(&mut out, j).copy_from_slice(self.decoder_column(i));
        }
        out
    }

    /// Largest deviation of a decoder column norm from one.
    pub fn decoder_norm_error(&self) -> f64 {
        (0..self.d_sae())
            .map(|i| (norm(self.decoder_column(i)) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn normalize_decoder(&mut self) {
        for j in 0..self.d_sae() {
            let c = col_mut(&mut self.decoder, j);
            let n = norm(c);
            if n > 0.0 {
                c.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    fn check_input(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.d() {
            return Err(Error::DimensionMismatch {
                context: "SAE input",
                expected: self.d(),
                found: h.len(),
            });
        }
        Ok(())
    }

    /// `W_enc (h − b_dec) + b_enc` written into `out`, with `centered`
    /// as scratch for `h − b_dec`.
    pub(crate) fn preactivations_into(&self, h: &[f64], centered: &mut [f64], out: &mut [f64]) {
        for ((c, x), b) in centered.iter_mut().zip(h).zip(&self.b_dec) {
            *c = x - b;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.b_enc[i] + dot(col(&self.encoder, i), centered);
        }
    }

    pub fn preactivations(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.check_input(h)?;
        let mut centered = vec![0.0; self.d()];
        let mut out = vec![0.0; self.d_sae()];
        self.preactivations_into(h, &mut centered, &mut out);
        Ok(out)
    }

    pub fn encode(&self, h: &[f64]) -> Result<SparseCode> {
        let a = self.preactivations(h)?;
        Ok(top_k_code(a, self.k))
    }

    pub fn decode(&self, z: &SparseCode) -> Result<Vec<f64>> {
        if z.len() != self.d_sae() {
            return Err(Error::DimensionMismatch {
                context: "sparse code",
                expected: self.d_sae(),
                found: z.len(),
            });
        }
        let mut out = self.b_dec.clone();
        for &i in &z.active {
            axpy(z.values[i], self.decoder_column(i), &mut out);
        }
        Ok(out)
    }

    pub fn reconstruct(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.decode(&self.encode(h)?)
    }

    /// Mean relative L2 reconstruction error. A zero input counts as error 0
    /// when reconstructed exactly and 1 otherwise.
    pub fn reconstruction_error(&self, corpus: &Corpus) -> Result<f64> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut total = 0.0;
        for a in &corpus.activations {
            let rec = self.reconstruct(&a.values)?;
            let err: f64 = a
                .values
                .iter()
                .zip(&rec)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            let scale = norm(&a.values);
            total += if scale > 0.0 {
                err / scale
            } else if err == 0.0 {
                0.0
            } else {
                1.0
            };
        }
        Ok(total / corpus.len() as f64)
    }

    /// Model with features reordered so that new feature `j` is old
    /// feature `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.d_sae();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidConfig("not a permutation of the features".into()));
        }
        let mut out = self.clone();
        for (j, &p) in perm.iter().enumerate() {
            col_mut(&mut out.encoder, j).copy_from_slice(col(&self.encoder, p));
            col_mut(&mut out.decoder, j).copy_from_slice(col(&self.decoder, p));
            out.b_enc[j] = self.b_enc[p];
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_with_history(path, None)
    }

    pub fn save_with_history(&self, path: &Path, history: Option<&[f64]>) -> Result<()> {
        io::write_document(path, &self.to_doc(history))
    }

    pub fn to_json(&self) -> String {
        io::to_pretty_json(&self.to_doc(None))
    }

    fn to_doc(&self, history: Option<&[f64]>) -> SaeDoc {
        SaeDoc {
            schema: SAE_SCHEMA.to_owned(),
            version: io::FORMAT_VERSION,
            d: self.d(),
            d_sae: self.d_sae(),
            k: self.k,
            w_enc: MatrixWire::from_matrix(&self.w_enc()),
            b_enc: io::encode_f64s(&self.b_enc),
            w_dec: MatrixWire::from_matrix(&self.decoder),
            b_dec: io::encode_f64s(&self.b_dec),
            loss_history: history.map(io::encode_f64s),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: SaeDoc = io::read_document(path, SAE_SCHEMA)?;
        doc.into_model()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SaeDoc = io::parse_document(text, SAE_SCHEMA)?;
        doc.into_model()
    }
}

/// Keep the `k` largest positive entries (lower index wins ties).
pub fn top_k_code(mut a: Vec<f64>, k: usize) -> SparseCode {
    let mut candidates: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    if candidates.len() > k {
        select_top_k(&a, &mut candidates, k);
    }
    candidates.sort_unstable();
    let mut keep = vec![false; a.len()];
    for &i in &candidates {
        keep[i] = true;
    }
    for (v, kept) in a.iter_mut().zip(&keep) {
        if !kept {
            *v = 0.0;
        }
    }
    SparseCode {
        values: a,
        active: candidates,
    }
}

/// Truncate `candidates` to the `k` best by (value desc, index asc).
pub(crate) fn select_top_k(a: &[f64], candidates: &mut Vec<usize>, k: usize) {
    let order = |&i: &usize, &j: &usize| -> Ordering {
        a[j].partial_cmp(&a[i])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    };
    if k == 0 {
        candidates.clear();
        return;
    }
    candidates.select_nth_unstable_by(k - 1, order);
    candidates.truncate(k);
}

#[derive(Serialize, Deserialize)]
struct SaeDoc {
    schema: String,
    version: u32,
    d: usize,
    d_sae: usize,
    k: usize,
    w_enc: MatrixWire,
    b_enc: String,
    w_dec: MatrixWire,
    b_dec: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loss_history: Option<String>,
}

impl SaeDoc {
    fn into_model(self) -> Result<SaeModel> {
        let w_enc = self.w_enc.to_matrix("W_enc")?;
        let w_dec = self.w_dec.to_matrix("W_dec")?;
        if w_enc.shape() != (self.d_sae, self.d) {
            return Err(Error::DimensionInconsistency(format!(
                "W_enc is {}x{}, header says {}x{}",
                w_enc.nrows(),
                w_enc.ncols(),
                self.d_sae,
                self.d
            )));
        }
        let b_enc = io::vector_of_len(&self.b_enc, self.d_sae, "b_enc")?;
        let b_dec = io::vector_of_len(&self.b_dec, self.d, "b_dec")?;
        SaeModel::from_parts(w_enc, b_enc, w_dec, b_dec, self.k)
    }
}
