// SPDX-License-Identifier: MIT OR Apache-2.0

//! Null-space projection of the sensitive intervention direction.
//!
//! The coupled neurons' decoder columns `W_C` span a protected subspace.
//! The raw direction `d_raw = Σ z_i w_i` over active sensitive neurons is
//! replaced by its component orthogonal to that subspace,
//! `d* = d_raw − Q(Qᵀ d_raw)`, where `Q` is an orthonormal basis from a
//! column-pivoted Householder QR of `W_C`. The activation update
//! `h̃ = h − λ d*` then leaves `W_Cᵀ h` unchanged.
//!
//! The hot path only ever performs `Qᵀv` and `Qc` products; the explicit
//! `d × d` projector exists in [`gram_projection`] and
//! [`ProtectedBasis::projector`] for verification.

use nalgebra::{DMatrix, DVector};

use crate::detector::{CoupledSet, SensitiveSet};
use crate::error::{Error, Result};
use crate::linalg::{axpy, col, dot, norm, ColPivQr};
use crate::sae::{SaeModel, SparseCode};

/// Relative threshold on the triangular diagonal below which QR columns are
/// treated as linearly dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Suppression strength used when none is given.
pub const DEFAULT_LAMBDA: f64 = 3.0;

/// Orthonormal basis of the protected subspace `span(W_C)`.
#[derive(Debug, Clone)]
pub struct ProtectedBasis {
    /// Coupled decoder columns, `d × |C|`.
    pub w_c: DMatrix<f64>,
    /// `d × rank`, orthonormal columns.
    pub q: DMatrix<f64>,
    /// `rank × |C|`, upper trapezoidal, columns in pivoted order.
    pub r: DMatrix<f64>,
    pub pivots: Vec<usize>,
    pub rank: usize,
}

impl ProtectedBasis {
    /// Factor an explicit `W_C`.
    pub fn from_columns(w_c: DMatrix<f64>) -> Result<Self> {
        if w_c.ncols() == 0 {
            return Err(Error::EmptyCoupledSet);
        }
        let qr = ColPivQr::new(&w_c, RANK_TOLERANCE);
        Ok(ProtectedBasis {
            w_c,
            q: qr.q,
            r: qr.r,
            pivots: qr.pivots,
            rank: qr.rank,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_c.nrows()
    }

    /// `Q R` with columns restored to the order of `W_C`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let pivoted = &self.q * &self.r;
        let mut out = DMatrix::zeros(pivoted.nrows(), pivoted.ncols());
        for (j, &p) in self.pivots.iter().enumerate() {
            out.set_column(p, &pivoted.column(j));
        }
        out
    }

    /// Explicit `QQᵀ`. Verification only; allocates `d × d`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.q * self.q.transpose()
    }

    /// `Qᵀ v`, written into `coeffs` (length `rank`).
    pub fn coefficients_into(&self, v: &[f64], coeffs: &mut [f64]) {
        for (j, c) in coeffs.iter_mut().enumerate() {
            *c = dot(col(&self.q, j), v);
        }
    }

    /// Replace `v` by `v − Q(Qᵀv)` in place.
    pub fn remove_component(&self, v: &mut [f64]) {
        let mut coeffs = vec![0.0; self.rank];
        self.coefficients_into(v, &mut coeffs);
        for (j, &c) in coeffs.iter().enumerate() {
            axpy(-c, col(&self.q, j), v);
        }
    }

    /// `Q(Qᵀv)`: the component of `v` inside the protected subspace.
    pub fn protected_component(&self, v: &[f64]) -> Vec<f64> {
        let mut coeffs = vec![0.0; self.rank];
        self.coefficients_into(v, &mut coeffs);
        let mut out = vec![0.0; v.len()];
        for (j, &c) in coeffs.iter().enumerate() {
            axpy(c, col(&self.q, j), &mut out);
        }
        out
    }

    /// `max_j |⟨w_j, v⟩|` over the coupled columns.
    pub fn max_protected_response(&self, v: &[f64]) -> f64 {
        (0..self.w_c.ncols())
            .map(|j| dot(col(&self.w_c, j), v).abs())
            .fold(0.0, f64::max)
    }
}

/// Gather the coupled decoder columns and factor them.
pub fn build_basis(model: &SaeModel, coupled: &CoupledSet) -> Result<ProtectedBasis> {
    if coupled.is_empty() {
        return Err(Error::EmptyCoupledSet);
    }
    if let Some(&bad) = coupled.indices.iter().find(|&&j| j >= model.d_sae()) {
        return Err(Error::OutOfRange {
            what: "coupled index",
            value: bad,
            min: 0,
            max: model.d_sae() - 1,
        });
    }
    ProtectedBasis::from_columns(model.decoder_columns(&coupled.indices))
}

/// `d_raw = Σ_{i∈N_sens} z_i w_i` over the sensitive neurons of `code`.
pub fn raw_direction(model: &SaeModel, code: &SparseCode, sensitive: &SensitiveSet) -> Result<Vec<f64>> {
    if code.len() != model.d_sae() {
        return Err(Error::DimensionMismatch {
            context: "sparse code",
            expected: model.d_sae(),
            found: code.len(),
        });
    }
    let mut out = vec![0.0; model.d()];
    add_raw_direction(model, code, &sensitive.indices, 1.0, &mut out);
    Ok(out)
}

fn add_raw_direction(model: &SaeModel, code: &SparseCode, indices: &[usize], scale: f64, out: &mut [f64]) {
    for &i in indices {
        let zi = code.values[i];
        if zi != 0.0 {
            axpy(scale * zi, model.decoder_column(i), out);
        }
    }
}

/// `d* = d_raw − Q(Qᵀ d_raw)`.
pub fn orthogonalize(d_raw: &[f64], basis: &ProtectedBasis) -> Result<Vec<f64>> {
    if d_raw.len() != basis.dim() {
        return Err(Error::DimensionMismatch {
            context: "raw direction",
            expected: basis.dim(),
            found: d_raw.len(),
        });
    }
    let mut out = d_raw.to_vec();
    basis.remove_component(&mut out);
    Ok(out)
}

/// Everything needed to erase activations at one layer.
#[derive(Debug, Clone)]
pub struct ProjectionPlan<'m> {
    pub model: &'m SaeModel,
    pub basis: ProtectedBasis,
    pub sensitive: SensitiveSet,
    pub lambda: f64,
}

impl<'m> ProjectionPlan<'m> {
    pub fn new(
        model: &'m SaeModel,
        sensitive: SensitiveSet,
        coupled: &CoupledSet,
        lambda: f64,
    ) -> Result<Self> {
        if coupled.indices.iter().any(|j| sensitive.contains(*j)) {
            return Err(Error::InvalidConfig(
                "sensitive and coupled sets must be disjoint".into(),
            ));
        }
        if let Some(&bad) = sensitive.indices.iter().find(|&&i| i >= model.d_sae()) {
            return Err(Error::OutOfRange {
                what: "sensitive index",
                value: bad,
                min: 0,
                max: model.d_sae() - 1,
            });
        }
        let basis = build_basis(model, coupled)?;
        Self::from_basis(model, basis, sensitive, lambda)
    }

    pub fn from_basis(
        model: &'m SaeModel,
        basis: ProtectedBasis,
        sensitive: SensitiveSet,
        lambda: f64,
    ) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "suppression strength must be finite and nonnegative, got {lambda}"
            )));
        }
        if basis.dim() != model.d() {
            return Err(Error::DimensionMismatch {
                context: "protected basis",
                expected: model.d(),
                found: basis.dim(),
            });
        }
        Ok(ProjectionPlan {
            model,
            basis,
            sensitive,
            lambda,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::from_basis(self.model, self.basis.clone(), self.sensitive.clone(), lambda)
    }

    /// `d*` for a given code.
    pub fn direction(&self, code: &SparseCode) -> Result<Vec<f64>> {
        let mut d = raw_direction(self.model, code, &self.sensitive)?;
        self.basis.remove_component(&mut d);
        Ok(d)
    }

    /// `h̃ = h − λ d*(Enc(h))`.
    pub fn apply(&self, h: &[f64]) -> Result<Vec<f64>> {
        let code = self.model.encode(h)?;
        self.apply_code(h, &code)
    }

    /// The post-encode half of [`apply`](Self::apply): raw direction,
    /// orthogonalization and update for an already computed code.
    pub fn apply_code(&self, h: &[f64], code: &SparseCode) -> Result<Vec<f64>> {
        if h.len() != self.model.d() {
            return Err(Error::DimensionMismatch {
                context: "activation",
                expected: self.model.d(),
                found: h.len(),
            });
        }
        let d = self.direction(code)?;
        let mut out = h.to_vec();
        axpy(-self.lambda, &d, &mut out);
        Ok(out)
    }

    /// Internal helper for strategies that add `scale · Σ z_i w_i` over an
    /// arbitrary index set.
    pub(crate) fn add_contribution(&self, code: &SparseCode, indices: &[usize], scale: f64, out: &mut [f64]) {
        add_raw_direction(self.model, code, indices, scale, out);
    }
}

/// How [`gram_projection`] and [`constrained_lsq_oracle`] invert `W_CᵀW_C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GramMode {
    /// Cholesky solve; rank-deficient inputs are an error.
    #[default]
    Strict,
    /// Moore–Penrose pseudo-inverse of the Gram matrix.
    PseudoInverse,
}

/// Relative pivot size below which the Gram matrix counts as singular.
const GRAM_TOLERANCE: f64 = 1e-12;

fn gram_inverse(w_c: &DMatrix<f64>, mode: GramMode) -> Result<DMatrix<f64>> {
    if w_c.ncols() == 0 {
        return Err(Error::EmptyCoupledSet);
    }
    let gram = w_c.transpose() * w_c;
    let scale = gram.diagonal().max();
    match mode {
        GramMode::Strict => {
            if scale <= 0.0 {
                return Err(Error::SingularGram);
            }
            let chol = gram.clone().cholesky().ok_or(Error::SingularGram)?;
            let l = chol.l_dirty();
            let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            if min_pivot < GRAM_TOLERANCE * scale {
                return Err(Error::SingularGram);
            }
            Ok(chol.inverse())
        }
        GramMode::PseudoInverse => {
            let svd = gram.svd(true, true);
            let cutoff = GRAM_TOLERANCE * svd.singular_values.max().max(0.0);
            svd.pseudo_inverse(cutoff)
                .map_err(|e| Error::InvalidConfig(format!("pseudo-inverse failed: {e}")))
        }
    }
}

/// Explicit `W_C (W_CᵀW_C)⁻¹ W_Cᵀ` (`d × d`).
pub fn gram_projection(w_c: &DMatrix<f64>, mode: GramMode) -> Result<DMatrix<f64>> {
    let inv = gram_inverse(w_c, mode)?;
    Ok(w_c * inv * w_c.transpose())
}

/// Solution of `min ½‖d − d_raw‖²` subject to `W_Cᵀd = 0` via Lagrange
/// multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeSolution {
    pub direction: Vec<f64>,
    pub multipliers: Vec<f64>,
    /// `‖W_Cᵀ d‖`.
    pub feasibility_residual: f64,
    /// `‖(d − d_raw) + W_C ν‖`.
    pub stationarity_residual: f64,
}

/// `ν = (W_CᵀW_C)⁻¹ W_Cᵀ d_raw`, `d = d_raw − W_C ν`.
pub fn constrained_lsq_oracle(d_raw: &[f64], w_c: &DMatrix<f64>, mode: GramMode) -> Result<LagrangeSolution> {
    if d_raw.len() != w_c.nrows() {
        return Err(Error::DimensionMismatch {
            context: "raw direction",
            expected: w_c.nrows(),
            found: d_raw.len(),
        });
    }
    let inv = gram_inverse(w_c, mode)?;
    let raw = DVector::from_column_slice(d_raw);
    let nu = inv * (w_c.transpose() * &raw);
    let correction = w_c * &nu;
    let direction = &raw - &correction;
    let feasibility_residual = (w_c.transpose() * &direction).norm();
    let stationarity_residual = ((&direction - &raw) + &correction).norm();
    Ok(LagrangeSolution {
        direction: direction.as_slice().to_vec(),
        multipliers: nu.as_slice().to_vec(),
        feasibility_residual,
        stationarity_residual,
    })
}

/// Agreement between the QR, Gram and Lagrange routes on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    /// `max |QQᵀ − W_C(W_CᵀW_C)⁻¹W_Cᵀ|`.
    pub projector_gap: f64,
    /// `max |d*_QR − (I − P_gram) d_raw|`.
    pub gram_direction_gap: f64,
    /// `max |d*_QR − d_lagrange|`.
    pub oracle_direction_gap: f64,
    /// Larger of the two KKT residuals.
    pub kkt_residual: f64,
    pub multipliers: Vec<f64>,
}

impl EquivalenceReport {
    pub fn max_gap(&self) -> f64 {
        self.projector_gap
            .max(self.gram_direction_gap)
            .max(self.oracle_direction_gap)
    }
}

pub fn equivalence_report(basis: &ProtectedBasis, d_raw: &[f64], mode: GramMode) -> Result<EquivalenceReport> {
    let ortho = orthogonalize(d_raw, basis)?;
    let p_gram = gram_projection(&basis.w_c, mode)?;
    let projector_gap = (basis.projector() - &p_gram).amax();
    let raw = DVector::from_column_slice(d_raw);
    let via_gram = &raw - &p_gram * &raw;
    let oracle = constrained_lsq_oracle(d_raw, &basis.w_c, mode)?;
    let gap = |other: &[f64]| ortho.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(EquivalenceReport {
        projector_gap,
        gram_direction_gap: gap(via_gram.as_slice()),
        oracle_direction_gap: gap(&oracle.direction),
        kkt_residual: oracle.feasibility_residual.max(oracle.stationarity_residual),
        multipliers: oracle.multipliers,
    })
}

/// `max‖W_Cᵀ d*‖ / (1 + ‖d_raw‖)`-style relative orthogonality error.
pub fn orthogonality_error(basis: &ProtectedBasis, d_raw: &[f64], d_star: &[f64]) -> f64 {
    let v = DVector::from_column_slice(d_star);
    (basis.w_c.transpose() * v).norm() / (1.0 + norm(d_raw))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn single_unit_column() {
        let u = [0.6, 0.0, 0.8];
        let b = ProtectedBasis::from_columns(DMatrix::from_column_slice(3, 1, &u)).unwrap();
        assert_eq!(b.rank, 1);
        let q = col(&b.q, 0);
        let sign = q[0].signum();
        for (a, b) in q.iter().zip(&u) {
            assert!((a - sign * b).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicate_columns_have_rank_one() {
        let w = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 2.0, 1.0, 2.0, 2.0]);
        let b = ProtectedBasis::from_columns(w.clone()).unwrap();
        assert_eq!(b.rank, 1);
        assert!((b.reconstruct() - w).amax() < 1e-12);
    }

    #[test]
    fn empty_coupled_set_is_rejected() {
        assert!(matches!(
            ProtectedBasis::from_columns(DMatrix::zeros(4, 0)),
            Err(Error::EmptyCoupledSet)
        ));
    }

    #[test]
    fn axis_projection() {
        let b = ProtectedBasis::from_columns(DMatrix::from_column_slice(3, 1, &e(3, 0))).unwrap();
        let d = orthogonalize(&[1.0, 1.0, 0.0], &b).unwrap();
        assert_eq!(d, vec![0.0, 1.0, 0.0]);
        // inside the span → 0, orthogonal → unchanged
        let d = orthogonalize(&[2.5, 0.0, 0.0], &b).unwrap();
        assert!(d.iter().all(|x| x.abs() < 1e-15));
        assert_eq!(orthogonalize(&[0.0, 3.0, -1.0], &b).unwrap(), vec![0.0, 3.0, -1.0]);
        assert!(orthogonalize(&[1.0, 0.0], &b).is_err());
    }

    #[test]
    fn gram_of_axis() {
        let w = DMatrix::from_column_slice(3, 1, &e(3, 0));
        let p = gram_projection(&w, GramMode::Strict).unwrap();
        let mut expect = DMatrix::zeros(3, 3);
        expect[(0, 0)] = 1.0;
        assert_eq!(p, expect);
    }

    #[test]
    fn singular_gram_needs_pseudo_inverse() {
        let w = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(gram_projection(&w, GramMode::Strict), Err(Error::SingularGram)));
        let p = gram_projection(&w, GramMode::PseudoInverse).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((&p * &p - &p).amax() < 1e-12);
    }

    #[test]
    fn scalar_lagrange_solve() {
        let w = DMatrix::from_column_slice(3, 1, &e(3, 0));
        let sol = constrained_lsq_oracle(&[1.0, 1.0, 0.0], &w, GramMode::Strict).unwrap();
        assert_eq!(sol.multipliers, vec![1.0]);
        assert_eq!(sol.direction, vec![0.0, 1.0, 0.0]);
        let sol = constrained_lsq_oracle(&[0.0, 2.0, 1.0], &w, GramMode::Strict).unwrap();
        assert_eq!(sol.multipliers, vec![0.0]);
        assert_eq!(sol.direction, vec![0.0, 2.0, 1.0]);
    }

    fn hand_model() -> SaeModel {
        // three orthonormal-ish decoder columns in R³
        let w_dec = DMatrix::from_column_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.6, 0.8, 0.0]);
        SaeModel::from_parts(w_dec.transpose(), vec![0.0; 3], w_dec, vec![0.0; 3], 3).unwrap()
    }

    #[test]
    fn raw_direction_sums_active_columns() {
        let m = hand_model();
        let sens = SensitiveSet { indices: vec![0, 2] };
        let none = SparseCode::from_dense(vec![0.0, 1.0, 0.0]);
        assert_eq!(raw_direction(&m, &none, &sens).unwrap(), vec![0.0; 3]);
        let one = SparseCode::from_dense(vec![2.0, 0.0, 0.0]);
        assert_eq!(norm(&raw_direction(&m, &one, &sens).unwrap()), 2.0);
        let two = SparseCode::from_dense(vec![1.0, 0.0, 0.5]);
        let d = raw_direction(&m, &two, &sens).unwrap();
        // 1·(1,0,0) + 0.5·(0.6,0.8,0)
        assert!((d[0] - 1.3).abs() < 1e-15 && (d[1] - 0.4).abs() < 1e-15 && d[2] == 0.0);
        assert!(raw_direction(&m, &SparseCode::from_dense(vec![1.0]), &sens).is_err());
    }

    #[test]
    fn zero_lambda_is_identity() {
        let m = hand_model();
        let coupled = CoupledSet {
            indices: vec![1],
            strengths: vec![1.0],
            degenerate: false,
        };
        let plan = ProjectionPlan::new(&m, SensitiveSet { indices: vec![0] }, &coupled, 0.0).unwrap();
        let h = [0.7, 0.2, 0.1];
        assert_eq!(plan.apply(&h).unwrap(), h.to_vec());
        assert!(ProjectionPlan::new(&m, SensitiveSet { indices: vec![0] }, &coupled, -1.0).is_err());
        assert!(ProjectionPlan::new(&m, SensitiveSet { indices: vec![1] }, &coupled, 1.0).is_err());
    }

    #[test]
    fn apply_preserves_protected_projection() {
        let m = hand_model();
        let coupled = CoupledSet {
            indices: vec![2],
            strengths: vec![1.0],
            degenerate: false,
        };
        let plan = ProjectionPlan::new(&m, SensitiveSet { indices: vec![0] }, &coupled, 3.0).unwrap();
        let h = [1.0, 0.1, 0.3];
        let out = plan.apply(&h).unwrap();
        let w = m.decoder_column(2);
        assert!((dot(w, &out) - dot(w, &h)).abs() < 1e-12);
        assert!(out[0] < h[0]);
    }
}
