//! Reference models used to audit the black-box pipeline.
//!
//! Two independent constructions of the same separated operator exist when
//! more structure than "assemble at mu" is available:
//!
//! - The intrusive route evaluates one matrix per candidate coefficient
//!   function (for finite elements, a quadrature-weighted assembly of each
//!   interpolation basis function).
//! - The split-snapshot route only needs the parameter-entangled part of the
//!   operator at the selected stage-one parameters. The key identity: the
//!   matrix of selected kernel values factors exactly as G = B * C with C
//!   upper triangular, so inverting C converts raw snapshots into images of
//!   the interpolation basis.
//!
//! Production code never requires either; they exist so studies can measure
//! how far the nonintrusive model is from what a code with internal access
//! would produce.

use std::sync::Arc;

use crate::eim::EimInterpolant;
use crate::layout::{KernelFn, LayoutError, RowMeta, ScalarFn, TermBlock, TermLayout};
use crate::linalg::{invert_upper, solve_unit_lower, solve_upper, DMat, LinalgError};
use crate::provider::{ProviderError, SplitMatrixProvider};
use crate::scalar::Scalar;

#[derive(Debug)]
pub enum OracleError {
    Linalg(LinalgError),
    Layout(LayoutError),
    Provider(ProviderError),
}

impl std::fmt::Display for OracleError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OracleError::Linalg(e) => write!(f, "{e}"),
            OracleError::Layout(e) => write!(f, "{e}"),
            OracleError::Provider(e) => write!(f, "split assembly failed: {e}"),
        }
    }
}

impl std::error::Error for OracleError {}

impl From<LinalgError> for OracleError {
    fn from(e: LinalgError) -> Self {
        OracleError::Linalg(e)
    }
}

impl From<LayoutError> for OracleError {
    fn from(e: LayoutError) -> Self {
        OracleError::Layout(e)
    }
}

/// Coefficients of each selected row in the interpolation basis, as an upper
/// triangular matrix: row_l = sum_{k <= l} C[k][l] q_k. The diagonal entry is
/// the signed residual peak at the moment row l was selected.
pub fn upper_coeffs<T: Scalar>(itp: &EimInterpolant<T>) -> DMat<T> {
    let d = itp.terms();
    let mut c = DMat::zeros(d, d);
    for l in 0..d {
        // Row l lives in the span of the first l+1 basis functions, so the
        // leading block of the interpolation triangle determines it.
        let vals: Vec<T> = (0..=l)
            .map(|m| itp.sel_rows()[(l, itp.col_sel()[m])])
            .collect();
        let coeffs = solve_unit_lower(itp.b(), &vals);
        for (k, v) in coeffs.into_iter().enumerate() {
            c[(k, l)] = v;
        }
    }
    c
}

/// Inverse of [`upper_coeffs`]: converts raw selected-row snapshots into
/// images of the interpolation basis functions.
pub fn gamma<T: Scalar>(itp: &EimInterpolant<T>) -> Result<DMat<T>, OracleError> {
    Ok(invert_upper(&upper_coeffs(itp))?)
}

/// Linear-combination step of the split-snapshot route: given payloads S_l
/// matching the selected stage-one rows (in selection order), produce
/// M_k = sum_l Gamma[l][k] S_l, the payload image of basis function q_k.
pub fn gamma_terms<T: Scalar>(
    itp: &EimInterpolant<T>,
    snapshots: &[DMat<T>],
) -> Result<Vec<DMat<T>>, OracleError> {
    assert_eq!(snapshots.len(), itp.terms(), "one snapshot per term");
    let g = gamma(itp)?;
    let d = itp.terms();
    let (rows, cols) = (snapshots[0].rows(), snapshots[0].cols());
    let mut out = Vec::with_capacity(d);
    for k in 0..d {
        let mut m = DMat::zeros(rows, cols);
        for (l, s) in snapshots.iter().enumerate() {
            m.axpy(g[(l, k)], s);
        }
        out.push(m);
    }
    Ok(out)
}

/// How well the converted snapshots reproduce the basis functions: the worst
/// sup-norm error of sum_l Gamma[l][k] row_l against q_k over all k. Grows
/// with the spread of the residual history; meaningful at moderate depth.
pub fn gamma_reconstruction_error<T: Scalar>(
    itp: &EimInterpolant<T>,
) -> Result<f64, OracleError> {
    let g = gamma(itp)?;
    let d = itp.terms();
    let n_cols = itp.n_cols();
    let mut worst = 0.0f64;
    for k in 0..d {
        for j in 0..n_cols {
            let mut acc = T::ZERO;
            for l in 0..d {
                acc += g[(l, k)] * itp.sel_rows()[(l, j)];
            }
            // Basis functions are sup-normalized, so absolute error is
            // already relative.
            let e = (acc - itp.q()[(j, k)]).abs();
            if e > worst {
                worst = e;
            }
        }
    }
    Ok(worst)
}

/// Reference model built from split snapshots: the parameter-entangled part
/// at the selected stage-one parameters plus the closed-form remainder.
#[derive(Debug)]
pub struct SplitSnapshotModel<T> {
    block: TermBlock<T>,
    c: DMat<T>,
    snapshots: Vec<DMat<T>>,
    static_coeff: ScalarFn<T>,
    static_mat: DMat<T>,
}

impl<T: Scalar> SplitSnapshotModel<T> {
    pub fn c(&self) -> &DMat<T> {
        &self.c
    }

    pub fn snapshots(&self) -> &[DMat<T>] {
        &self.snapshots
    }

    /// Evaluate at an arbitrary parameter: kernel coefficients lambda(mu),
    /// then eta from the triangular system C eta = lambda, then the snapshot
    /// combination plus the closed-form part.
    pub fn evaluate(&self, mu: f64) -> Result<DMat<T>, OracleError> {
        let lam = self.block.lambda_at(mu);
        let eta = solve_upper(&self.c, &lam)?;
        let mut out = DMat::zeros(self.static_mat.rows(), self.static_mat.cols());
        for (e, s) in eta.iter().zip(&self.snapshots) {
            out.axpy(*e, s);
        }
        out.axpy(self.static_coeff.eval(mu), &self.static_mat);
        Ok(out)
    }
}

/// Build the split-snapshot reference from a provider that exposes the
/// operator split. Calls assemble_param once per stage-one term.
pub fn build_split_snapshot_model<T: Scalar>(
    itp: &EimInterpolant<T>,
    kernel: KernelFn<T>,
    provider: &dyn SplitMatrixProvider<T>,
) -> Result<SplitSnapshotModel<T>, OracleError> {
    let block = TermBlock::from_interpolant(
        itp,
        kernel,
        vec![crate::layout::builtin_scalar::<T>("one").unwrap()],
    );
    let c = upper_coeffs(itp);
    let mut snapshots = Vec::with_capacity(itp.terms());
    for &nu in itp.row_labels_sel() {
        snapshots.push(provider.assemble_param(nu).map_err(OracleError::Provider)?);
    }
    let (static_coeff, static_mat) = provider.static_term();
    Ok(SplitSnapshotModel {
        block,
        c,
        snapshots,
        static_coeff,
        static_mat,
    })
}

/// Fully separated reference: one constant matrix per candidate coefficient
/// function, combined with the shared candidate evaluation path.
#[derive(Debug)]
pub struct IntrusiveModel<T> {
    layout: Arc<TermLayout<T>>,
    terms: Vec<DMat<T>>,
}

impl<T: Scalar> IntrusiveModel<T> {
    pub fn terms(&self) -> &[DMat<T>] {
        &self.terms
    }

    pub fn evaluate(&self, mu: f64) -> Result<DMat<T>, OracleError> {
        let z = self.layout.z_values_at(mu)?;
        let mut out = DMat::zeros(self.terms[0].rows(), self.terms[0].cols());
        for (zv, t) in z.iter().zip(&self.terms) {
            out.axpy(*zv, t);
        }
        Ok(out)
    }
}

/// Assemble the intrusive reference from per-family term builders. The
/// lambda builder is called once per (block, term); the result is reused for
/// every weight because weights multiply the coefficient, not the matrix.
pub fn build_intrusive<T: Scalar>(
    layout: &Arc<TermLayout<T>>,
    mut lambda_term: impl FnMut(usize, usize) -> Result<DMat<T>, OracleError>,
    mut psi_term: impl FnMut(usize) -> Result<DMat<T>, OracleError>,
) -> Result<IntrusiveModel<T>, OracleError> {
    let meta = layout.row_meta();
    let mut cache: Vec<Vec<Option<DMat<T>>>> = layout
        .blocks()
        .iter()
        .map(|b| vec![None; b.terms()])
        .collect();
    let mut terms = Vec::with_capacity(meta.len());
    for m in meta {
        let t = match m {
            RowMeta::Lambda { block, term, .. } => {
                if cache[block][term].is_none() {
                    cache[block][term] = Some(lambda_term(block, term)?);
                }
                cache[block][term].clone().unwrap()
            }
            RowMeta::Psi { index } => psi_term(index)?,
        };
        terms.push(t);
    }
    Ok(IntrusiveModel {
        layout: layout.clone(),
        terms,
    })
}

/// Quadrature-route term builder for the one-dimensional problem: the matrix
/// image of basis function q_m is the stiffness weighted by q_m itself.
pub fn fem_lambda_matrix(
    problem: &crate::fem1d::Fem1DProblem,
    itp: &EimInterpolant<f64>,
    m: usize,
) -> DMat<f64> {
    let q_col: Vec<f64> = (0..itp.n_cols()).map(|j| itp.q()[(j, m)]).collect();
    problem.weighted_stiffness(&q_col)
}
