//! Greedy interpolation engine on sampled tables.
//!
//! Given a table of function values (rows are functions, columns are
//! evaluation points), the build selects function/point pairs one at a time:
//! the function with the worst current sup-norm residual over the columns,
//! then the column where that residual peaks. Each selected residual is
//! normalized by its peak value and becomes a basis function. Coefficients
//! for a new function need only its values at the selected columns, which is
//! what makes the downstream matrix model cheap.
//!
//! Determinism contract: ties pick the lowest index, and the parallel scan
//! performs the same floating-point operations in the same order per row as
//! the sequential one, so results are bit-identical across backends and
//! thread counts.

use crate::grid::SampleGrid;
use crate::linalg::{solve_unit_lower, DMat};
use crate::scalar::Scalar;
use crate::Backend;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub enum EimError {
    /// First greedy pass found nothing but zeros.
    DegenerateTable,
    ZeroMaxTerms,
}

impl std::fmt::Display for EimError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EimError::DegenerateTable => {
                write!(f, "table is identically zero, nothing to interpolate")
            }
            EimError::ZeroMaxTerms => write!(f, "max_terms must be at least 1"),
        }
    }
}

impl std::error::Error for EimError {}

/// Stopping tolerance on the greedy residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopTol {
    /// Stop once the candidate residual is at or below this value. Zero
    /// forces the build to run until max_terms or exact reproduction.
    Absolute(f64),
    /// Threshold is this factor times the first selected residual.
    RelativeToFirst(f64),
}

impl Default for StopTol {
    fn default() -> Self {
        StopTol::RelativeToFirst(1e-12)
    }
}

impl StopTol {
    fn threshold(self, first_residual: f64) -> f64 {
        match self {
            StopTol::Absolute(a) => a,
            StopTol::RelativeToFirst(r) => r * first_residual,
        }
    }
}

/// Why the build stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxTerms,
    Tolerance,
    /// Ran out of rows or columns.
    Exhausted,
}

/// Result of the greedy build.
///
/// Invariants, checked by the test suite:
/// - `b` is unit lower triangular; entries above the diagonal are exact
///   zeros and every entry has modulus at most 1 (up to rounding).
/// - selections are nested: rebuilding with a smaller term count yields a
///   prefix of the same selections and residual history.
/// - `residual_history[k]` is the sup-norm residual of the k-th selected
///   function at the moment of its selection.
#[derive(Debug, Clone)]
pub struct EimInterpolant<T> {
    n_rows: usize,
    n_cols: usize,
    row_sel: Vec<usize>,
    col_sel: Vec<usize>,
    row_labels_sel: Vec<f64>,
    col_labels_sel: Vec<f64>,
    b: DMat<T>,
    /// Basis functions on the full column grid, one column per term.
    q: DMat<T>,
    /// Raw selected rows, one per term, on the full column grid.
    sel_rows: DMat<T>,
    residual_history: Vec<f64>,
    stop_reason: StopReason,
}

impl<T: Scalar> EimInterpolant<T> {
    pub fn terms(&self) -> usize {
        self.row_sel.len()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row_sel(&self) -> &[usize] {
        &self.row_sel
    }

    pub fn col_sel(&self) -> &[usize] {
        &self.col_sel
    }

    /// Labels of the selected rows, in selection order.
    pub fn row_labels_sel(&self) -> &[f64] {
        &self.row_labels_sel
    }

    /// Labels of the selected columns, in selection order.
    pub fn col_labels_sel(&self) -> &[f64] {
        &self.col_labels_sel
    }

    pub fn b(&self) -> &DMat<T> {
        &self.b
    }

    pub fn q(&self) -> &DMat<T> {
        &self.q
    }

    pub fn sel_rows(&self) -> &DMat<T> {
        &self.sel_rows
    }

    pub fn residual_history(&self) -> &[f64] {
        &self.residual_history
    }

    pub fn stop_reason(&self) -> StopReason {
        self.stop_reason
    }

    /// Interpolation coefficients from values at the selected columns only.
    pub fn online_coefficients(&self, values_at_sel_cols: &[T]) -> Vec<T> {
        assert_eq!(values_at_sel_cols.len(), self.terms(), "coefficient count");
        solve_unit_lower(&self.b, values_at_sel_cols)
    }

    /// Expand coefficients over the full column grid.
    pub fn evaluate(&self, coeffs: &[T]) -> Vec<T> {
        assert_eq!(coeffs.len(), self.terms(), "coefficient count");
        let mut out = vec![T::ZERO; self.n_cols];
        for (m, &c) in coeffs.iter().enumerate() {
            for j in 0..self.n_cols {
                out[j] += c * self.q[(j, m)];
            }
        }
        out
    }

    /// Per-row sup-norm interpolation residual over a compatible table.
    pub fn sup_residuals(&self, grid: &SampleGrid<T>, backend: Backend) -> Vec<f64> {
        assert_eq!(grid.n_cols(), self.n_cols, "column grid mismatch");
        let scan = |i: usize| -> f64 {
            let row = grid.row(i);
            let vals_sel: Vec<T> = self.col_sel.iter().map(|&j| row[j]).collect();
            let lam = self.online_coefficients(&vals_sel);
            let mut worst = 0.0f64;
            for j in 0..self.n_cols {
                let mut approx = T::ZERO;
                for (m, &c) in lam.iter().enumerate() {
                    approx += c * self.q[(j, m)];
                }
                let r = (row[j] - approx).abs();
                if r > worst {
                    worst = r;
                }
            }
            worst
        };
        run_over_rows(grid.n_rows(), backend, scan)
    }
}

fn run_over_rows<R: Send>(n_rows: usize, backend: Backend, scan: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    match backend {
        Backend::Sequential => (0..n_rows).map(scan).collect(),
        Backend::Parallel => {
            #[cfg(feature = "parallel")]
            {
                (0..n_rows).into_par_iter().map(scan).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n_rows).map(scan).collect()
            }
        }
    }
}

/// One row's scan result: peak residual and where it sits.
#[derive(Debug, Clone, Copy)]
struct RowScan {
    row: usize,
    col: usize,
    value: f64,
}

pub fn build_interpolant<T: Scalar>(
    grid: &SampleGrid<T>,
    max_terms: usize,
    tol: StopTol,
) -> Result<EimInterpolant<T>, EimError> {
    build_interpolant_with(grid, max_terms, tol, Backend::default())
}

pub fn build_interpolant_with<T: Scalar>(
    grid: &SampleGrid<T>,
    max_terms: usize,
    tol: StopTol,
    backend: Backend,
) -> Result<EimInterpolant<T>, EimError> {
    if max_terms == 0 {
        return Err(EimError::ZeroMaxTerms);
    }
    let n_rows = grid.n_rows();
    let n_cols = grid.n_cols();
    let cap = max_terms.min(n_rows).min(n_cols);

    let mut row_sel: Vec<usize> = Vec::with_capacity(cap);
    let mut col_sel: Vec<usize> = Vec::with_capacity(cap);
    let mut residual_history: Vec<f64> = Vec::with_capacity(cap);
    let mut b: DMat<T> = DMat::zeros(cap, cap);
    // Basis columns, grown one per term.
    let mut q_cols: Vec<Vec<T>> = Vec::with_capacity(cap);
    let mut threshold = 0.0f64;
    let stop_reason;

    loop {
        let k = row_sel.len();
        let col_sel_now = col_sel.clone();
        let b_ref = &b;
        let q_ref = &q_cols;
        // Residual scan for one candidate row. Runs the same instruction
        // sequence under both backends.
        let scan_row = |i: usize| -> RowScan {
            let row = grid.row(i);
            let vals_sel: Vec<T> = col_sel_now.iter().map(|&j| row[j]).collect();
            // Forward substitution against the unit lower triangle built so far.
            let mut lam = vals_sel;
            for m in 0..k {
                let mut acc = lam[m];
                for p in 0..m {
                    acc -= b_ref[(m, p)] * lam[p];
                }
                lam[m] = acc;
            }
            let mut best_col = 0usize;
            let mut best_val = -1.0f64;
            for j in 0..n_cols {
                let mut approx = T::ZERO;
                for (m, lam_m) in lam.iter().enumerate() {
                    approx += *lam_m * q_ref[m][j];
                }
                let r = (row[j] - approx).abs();
                // Strict comparison keeps the lowest column on ties.
                if r > best_val {
                    best_val = r;
                    best_col = j;
                }
            }
            RowScan {
                row: i,
                col: best_col,
                value: best_val,
            }
        };
        let scans = run_over_rows(n_rows, backend, scan_row);
        // Sequential reduce in row order keeps ties on the lowest row and the
        // result independent of the backend.
        let mut best = scans[0];
        for s in &scans[1..] {
            if s.value > best.value {
                best = *s;
            }
        }

        if k == 0 {
            if best.value == 0.0 {
                return Err(EimError::DegenerateTable);
            }
            threshold = tol.threshold(best.value);
        } else if best.value <= threshold {
            stop_reason = StopReason::Tolerance;
            break;
        } else if best.value == 0.0 {
            // Absolute zero tolerance can reach exact reproduction; there is
            // no residual left to normalize.
            stop_reason = StopReason::Tolerance;
            break;
        }

        // Recompute the winning row's residual once to form the new basis
        // function; the scan kept only its peak.
        let row = grid.row(best.row);
        let vals_sel: Vec<T> = col_sel.iter().map(|&j| row[j]).collect();
        let lam = {
            let mut lam = vals_sel;
            for m in 0..k {
                let mut acc = lam[m];
                for p in 0..m {
                    acc -= b[(m, p)] * lam[p];
                }
                lam[m] = acc;
            }
            lam
        };
        let mut q_new = vec![T::ZERO; n_cols];
        let pivot = {
            let mut approx = T::ZERO;
            for (m, lam_m) in lam.iter().enumerate() {
                approx += *lam_m * q_cols[m][best.col];
            }
            row[best.col] - approx
        };
        for j in 0..n_cols {
            let mut approx = T::ZERO;
            for (m, lam_m) in lam.iter().enumerate() {
                approx += *lam_m * q_cols[m][j];
            }
            q_new[j] = (row[j] - approx) / pivot;
        }
        // The pivot position is exactly one by construction; pin it so the
        // triangular structure of b is exact rather than within rounding.
        q_new[best.col] = T::ONE;

        // New row of b: existing basis functions at the new column. The new
        // basis column contributes exact zeros above the diagonal and a unit
        // diagonal entry.
        for (m, qc) in q_cols.iter().enumerate() {
            b[(k, m)] = qc[best.col];
        }
        b[(k, k)] = T::ONE;

        row_sel.push(best.row);
        col_sel.push(best.col);
        residual_history.push(best.value);
        q_cols.push(q_new);

        if row_sel.len() == cap {
            stop_reason = if max_terms == cap {
                StopReason::MaxTerms
            } else {
                StopReason::Exhausted
            };
            break;
        }
    }

    let d = row_sel.len();
    let b_final = DMat::from_fn(d, d, |i, j| b[(i, j)]);
    let q_final = DMat::from_fn(n_cols, d, |j, m| q_cols[m][j]);
    let sel_rows = DMat::from_fn(d, n_cols, |m, j| grid.value(row_sel[m], j));
    let row_labels_sel = row_sel.iter().map(|&i| grid.row_labels()[i]).collect();
    let col_labels_sel = col_sel.iter().map(|&j| grid.col_labels()[j]).collect();
    Ok(EimInterpolant {
        n_rows,
        n_cols,
        row_sel,
        col_sel,
        row_labels_sel,
        col_labels_sel,
        b: b_final,
        q: q_final,
        sel_rows,
        residual_history,
        stop_reason,
    })
}
