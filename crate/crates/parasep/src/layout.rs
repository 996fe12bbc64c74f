//! Candidate coefficient functions for the second greedy stage.
//!
//! After the scalar kernel of a problem has been interpolated, every
//! admissible coefficient function of the matrix family is one of:
//! - a kernel interpolation coefficient times a parameter weight
//!   (one per (weight, term) pair within a block), or
//! - a standalone parameter function for matrix parts known in closed form.
//!
//! A [`TermLayout`] records this inventory. [`TermLayout::z_values_at`] is the
//! single evaluation path used to build the stage-two table, to compute the
//! online right-hand side, and to evaluate reference models, so all of them
//! agree bit for bit.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::eim::EimInterpolant;
use crate::grid::{GridError, SampleGrid};
use crate::linalg::{solve_unit_lower, DMat};
use crate::scalar::{FieldTag, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub enum LayoutError {
    EmptyLayout,
    NonFiniteEntry { row: usize, mu: f64 },
    Grid(GridError),
}

impl fmt::Display for LayoutError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutError::EmptyLayout => write!(f, "layout has no candidate functions"),
            LayoutError::NonFiniteEntry { row, mu } => {
                write!(f, "candidate function {row} is not finite at mu = {mu}")
            }
            LayoutError::Grid(e) => write!(f, "table construction failed: {e}"),
        }
    }
}

impl std::error::Error for LayoutError {}

/// Named scalar function of the parameter. Names key the serialization
/// registry; see [`builtin_scalar`].
#[derive(Clone)]
pub struct ScalarFn<T> {
    name: String,
    f: Arc<dyn Fn(f64) -> T + Send + Sync>,
}

impl<T: Scalar> ScalarFn<T> {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> T + Send + Sync + 'static) -> Self {
        ScalarFn {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, mu: f64) -> T {
        (self.f)(mu)
    }
}

impl<T> fmt::Debug for ScalarFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarFn({})", self.name)
    }
}

/// Named scalar kernel of (parameter, point). Points are whatever scalar
/// coordinate the owning problem uses (a mesh coordinate, a distance).
#[derive(Clone)]
pub struct KernelFn<T> {
    name: String,
    f: Arc<dyn Fn(f64, f64) -> T + Send + Sync>,
}

impl<T: Scalar> KernelFn<T> {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(f64, f64) -> T + Send + Sync + 'static,
    ) -> Self {
        KernelFn {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, mu: f64, x: f64) -> T {
        (self.f)(mu, x)
    }
}

impl<T> fmt::Debug for KernelFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KernelFn({})", self.name)
    }
}

/// Registry of scalar functions that serialized models may reference.
pub fn builtin_scalar<T: Scalar>(name: &str) -> Option<ScalarFn<T>> {
    match name {
        "one" => Some(ScalarFn::new("one", |_| T::ONE)),
        "mu" => Some(ScalarFn::new("mu", T::from_f64)),
        "mu_sq" => Some(ScalarFn::new("mu_sq", |mu| T::from_f64(mu * mu))),
        "mu_cubed" => Some(ScalarFn::new("mu_cubed", |mu| T::from_f64(mu * mu * mu))),
        "one_plus_mu_sq" => Some(ScalarFn::new("one_plus_mu_sq", |mu| {
            T::from_f64(1.0 + mu * mu)
        })),
        _ => None,
    }
}

/// Registry of kernels that serialized models may reference.
pub fn builtin_kernel<T: Scalar>(name: &str) -> Option<KernelFn<T>> {
    match name {
        "exp_mu_x" => Some(KernelFn::new("exp_mu_x", |mu, x| T::from_f64((mu * x).exp()))),
        "cis_mu_r" => {
            if T::FIELD != FieldTag::Complex {
                return None;
            }
            Some(KernelFn::new("cis_mu_r", |mu, r| {
                let p = mu * r;
                T::from_parts(p.cos(), p.sin()).unwrap()
            }))
        }
        _ => None,
    }
}

/// One interpolated kernel with the parameter weights that multiply its
/// coefficient functions.
#[derive(Debug, Clone)]
pub struct TermBlock<T> {
    /// Unit lower triangle of the kernel interpolant.
    b: DMat<T>,
    /// Point coordinates of the selected interpolation columns.
    magic_points: Vec<f64>,
    /// Parameter values of the selected rows; diagnostic only.
    mu_sel: Vec<f64>,
    kernel: KernelFn<T>,
    weights: Vec<ScalarFn<T>>,
}

impl<T: Scalar> TermBlock<T> {
    pub fn new(
        b: DMat<T>,
        magic_points: Vec<f64>,
        mu_sel: Vec<f64>,
        kernel: KernelFn<T>,
        weights: Vec<ScalarFn<T>>,
    ) -> Self {
        assert_eq!(b.rows(), b.cols(), "triangle must be square");
        assert_eq!(b.rows(), magic_points.len(), "one magic point per term");
        assert!(!weights.is_empty(), "block needs at least one weight");
        TermBlock {
            b,
            magic_points,
            mu_sel,
            kernel,
            weights,
        }
    }

    pub fn from_interpolant(
        itp: &EimInterpolant<T>,
        kernel: KernelFn<T>,
        weights: Vec<ScalarFn<T>>,
    ) -> Self {
        TermBlock::new(
            itp.b().clone(),
            itp.col_labels_sel().to_vec(),
            itp.row_labels_sel().to_vec(),
            kernel,
            weights,
        )
    }

    pub fn terms(&self) -> usize {
        self.b.rows()
    }

    pub fn b(&self) -> &DMat<T> {
        &self.b
    }

    pub fn magic_points(&self) -> &[f64] {
        &self.magic_points
    }

    pub fn mu_sel(&self) -> &[f64] {
        &self.mu_sel
    }

    pub fn kernel(&self) -> &KernelFn<T> {
        &self.kernel
    }

    pub fn weights(&self) -> &[ScalarFn<T>] {
        &self.weights
    }

    /// Kernel interpolation coefficients at an arbitrary parameter: evaluate
    /// the kernel at the magic points and forward substitute.
    pub fn lambda_at(&self, mu: f64) -> Vec<T> {
        let vals: Vec<T> = self
            .magic_points
            .iter()
            .map(|&x| self.kernel.eval(mu, x))
            .collect();
        solve_unit_lower(&self.b, &vals)
    }
}

/// Identifies one candidate coefficient function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowMeta {
    /// weights[weight](mu) * lambda[term](mu) of the given block.
    Lambda {
        block: usize,
        weight: usize,
        term: usize,
    },
    /// Standalone parameter function.
    Psi { index: usize },
}

/// Full inventory of candidate coefficient functions.
#[derive(Debug, Clone)]
pub struct TermLayout<T> {
    blocks: Vec<TermBlock<T>>,
    psis: Vec<ScalarFn<T>>,
}

impl<T: Scalar> TermLayout<T> {
    pub fn new(blocks: Vec<TermBlock<T>>, psis: Vec<ScalarFn<T>>) -> Result<Self, LayoutError> {
        let layout = TermLayout { blocks, psis };
        if layout.d_max() == 0 {
            return Err(LayoutError::EmptyLayout);
        }
        Ok(layout)
    }

    pub fn blocks(&self) -> &[TermBlock<T>] {
        &self.blocks
    }

    pub fn psis(&self) -> &[ScalarFn<T>] {
        &self.psis
    }

    /// Total number of candidate functions: every (weight, term) pair of
    /// every block, plus the standalone functions.
    pub fn d_max(&self) -> usize {
        let from_blocks: usize = self
            .blocks
            .iter()
            .map(|b| b.weights.len() * b.terms())
            .sum();
        from_blocks + self.psis.len()
    }

    /// Row identities in table order: per block, weights outer, terms inner;
    /// standalone functions last.
    pub fn row_meta(&self) -> Vec<RowMeta> {
        let mut meta = Vec::with_capacity(self.d_max());
        for (bi, block) in self.blocks.iter().enumerate() {
            for wi in 0..block.weights.len() {
                for ti in 0..block.terms() {
                    meta.push(RowMeta::Lambda {
                        block: bi,
                        weight: wi,
                        term: ti,
                    });
                }
            }
        }
        for si in 0..self.psis.len() {
            meta.push(RowMeta::Psi { index: si });
        }
        meta
    }

    /// Evaluate every candidate function at one parameter, in table order.
    /// This is the only evaluation path; every consumer shares it.
    pub fn z_values_at(&self, mu: f64) -> Result<Vec<T>, LayoutError> {
        let mut out = Vec::with_capacity(self.d_max());
        for block in &self.blocks {
            let lam = block.lambda_at(mu);
            for w in &block.weights {
                let wv = w.eval(mu);
                for &l in &lam {
                    out.push(wv * l);
                }
            }
        }
        for psi in &self.psis {
            out.push(psi.eval(mu));
        }
        for (row, v) in out.iter().enumerate() {
            if !v.is_finite() {
                return Err(LayoutError::NonFiniteEntry { row, mu });
            }
        }
        Ok(out)
    }
}

/// Stage-two input: candidate function values tabulated over the trial set.
/// Row labels are the candidate indices (as floats, for the table type);
/// column labels are the trial parameters.
#[derive(Debug, Clone)]
pub struct ZTable<T> {
    grid: SampleGrid<T>,
    meta: Vec<RowMeta>,
    layout: Arc<TermLayout<T>>,
}

impl<T: Scalar> ZTable<T> {
    pub fn grid(&self) -> &SampleGrid<T> {
        &self.grid
    }

    pub fn meta(&self) -> &[RowMeta] {
        &self.meta
    }

    pub fn layout(&self) -> &Arc<TermLayout<T>> {
        &self.layout
    }
}

pub fn build_z_table<T: Scalar>(
    layout: Arc<TermLayout<T>>,
    mu_trial: &[f64],
) -> Result<ZTable<T>, LayoutError> {
    let d_max = layout.d_max();
    let mut values = DMat::zeros(d_max, mu_trial.len());
    for (j, &mu) in mu_trial.iter().enumerate() {
        let col = layout.z_values_at(mu)?;
        for (i, v) in col.into_iter().enumerate() {
            values[(i, j)] = v;
        }
    }
    let row_labels: Vec<f64> = (0..d_max).map(|i| i as f64).collect();
    let grid = SampleGrid::new(row_labels, mu_trial.to_vec(), values)
        .map_err(LayoutError::Grid)?;
    Ok(ZTable {
        grid,
        meta: layout.row_meta(),
        layout,
    })
}
