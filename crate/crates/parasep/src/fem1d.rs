//! One-dimensional diffusion-reaction test problem.
//!
//! -(g(mu, x) u')' + mu u = f on (a, b) with homogeneous Dirichlet ends,
//! discretized with piecewise linear elements on a uniform mesh. Cell
//! integrals of the diffusion coefficient use three-point Gauss quadrature
//! (exact through degree five); the mass matrix and the constant-source load
//! vector are exact in closed form.
//!
//! The assembled operator splits as A(mu) = A1(mu) + mu * A0 where A1 holds
//! the coefficient-weighted stiffness and A0 the mass. `assemble` is defined
//! as that sum, so the split identity holds bit for bit.

use crate::layout::{builtin_scalar, KernelFn, ScalarFn};
use crate::linalg::DMat;
use crate::provider::{MatrixProvider, ProviderError, SplitMatrixProvider};

const GAUSS_T: [f64; 3] = [-0.774596669241483377035853079956, 0.0, 0.774596669241483377035853079956];
const GAUSS_W: [f64; 3] = [
    0.555555555555555555555555555556,
    0.888888888888888888888888888889,
    0.555555555555555555555555555556,
];

#[derive(Debug, Clone, PartialEq)]
pub enum Fem1DError {
    BadDomain { a: f64, b: f64 },
    TooFewCells { n_cells: usize },
}

impl std::fmt::Display for Fem1DError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Fem1DError::BadDomain { a, b } => write!(f, "domain ({a}, {b}) is empty"),
            Fem1DError::TooFewCells { n_cells } => {
                write!(f, "need at least 2 cells for an interior node, got {n_cells}")
            }
        }
    }
}

impl std::error::Error for Fem1DError {}

/// Uniform piecewise linear discretization with a pluggable diffusion kernel.
#[derive(Debug, Clone)]
pub struct Fem1DProblem {
    a: f64,
    b: f64,
    n_cells: usize,
    h: f64,
    /// All quadrature abscissas, cell by cell, ascending.
    gauss_x: Vec<f64>,
    /// Matching quadrature weights (already scaled by the cell size).
    gauss_w: Vec<f64>,
    kernel: KernelFn<f64>,
}

impl Fem1DProblem {
    pub fn new(a: f64, b: f64, n_cells: usize, kernel: KernelFn<f64>) -> Result<Self, Fem1DError> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Fem1DError::BadDomain { a, b });
        }
        if n_cells < 2 {
            return Err(Fem1DError::TooFewCells { n_cells });
        }
        let h = (b - a) / n_cells as f64;
        let half = 0.5 * h;
        let mut gauss_x = Vec::with_capacity(3 * n_cells);
        let mut gauss_w = Vec::with_capacity(3 * n_cells);
        for k in 0..n_cells {
            let mid = a + (k as f64 + 0.5) * h;
            for g in 0..3 {
                gauss_x.push(mid + half * GAUSS_T[g]);
                gauss_w.push(half * GAUSS_W[g]);
            }
        }
        Ok(Fem1DProblem {
            a,
            b,
            n_cells,
            h,
            gauss_x,
            gauss_w,
            kernel,
        })
    }

    /// Same domain and kernel on a mesh refined by an integer factor.
    pub fn refined(&self, factor: usize) -> Fem1DProblem {
        Fem1DProblem::new(self.a, self.b, self.n_cells * factor, self.kernel.clone())
            .expect("refinement of a valid mesh stays valid")
    }

    /// Interior unknowns.
    pub fn n(&self) -> usize {
        self.n_cells - 1
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn kernel(&self) -> &KernelFn<f64> {
        &self.kernel
    }

    /// Quadrature abscissas across the whole mesh; this is the point grid the
    /// kernel interpolation stage samples.
    pub fn quad_points(&self) -> &[f64] {
        &self.gauss_x
    }

    /// Integral of an arbitrary weight function over each cell, by the mesh
    /// quadrature. weights_at_quad must follow `quad_points` order.
    fn cell_integrals(&self, weights_at_quad: &[f64]) -> Vec<f64> {
        assert_eq!(weights_at_quad.len(), 3 * self.n_cells, "quadrature length");
        (0..self.n_cells)
            .map(|k| {
                let mut s = 0.0;
                for g in 0..3 {
                    s += self.gauss_w[3 * k + g] * weights_at_quad[3 * k + g];
                }
                s
            })
            .collect()
    }

    /// Stiffness matrix weighted by a coefficient given at the quadrature
    /// points. Piecewise linear gradients are constant per cell, so the entry
    /// pattern is tridiagonal with cell integrals over h^2.
    pub fn weighted_stiffness(&self, weights_at_quad: &[f64]) -> DMat<f64> {
        let n = self.n();
        let cells = self.cell_integrals(weights_at_quad);
        let inv_h2 = 1.0 / (self.h * self.h);
        let mut m = DMat::zeros(n, n);
        for i in 0..n {
            // Interior node i sits between cells i and i+1.
            m[(i, i)] = (cells[i] + cells[i + 1]) * inv_h2;
            if i + 1 < n {
                let off = -cells[i + 1] * inv_h2;
                m[(i, i + 1)] = off;
                m[(i + 1, i)] = off;
            }
        }
        m
    }

    /// Exact mass matrix of the linear elements, interior block.
    pub fn mass(&self) -> DMat<f64> {
        let n = self.n();
        let diag = 2.0 * self.h / 3.0;
        let off = self.h / 6.0;
        let mut m = DMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = diag;
            if i + 1 < n {
                m[(i, i + 1)] = off;
                m[(i + 1, i)] = off;
            }
        }
        m
    }

    /// Load vector of the constant unit source: each interior hat function
    /// integrates to exactly h.
    pub fn load_vector(&self) -> Vec<f64> {
        vec![self.h; self.n()]
    }

    /// Load vector of a general source, by the mesh quadrature.
    pub fn load_vector_of(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        for k in 0..self.n_cells {
            let left = self.a + k as f64 * self.h;
            for g in 0..3 {
                let x = self.gauss_x[3 * k + g];
                let w = self.gauss_w[3 * k + g];
                let t = (x - left) / self.h;
                // Hat of node k-1 falls on this cell with value 1 - t,
                // hat of node k with value t (0-based interior numbering).
                if k >= 1 {
                    out[k - 1] += w * f(x) * (1.0 - t);
                }
                if k < n {
                    out[k] += w * f(x) * t;
                }
            }
        }
        out
    }

    /// Coefficient values at the quadrature points for one parameter.
    pub fn kernel_at_quad(&self, mu: f64) -> Vec<f64> {
        self.gauss_x.iter().map(|&x| self.kernel.eval(mu, x)).collect()
    }

    /// Both parts of the split: the coefficient-weighted stiffness and the
    /// mass that enters with factor mu.
    pub fn assemble_split(&self, mu: f64) -> (DMat<f64>, DMat<f64>) {
        let w = self.kernel_at_quad(mu);
        (self.weighted_stiffness(&w), self.mass())
    }

    /// Nodal coordinates of the interior unknowns.
    pub fn interior_nodes(&self) -> Vec<f64> {
        (1..self.n_cells).map(|k| self.a + k as f64 * self.h).collect()
    }
}

impl MatrixProvider<f64> for Fem1DProblem {
    fn dim(&self) -> usize {
        self.n()
    }

    fn assemble(&self, mu: f64) -> Result<DMat<f64>, ProviderError> {
        let (mut a1, a0) = self.assemble_split(mu);
        a1.axpy(mu, &a0);
        Ok(a1)
    }

    fn reentrant(&self) -> bool {
        true
    }
}

impl SplitMatrixProvider<f64> for Fem1DProblem {
    fn assemble_param(&self, mu: f64) -> Result<DMat<f64>, ProviderError> {
        let w = self.kernel_at_quad(mu);
        Ok(self.weighted_stiffness(&w))
    }

    fn static_term(&self) -> (ScalarFn<f64>, DMat<f64>) {
        (builtin_scalar("mu").unwrap(), self.mass())
    }
}

/// The exponential-diffusion family used throughout the studies.
pub fn exp_diffusion_problem(a: f64, b: f64, n_cells: usize) -> Result<Fem1DProblem, Fem1DError> {
    Fem1DProblem::new(
        a,
        b,
        n_cells,
        crate::layout::builtin_kernel::<f64>("exp_mu_x").unwrap(),
    )
}
