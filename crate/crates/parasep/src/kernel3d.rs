//! Dense oscillatory-kernel family on a point cloud.
//!
//! A(mu)[i][j] = (1 + mu^2) exp(i mu r_ij) / (4 pi r_ij) for i != j, with the
//! regularized diagonal (1 + mu^2) i mu / (4 pi). The parameter enters both
//! through the polynomial weight and through the oscillatory phase, so the
//! family is genuinely non-affine in mu. Points come from a Fibonacci lattice
//! on a sphere; the right-hand side is a point source.

use num_complex::Complex64;

use crate::linalg::DMat;
use crate::provider::{MatrixProvider, ProviderError, VectorProvider};
use crate::Backend;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub enum Kernel3DError {
    TooFewPoints { n: usize },
    CoincidentPoints { i: usize, j: usize },
    SourceTouchesCloud { i: usize },
}

impl std::fmt::Display for Kernel3DError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kernel3DError::TooFewPoints { n } => write!(f, "need at least 2 points, got {n}"),
            Kernel3DError::CoincidentPoints { i, j } => {
                write!(f, "points {i} and {j} coincide; the kernel is singular there")
            }
            Kernel3DError::SourceTouchesCloud { i } => {
                write!(f, "source position coincides with point {i}")
            }
        }
    }
}

impl std::error::Error for Kernel3DError {}

fn dist(p: [f64; 3], q: [f64; 3]) -> f64 {
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    let dz = p[2] - q[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Evenly spread points on a sphere via the golden-angle lattice.
pub fn fibonacci_sphere(n: usize, radius: f64) -> Vec<[f64; 3]> {
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden_angle * i as f64;
            [radius * r * phi.cos(), radius * y, radius * r * phi.sin()]
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct KernelProblem {
    points: Vec<[f64; 3]>,
    source: [f64; 3],
    diameter: f64,
}

impl KernelProblem {
    pub fn new(points: Vec<[f64; 3]>, source: [f64; 3]) -> Result<Self, Kernel3DError> {
        if points.len() < 2 {
            return Err(Kernel3DError::TooFewPoints { n: points.len() });
        }
        let mut diameter = 0.0f64;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let r = dist(points[i], points[j]);
                if r == 0.0 {
                    return Err(Kernel3DError::CoincidentPoints { i, j });
                }
                diameter = diameter.max(r);
            }
        }
        for (i, &p) in points.iter().enumerate() {
            if dist(p, source) == 0.0 {
                return Err(Kernel3DError::SourceTouchesCloud { i });
            }
        }
        Ok(KernelProblem {
            points,
            source,
            diameter,
        })
    }

    pub fn unit_sphere(n: usize, radius: f64, source: [f64; 3]) -> Result<Self, Kernel3DError> {
        KernelProblem::new(fibonacci_sphere(n, radius), source)
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Largest pairwise distance in the cloud.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Distance sample grid (0, diameter], open at zero where the kernel is
    /// singular. This is the point grid for the kernel interpolation stage.
    pub fn r_grid(&self, n_r: usize) -> Vec<f64> {
        (1..=n_r)
            .map(|k| k as f64 * self.diameter / n_r as f64)
            .collect()
    }

    fn row(&self, mu: f64, i: usize) -> Vec<Complex64> {
        let w = 1.0 + mu * mu;
        let n = self.n();
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            if i == j {
                out.push(Complex64::new(0.0, w * mu / FOUR_PI));
            } else {
                let r = dist(self.points[i], self.points[j]);
                let amp = w / (FOUR_PI * r);
                let p = mu * r;
                out.push(Complex64::new(amp * p.cos(), amp * p.sin()));
            }
        }
        out
    }

    pub fn assemble_with(&self, mu: f64, backend: Backend) -> Result<DMat<Complex64>, ProviderError> {
        let n = self.n();
        let rows: Vec<Vec<Complex64>> = match backend {
            Backend::Sequential => (0..n).map(|i| self.row(mu, i)).collect(),
            Backend::Parallel => {
                #[cfg(feature = "parallel")]
                {
                    (0..n).into_par_iter().map(|i| self.row(mu, i)).collect()
                }
                #[cfg(not(feature = "parallel"))]
                {
                    (0..n).map(|i| self.row(mu, i)).collect()
                }
            }
        };
        Ok(DMat::from_rows(rows))
    }

    /// Static amplitude factor: 1 / (4 pi r_ij) off the diagonal, zero on it.
    /// The phase-only snapshots below are entrywise products against this.
    pub fn static_amplitude(&self) -> DMat<Complex64> {
        let n = self.n();
        DMat::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(0.0, 0.0)
            } else {
                let r = dist(self.points[i], self.points[j]);
                Complex64::new(1.0 / (FOUR_PI * r), 0.0)
            }
        })
    }

    /// Phase snapshot at one parameter: exp(i nu r_ij) / (4 pi r_ij) off the
    /// diagonal, zero diagonal. This is the part of the operator that the
    /// kernel interpolation stage sees; weights and the diagonal are handled
    /// by the candidate-function inventory.
    pub fn phase_snapshot(&self, nu: f64) -> DMat<Complex64> {
        let n = self.n();
        DMat::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(0.0, 0.0)
            } else {
                let r = dist(self.points[i], self.points[j]);
                let amp = 1.0 / (FOUR_PI * r);
                let p = nu * r;
                Complex64::new(amp * p.cos(), amp * p.sin())
            }
        })
    }

    /// Point-source field over the cloud; parameter-dependent right side.
    pub fn incident_field(&self, mu: f64) -> Vec<Complex64> {
        self.points
            .iter()
            .map(|&p| {
                let r = dist(p, self.source);
                let amp = 1.0 / (FOUR_PI * r);
                let ph = mu * r;
                Complex64::new(amp * ph.cos(), amp * ph.sin())
            })
            .collect()
    }
}

impl MatrixProvider<Complex64> for KernelProblem {
    fn dim(&self) -> usize {
        self.n()
    }

    fn assemble(&self, mu: f64) -> Result<DMat<Complex64>, ProviderError> {
        self.assemble_with(mu, Backend::default())
    }

    fn reentrant(&self) -> bool {
        true
    }
}

impl VectorProvider<Complex64> for KernelProblem {
    fn dim(&self) -> usize {
        self.n()
    }

    fn assemble_vector(&self, mu: f64) -> Result<Vec<Complex64>, ProviderError> {
        Ok(self.incident_field(mu))
    }

    fn reentrant(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fibonacci_points_sit_on_the_sphere() {
        let pts = fibonacci_sphere(200, 1.0);
        assert_eq!(pts.len(), 200);
        for p in &pts {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
        }
        // Spread check: nearest-neighbor distances stay within a band, no
        // clustering. For 200 points on the unit sphere the typical spacing
        // is around sqrt(4 pi / n).
        let mut min_nn = f64::INFINITY;
        let mut max_nn: f64 = 0.0;
        for i in 0..pts.len() {
            let mut nn = f64::INFINITY;
            for j in 0..pts.len() {
                if i != j {
                    nn = nn.min(dist(pts[i], pts[j]));
                }
            }
            min_nn = min_nn.min(nn);
            max_nn = max_nn.max(nn);
        }
        assert!(min_nn > 0.05, "{min_nn}");
        assert!(max_nn < 0.5, "{max_nn}");
    }

    #[test]
    fn diameter_and_r_grid() {
        let p = KernelProblem::unit_sphere(200, 1.0, [0.0, 0.0, 3.0]).unwrap();
        assert!((p.diameter() - 2.0).abs() < 1e-3);
        let grid = p.r_grid(2000);
        assert_eq!(grid.len(), 2000);
        assert!(grid[0] > 0.0);
        assert!((grid[1999] - p.diameter()).abs() < 1e-15);
        // All pairwise distances are covered by the grid range.
        for i in 0..p.n() {
            for j in 0..p.n() {
                if i != j {
                    let r = dist(p.points()[i], p.points()[j]);
                    assert!(r > 0.0 && r <= p.diameter() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn matrix_entries_match_hand_formula() {
        let p = KernelProblem::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]],
            [0.0, 0.0, 3.0],
        )
        .unwrap();
        let mu = 1.3;
        let a = p.assemble(mu).unwrap();
        let w = 1.0 + mu * mu;
        // Off-diagonal (0, 1): r = 1.
        let want = Complex64::new(
            w * (mu).cos() / FOUR_PI,
            w * (mu).sin() / FOUR_PI,
        );
        assert!((a[(0, 1)] - want).norm() < 1e-15);
        // Symmetric distances give a symmetric matrix.
        assert_eq!(a[(0, 1)], a[(1, 0)]);
        // Diagonal regularization.
        let want_diag = Complex64::new(0.0, w * mu / FOUR_PI);
        assert!((a[(0, 0)] - want_diag).norm() < 1e-16);
    }

    #[test]
    fn operator_decomposes_over_the_candidate_parts() {
        // assemble = (1 + mu^2) * (phase part) + (mu + mu^3) * (i/4pi) I.
        let p = KernelProblem::unit_sphere(30, 1.0, [0.0, 0.0, 3.0]).unwrap();
        let mu = 2.1;
        let a = p.assemble(mu).unwrap();
        let mut re = p.phase_snapshot(mu);
        re.scale_in_place(Complex64::new(1.0 + mu * mu, 0.0));
        let eye: DMat<Complex64> = DMat::identity(p.n());
        re.axpy(
            Complex64::new(0.0, (mu + mu * mu * mu) / FOUR_PI),
            &eye,
        );
        assert!(crate::linalg::rel_frobenius_diff(&re, &a) < 1e-14);
    }

    #[test]
    fn coincident_points_are_rejected() {
        let err = KernelProblem::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
            [0.0, 0.0, 3.0],
        )
        .unwrap_err();
        assert_eq!(err, Kernel3DError::CoincidentPoints { i: 0, j: 2 });
        let err = KernelProblem::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            [1.0, 0.0, 0.0],
        )
        .unwrap_err();
        assert_eq!(err, Kernel3DError::SourceTouchesCloud { i: 1 });
    }

    #[test]
    fn incident_field_is_a_point_source() {
        let p = KernelProblem::new(
            vec![[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
            [0.0, 0.0, 3.0],
        )
        .unwrap();
        let mu = 0.7;
        let f = p.incident_field(mu);
        // Point 1 is at distance 2 from the source.
        let want = Complex64::new((2.0 * mu).cos(), (2.0 * mu).sin()) / (FOUR_PI * 2.0);
        assert!((f[1] - want).norm() < 1e-15);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_assembly_is_bit_identical() {
        let p = KernelProblem::unit_sphere(64, 1.0, [0.0, 0.0, 3.0]).unwrap();
        let a = p.assemble_with(1.9, Backend::Sequential).unwrap();
        let b = p.assemble_with(1.9, Backend::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
