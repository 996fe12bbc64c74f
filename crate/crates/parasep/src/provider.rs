//! Black-box assembly interfaces.
//!
//! The snapshot model only ever talks to a provider through these traits, so
//! anything that can assemble a full matrix (or vector) at a given parameter
//! can be compressed. Providers stay opaque: no quadrature access, no
//! structure hints, just assembled payloads.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::linalg::DMat;
use crate::scalar::Scalar;

pub type ProviderError = Box<dyn std::error::Error + Send + Sync + 'static>;

pub trait MatrixProvider<T: Scalar>: Sync {
    /// Matrix dimension (square).
    fn dim(&self) -> usize;

    fn assemble(&self, mu: f64) -> Result<DMat<T>, ProviderError>;

    /// Whether assemble may run concurrently from several threads. Defaults
    /// to false; snapshot instantiation then stays sequential.
    fn reentrant(&self) -> bool {
        false
    }
}

pub trait VectorProvider<T: Scalar>: Sync {
    fn dim(&self) -> usize;

    fn assemble_vector(&self, mu: f64) -> Result<Vec<T>, ProviderError>;

    fn reentrant(&self) -> bool {
        false
    }
}

/// A provider whose operator splits as
/// assemble(mu) = assemble_param(mu) + coeff(mu) * constant.
/// The parameter-entangled part must depend on mu only through the scalar
/// kernel the stage-one interpolation targets; the reference-model builders
/// rely on that linearity.
pub trait SplitMatrixProvider<T: Scalar>: MatrixProvider<T> {
    fn assemble_param(&self, mu: f64) -> Result<DMat<T>, ProviderError>;

    /// Closed-form remainder: (coefficient function, constant matrix).
    fn static_term(&self) -> (crate::layout::ScalarFn<T>, DMat<T>);
}

/// Wrapper that counts assembly calls. The audit path uses it to prove that
/// instantiation touched the black box exactly once per selected parameter.
pub struct CountingMatrixProvider<'a, T: Scalar> {
    inner: &'a dyn MatrixProvider<T>,
    calls: AtomicUsize,
}

impl<'a, T: Scalar> CountingMatrixProvider<'a, T> {
    pub fn new(inner: &'a dyn MatrixProvider<T>) -> Self {
        CountingMatrixProvider {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<'a, T: Scalar> MatrixProvider<T> for CountingMatrixProvider<'a, T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn assemble(&self, mu: f64) -> Result<DMat<T>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.assemble(mu)
    }

    fn reentrant(&self) -> bool {
        self.inner.reentrant()
    }
}

/// Vector-payload sibling of [`CountingMatrixProvider`].
pub struct CountingVectorProvider<'a, T: Scalar> {
    inner: &'a dyn VectorProvider<T>,
    calls: AtomicUsize,
}

impl<'a, T: Scalar> CountingVectorProvider<'a, T> {
    pub fn new(inner: &'a dyn VectorProvider<T>) -> Self {
        CountingVectorProvider {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<'a, T: Scalar> VectorProvider<T> for CountingVectorProvider<'a, T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn assemble_vector(&self, mu: f64) -> Result<Vec<T>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.assemble_vector(mu)
    }

    fn reentrant(&self) -> bool {
        self.inner.reentrant()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Diag {
        n: usize,
    }

    impl MatrixProvider<f64> for Diag {
        fn dim(&self) -> usize {
            self.n
        }

        fn assemble(&self, mu: f64) -> Result<DMat<f64>, ProviderError> {
            let mut m = DMat::zeros(self.n, self.n);
            for i in 0..self.n {
                m[(i, i)] = mu + i as f64;
            }
            Ok(m)
        }

        fn reentrant(&self) -> bool {
            true
        }
    }

    #[test]
    fn counting_wrapper_counts() {
        let p = Diag { n: 3 };
        let c = CountingMatrixProvider::new(&p);
        assert_eq!(c.calls(), 0);
        let _ = c.assemble(1.0).unwrap();
        let _ = c.assemble(2.0).unwrap();
        assert_eq!(c.calls(), 2);
        assert_eq!(c.dim(), 3);
        assert!(c.reentrant());
    }
}
