//! Separated approximation of parameter-dependent matrices.
//!
//! The pipeline turns a black-box assembly routine `mu -> A(mu)` into a short
//! sum `A(mu) ~ sum_m beta_m(mu) * A(mu_m)` built from a handful of full
//! matrix snapshots. The coefficient functions come from a two-stage greedy
//! interpolation: first on a scalar kernel sampled over (parameter, point)
//! pairs, then on the table of candidate coefficient functions that the first
//! stage induces. Everything downstream of the assembly routine only ever
//! sees matrices it asked for at selected parameter values, so the method
//! applies to solvers that are otherwise closed.
//!
//! Crate layout:
//! - [`scalar`], [`linalg`]: the small dense kernel the rest builds on
//! - [`grid`], [`eim`]: sampled tables and the greedy interpolation engine
//! - [`layout`], [`model`]: coefficient-table construction and the snapshot model
//! - [`oracle`]: quadrature-level and split-assembly reference models
//! - [`fem1d`], [`kernel3d`]: the two bundled problem families
//! - [`rb`]: reduced basis built on top of the separated operator
//! - [`config`], [`study`], [`serial`], [`svg`], [`provider`]: harness plumbing

pub mod config;
pub mod eim;
pub mod fem1d;
pub mod grid;
pub mod kernel3d;
pub mod layout;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod provider;
pub mod rb;
pub mod scalar;
pub mod serial;
pub mod study;
pub mod svg;

/// Execution strategy for the data-parallel hot loops.
///
/// `Parallel` silently falls back to the sequential code when the crate is
/// built without the `parallel` feature. Both paths reduce with the same
/// tie-breaking rules and are bit-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Sequential,
    Parallel,
}

impl Default for Backend {
    fn default() -> Self {
        Backend::Parallel
    }
}
