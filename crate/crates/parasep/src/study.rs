//! Experiment drivers behind the CLI: convergence studies, the assembly
//! audit, the reduced-basis run, and replay from a stored model.
//!
//! Every driver takes a validated config, works into an output directory,
//! and reports through serializable summaries. Outputs carry operation
//! counts and error levels, never wall-clock times, so reruns and different
//! thread counts produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::config::{AuditConfig, CapRule, ConfigError, ProblemSpec, RbmConfig, StudyConfig};
use crate::eim::{build_interpolant_with, EimError, EimInterpolant, StopReason, StopTol};
use crate::fem1d::{exp_diffusion_problem, Fem1DError, Fem1DProblem};
use crate::grid::{GridError, SampleGrid};
use crate::kernel3d::{Kernel3DError, KernelProblem, FOUR_PI};
use crate::layout::{
    build_z_table, builtin_kernel, builtin_scalar, KernelFn, LayoutError, ScalarFn, TermBlock,
    TermLayout,
};
use crate::linalg::{rel_frobenius_diff, solve_dense, DMat, LinalgError};
use crate::model::{instantiate, select_snapshots, ModelError, Payload, SnapshotModel};
use crate::oracle::{
    build_intrusive, build_split_snapshot_model, fem_lambda_matrix, gamma_terms, OracleError,
};
use crate::provider::{CountingMatrixProvider, MatrixProvider};
use crate::rb::{
    greedy_build, l2_relative_error, online_solve, project, GreedyConfig, RbError, ReducedBasis,
};
use crate::scalar::Scalar;
use crate::serial::{load_model, save_basis, save_model, SerialError};
use crate::svg::{line_chart, Series};
use crate::Backend;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Driver failure, split by who has to fix it: the config file, or the run.
#[derive(Debug)]
pub enum RunError {
    Config(String),
    Numerical(String),
    Io(std::io::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "configuration error: {m}"),
            RunError::Numerical(m) => write!(f, "run failed: {m}"),
            RunError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

macro_rules! numerical_from {
    ($($ty:ty),*) => {
        $(impl From<$ty> for RunError {
            fn from(e: $ty) -> Self {
                RunError::Numerical(e.to_string())
            }
        })*
    };
}

numerical_from!(
    EimError,
    GridError,
    LayoutError,
    LinalgError,
    ModelError,
    OracleError,
    RbError,
    SerialError
);

impl From<Fem1DError> for RunError {
    fn from(e: Fem1DError) -> Self {
        RunError::Config(e.to_string())
    }
}

impl From<Kernel3DError> for RunError {
    fn from(e: Kernel3DError) -> Self {
        RunError::Config(e.to_string())
    }
}

fn stop_name(r: StopReason) -> &'static str {
    match r {
        StopReason::MaxTerms => "max_terms",
        StopReason::Tolerance => "tolerance",
        StopReason::Exhausted => "exhausted",
    }
}

/// Stage-one ingredients for one problem family: the black-box assembler
/// plus the candidate-function inventory describing its entry dependence.
struct FamilySpec<'a, T: Scalar> {
    provider: &'a dyn MatrixProvider<T>,
    kernel: KernelFn<T>,
    weights: Vec<ScalarFn<T>>,
    psis: Vec<ScalarFn<T>>,
    xs: Vec<f64>,
}

fn fem_family(problem: &Fem1DProblem) -> FamilySpec<'_, f64> {
    FamilySpec {
        provider: problem,
        kernel: builtin_kernel::<f64>("exp_mu_x").expect("registry entry"),
        weights: vec![builtin_scalar("one").expect("registry entry")],
        psis: vec![builtin_scalar("mu").expect("registry entry")],
        xs: problem.quad_points().to_vec(),
    }
}

fn kernel_family(problem: &KernelProblem, n_radii: usize) -> FamilySpec<'_, Complex64> {
    FamilySpec {
        provider: problem,
        kernel: builtin_kernel::<Complex64>("cis_mu_r").expect("registry entry"),
        weights: vec![
            builtin_scalar("one").expect("registry entry"),
            builtin_scalar("mu_sq").expect("registry entry"),
        ],
        psis: vec![
            builtin_scalar("mu").expect("registry entry"),
            builtin_scalar("mu_cubed").expect("registry entry"),
        ],
        xs: problem.r_grid(n_radii),
    }
}

fn stage_one_grid<T: Scalar>(
    kernel: &KernelFn<T>,
    mu: &[f64],
    xs: &[f64],
) -> Result<SampleGrid<T>, RunError> {
    let vals = DMat::from_fn(mu.len(), xs.len(), |i, j| kernel.eval(mu[i], xs[j]));
    Ok(SampleGrid::new(mu.to_vec(), xs.to_vec(), vals)?)
}

/// Offline pipeline shared by all drivers: interpolate the kernel, lay out
/// the candidate functions, select snapshot parameters, assemble.
fn build_model<T: Scalar>(
    family: &FamilySpec<'_, T>,
    mu_trial: &[f64],
    stage_one_cap: usize,
    stage_two_rule: CapRule,
    tol1: StopTol,
    tol2: StopTol,
    backend: Backend,
) -> Result<(EimInterpolant<T>, Arc<TermLayout<T>>, EimInterpolant<T>, SnapshotModel<T>), RunError>
{
    let grid = stage_one_grid(&family.kernel, mu_trial, &family.xs)?;
    let itp = build_interpolant_with(&grid, stage_one_cap, tol1, backend)?;
    let block = TermBlock::from_interpolant(&itp, family.kernel.clone(), family.weights.clone());
    let layout = Arc::new(TermLayout::new(vec![block], family.psis.clone())?);
    let table = build_z_table(layout.clone(), mu_trial)?;
    let cap2 = stage_two_rule.cap(itp.terms(), layout.d_max());
    let sel = select_snapshots(&table, cap2, tol2, backend)?;
    let model = instantiate(&sel, &table, family.provider, backend)?;
    Ok((itp, layout, sel, model))
}

fn map_mu<R: Send, F: Fn(f64) -> Result<R, RunError> + Sync + Send>(
    mus: &[f64],
    parallel: bool,
    f: F,
) -> Result<Vec<R>, RunError> {
    if parallel {
        #[cfg(feature = "parallel")]
        {
            return mus.par_iter().map(|&mu| f(mu)).collect();
        }
    }
    mus.iter().map(|&mu| f(mu)).collect()
}

fn write_csv<I: Iterator<Item = String>>(
    path: &Path,
    header: &str,
    rows: I,
) -> Result<(), RunError> {
    let mut text = String::new();
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| RunError::Numerical(format!("summary serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn lower_median(sorted: &[f64]) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    sorted[(sorted.len() - 1) / 2]
}

#[derive(Debug, Clone, Serialize)]
pub struct PassReport {
    pub stage_one_cap: usize,
    pub stage_one_achieved: usize,
    pub stage_one_stop: String,
    pub candidates: usize,
    pub stage_two_cap: usize,
    pub stage_two_achieved: usize,
    pub stage_two_stop: String,
    pub stage_two_history: Vec<f64>,
    pub collocation_rcond: f64,
    pub assemblies: usize,
    pub max_matrix_error: f64,
    pub median_matrix_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_solution_error: Option<f64>,
    pub matrix_error_csv: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution_error_csv: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct StudyReport {
    pub format: String,
    pub backend: String,
    pub config: StudyConfig,
    pub passes: Vec<PassReport>,
}

fn backend_name(b: Backend) -> &'static str {
    match b {
        Backend::Sequential => "sequential",
        Backend::Parallel => "parallel",
    }
}

#[allow(clippy::too_many_arguments)]
fn study_pass<T: Scalar>(
    family: &FamilySpec<'_, T>,
    mu_trial: &[f64],
    stage_one_cap: usize,
    cfg: &StudyConfig,
    solve: Option<(&[T], Option<&DMat<T>>)>,
    out_dir: &Path,
    backend: Backend,
) -> Result<PassReport, RunError> {
    let (itp, layout, sel, model) = build_model(
        family,
        mu_trial,
        stage_one_cap,
        cfg.stage_two_rule,
        cfg.stage_one_tol.to_stop(),
        cfg.stage_two_tol.to_stop(),
        backend,
    )?;

    let parallel = family.provider.reentrant() && matches!(backend, Backend::Parallel);
    let provider = family.provider;
    let errors: Vec<(f64, Option<f64>)> = map_mu(mu_trial, parallel, |mu| {
        let truth = provider
            .assemble(mu)
            .map_err(|e| RunError::Numerical(format!("assembly at mu = {mu} failed: {e}")))?;
        let approx = model.approximate_matrix(mu)?;
        let matrix_err = rel_frobenius_diff(&approx, &truth);
        let solution_err = match solve {
            Some((rhs, mass)) => {
                let u_truth = solve_dense(&truth, rhs)?;
                let u_approx = solve_dense(&approx, rhs)?;
                Some(l2_relative_error(&u_approx, &u_truth, mass))
            }
            None => None,
        };
        Ok((matrix_err, solution_err))
    })?;

    let matrix_name = format!("matrix_error_{stage_one_cap}.csv");
    write_csv(
        &out_dir.join(&matrix_name),
        "mu,rel_frobenius_error",
        mu_trial
            .iter()
            .zip(&errors)
            .map(|(mu, (e, _))| format!("{mu},{e}")),
    )?;
    let solution_name = if solve.is_some() {
        let name = format!("solution_error_{stage_one_cap}.csv");
        write_csv(
            &out_dir.join(&name),
            "mu,rel_l2_error",
            mu_trial
                .iter()
                .zip(&errors)
                .map(|(mu, (_, e))| format!("{mu},{}", e.expect("solve errors requested"))),
        )?;
        Some(name)
    } else {
        None
    };

    let mut matrix_sorted: Vec<f64> = errors.iter().map(|(e, _)| *e).collect();
    matrix_sorted.sort_by(f64::total_cmp);
    let max_solution_error = solve.is_some().then(|| {
        errors
            .iter()
            .filter_map(|(_, e)| *e)
            .fold(0.0f64, f64::max)
    });

    Ok(PassReport {
        stage_one_cap,
        stage_one_achieved: itp.terms(),
        stage_one_stop: stop_name(itp.stop_reason()).to_string(),
        candidates: layout.d_max(),
        stage_two_cap: cfg.stage_two_rule.cap(itp.terms(), layout.d_max()),
        stage_two_achieved: sel.terms(),
        stage_two_stop: stop_name(sel.stop_reason()).to_string(),
        stage_two_history: sel.residual_history().to_vec(),
        collocation_rcond: model.rcond_z(),
        assemblies: model.provider_calls(),
        max_matrix_error: *matrix_sorted.last().expect("nonempty trial set"),
        median_matrix_error: lower_median(&matrix_sorted),
        max_solution_error,
        matrix_error_csv: matrix_name,
        solution_error_csv: solution_name,
    })
}

/// Convergence study: one pipeline pass per stage-one cap, with per-pass
/// error tables and a machine-readable summary.
pub fn run_study(
    cfg: &StudyConfig,
    out_dir: &Path,
    backend: Backend,
    write_svg: bool,
) -> Result<StudyReport, RunError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mu_trial = cfg.mu_trial.values();

    let passes = match &cfg.problem {
        ProblemSpec::Diffusion1d { a, b, n_cells } => {
            let problem = exp_diffusion_problem(*a, *b, *n_cells)?;
            let family = fem_family(&problem);
            let rhs = problem.load_vector();
            let mass = problem.mass();
            let solve = cfg.solve_errors.then_some((rhs.as_slice(), Some(&mass)));
            let mut passes = Vec::new();
            for &cap in &cfg.stage_one_caps {
                passes.push(study_pass(
                    &family, &mu_trial, cap, cfg, solve, out_dir, backend,
                )?);
            }
            passes
        }
        ProblemSpec::Kernel3d {
            n_points,
            radius,
            n_radii,
        } => {
            let problem = KernelProblem::unit_sphere(*n_points, *radius, [0.0, 0.0, 3.0])?;
            let family = kernel_family(&problem, *n_radii);
            let mut passes = Vec::new();
            for &cap in &cfg.stage_one_caps {
                passes.push(study_pass(
                    &family, &mu_trial, cap, cfg, None, out_dir, backend,
                )?);
            }
            passes
        }
    };

    let report = StudyReport {
        format: "parasep-study/1".to_string(),
        backend: backend_name(backend).to_string(),
        config: cfg.clone(),
        passes,
    };
    write_json(&out_dir.join("summary.json"), &report)?;

    if write_svg {
        let series: Vec<Series> = report
            .passes
            .iter()
            .map(|p| Series {
                label: format!("cap {}", p.stage_one_cap),
                points: p
                    .stage_two_history
                    .iter()
                    .enumerate()
                    .map(|(k, &r)| (k as f64, r))
                    .collect(),
            })
            .collect();
        let svg = line_chart(
            "snapshot selection residual decay",
            "term",
            "residual",
            true,
            &series,
        );
        fs::write(out_dir.join("error_decay.svg"), svg)?;
    }
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct RefineReport {
    pub factor: usize,
    pub train_kept: usize,
    pub full_dim_base: usize,
    pub full_dim_refined: usize,
    pub ops_alpha_base: u64,
    pub ops_alpha_refined: u64,
    pub ops_match: bool,
    pub ops_lift_base: u64,
    pub ops_lift_refined: u64,
}

#[derive(Debug, Serialize)]
pub struct RbmReport {
    pub format: String,
    pub backend: String,
    pub config: RbmConfig,
    pub full_dim: usize,
    pub snapshot_terms: usize,
    pub n_hat: usize,
    pub rb_stop: String,
    pub max_err_path: Vec<f64>,
    pub max_online_error: f64,
    pub ops_alpha: u64,
    pub ops_lift: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refine: Option<RefineReport>,
    pub error_path_csv: String,
    pub online_error_csv: String,
    pub model_dir: String,
    pub basis_dir: String,
}

fn rb_stop_name(s: crate::rb::GreedyStop) -> &'static str {
    match s {
        crate::rb::GreedyStop::MaxTerms => "max_terms",
        crate::rb::GreedyStop::Tolerance => "tolerance",
        crate::rb::GreedyStop::DependentSnapshot => "dependent_snapshot",
    }
}

struct RbmPass {
    model: Arc<SnapshotModel<f64>>,
    basis: ReducedBasis<f64>,
    online_errors: Vec<f64>,
    stage_one_achieved: usize,
    ops_alpha: u64,
    ops_lift: u64,
}

/// One reduced-basis pass: model, basis, projections, per-parameter online
/// errors against fresh full solves.
fn rbm_pass(
    problem: &Fem1DProblem,
    train: &[f64],
    stage_one_cap: usize,
    stage_two_rule: CapRule,
    tol1: StopTol,
    tol2: StopTol,
    greedy: &GreedyConfig,
    backend: Backend,
) -> Result<RbmPass, RunError> {
    let family = fem_family(problem);
    let (itp, _, _, model) = build_model(
        &family,
        train,
        stage_one_cap,
        stage_two_rule,
        tol1,
        tol2,
        backend,
    )?;
    let model = Arc::new(model);
    let rhs = problem.load_vector();
    let mass = problem.mass();
    let basis = greedy_build(problem, &rhs, Some(&mass), train, greedy, backend)?;
    let rm = project(model.clone(), &basis, &rhs)?;

    let parallel = problem.reentrant() && matches!(backend, Backend::Parallel);
    let online_errors: Vec<f64> = map_mu(train, parallel, |mu| {
        let sol = online_solve(&rm, mu, true)?;
        let truth = solve_dense(&problem.assemble(mu).map_err(|e| {
            RunError::Numerical(format!("assembly at mu = {mu} failed: {e}"))
        })?, &rhs)?;
        Ok(l2_relative_error(
            sol.lifted.as_ref().expect("lift requested"),
            &truth,
            Some(&mass),
        ))
    })?;
    let probe = online_solve(&rm, train[train.len() / 2], true)?;
    Ok(RbmPass {
        model,
        basis,
        online_errors,
        stage_one_achieved: itp.terms(),
        ops_alpha: probe.ops_alpha,
        ops_lift: probe.ops_lift,
    })
}

/// Reduced-basis driver: greedy basis on top of the separated operator,
/// online errors over the training set, operation counts, and optionally
/// the mesh-refinement cost-invariance check.
pub fn run_rbm(
    cfg: &RbmConfig,
    out_dir: &Path,
    backend: Backend,
    write_svg: bool,
) -> Result<RbmReport, RunError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let train = cfg.mu_train.values();
    let ProblemSpec::Diffusion1d { a, b, n_cells } = cfg.problem else {
        return Err(RunError::Config(
            "the reduced-basis driver needs a problem with a right-hand side".into(),
        ));
    };
    let problem = exp_diffusion_problem(a, b, n_cells)?;

    let base = rbm_pass(
        &problem,
        &train,
        cfg.stage_one_cap,
        cfg.stage_two_rule,
        cfg.stage_one_tol.to_stop(),
        cfg.stage_two_tol.to_stop(),
        &GreedyConfig {
            n_hat_max: cfg.n_hat_max,
            tol: cfg.rb_tol,
        },
        backend,
    )?;
    let RbmPass {
        model,
        basis,
        online_errors,
        stage_one_achieved,
        ops_alpha,
        ops_lift,
    } = base;

    let error_path_csv = "rb_error_path.csv".to_string();
    write_csv(
        &out_dir.join(&error_path_csv),
        "n_hat,max_train_error",
        basis
            .max_err_path()
            .iter()
            .enumerate()
            .map(|(k, e)| format!("{},{e}", k + 1)),
    )?;
    let online_error_csv = "online_errors.csv".to_string();
    write_csv(
        &out_dir.join(&online_error_csv),
        "mu,rel_l2_error",
        train
            .iter()
            .zip(&online_errors)
            .map(|(mu, e)| format!("{mu},{e}")),
    )?;

    let model_dir = "model".to_string();
    save_model(model.as_ref(), &out_dir.join(&model_dir))?;
    let basis_dir = "basis".to_string();
    save_basis(&basis, &out_dir.join(&basis_dir))?;

    // Cost-invariance check: rerun on a refined mesh pinned to the exact
    // dimensions the base run achieved (stage-one rank, snapshot count,
    // basis size). The online operation count must not move; only the lift
    // is allowed to scale with the mesh.
    let refine = match &cfg.refine_check {
        Some(rc) => {
            let refined = problem.refined(rc.factor);
            let train_sub: Vec<f64> = train.iter().copied().step_by(rc.train_stride).collect();
            let r = rbm_pass(
                &refined,
                &train_sub,
                stage_one_achieved,
                CapRule::Fixed {
                    value: model.terms(),
                },
                StopTol::Absolute(0.0),
                StopTol::Absolute(0.0),
                &GreedyConfig {
                    n_hat_max: basis.n_hat(),
                    tol: 0.0,
                },
                backend,
            )?;
            Some(RefineReport {
                factor: rc.factor,
                train_kept: train_sub.len(),
                full_dim_base: problem.n(),
                full_dim_refined: refined.n(),
                ops_alpha_base: ops_alpha,
                ops_alpha_refined: r.ops_alpha,
                ops_match: ops_alpha == r.ops_alpha && r.basis.n_hat() == basis.n_hat(),
                ops_lift_base: ops_lift,
                ops_lift_refined: r.ops_lift,
            })
        }
        None => None,
    };

    let report = RbmReport {
        format: "parasep-rbm/1".to_string(),
        backend: backend_name(backend).to_string(),
        config: cfg.clone(),
        full_dim: problem.n(),
        snapshot_terms: model.terms(),
        n_hat: basis.n_hat(),
        rb_stop: rb_stop_name(basis.stop()).to_string(),
        max_err_path: basis.max_err_path().to_vec(),
        max_online_error: online_errors.iter().fold(0.0f64, |a, &e| a.max(e)),
        ops_alpha,
        ops_lift,
        refine,
        error_path_csv,
        online_error_csv,
        model_dir,
        basis_dir,
    };
    write_json(&out_dir.join("summary.json"), &report)?;

    if write_svg {
        let series = vec![Series {
            label: "max training error".into(),
            points: basis
                .max_err_path()
                .iter()
                .enumerate()
                .map(|(k, &e)| ((k + 1) as f64, e))
                .collect(),
        }];
        let svg = line_chart(
            "reduced basis training error",
            "basis size",
            "relative error",
            true,
            &series,
        );
        fs::write(out_dir.join("error_decay.svg"), svg)?;
    }
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct AuditReport {
    pub format: String,
    pub backend: String,
    pub config: AuditConfig,
    pub snapshot_terms: usize,
    pub assemblies_reported: usize,
    pub assemblies_observed: usize,
    pub assembly_count_ok: bool,
    pub cardinality_worst: f64,
    pub cardinality_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_split_worst: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_intrusive_worst: Option<f64>,
    pub oracles_ok: bool,
    pub extra_call_injected: bool,
    pub passed: bool,
}

/// Worst deviation of the online coefficients from cardinality at the
/// selected parameters: at snapshot parameter m the coefficients must be
/// the m-th unit vector.
fn cardinality_error<T: Scalar>(model: &SnapshotModel<T>) -> Result<f64, RunError> {
    let mut worst = 0.0f64;
    for (m, &mu) in model.mu_sel().iter().enumerate() {
        let beta = model.beta(mu)?;
        for (j, b) in beta.iter().enumerate() {
            let want = if j == m { T::ONE } else { T::ZERO };
            worst = worst.max((*b - want).abs());
        }
    }
    Ok(worst)
}

fn oracle_sample(mu_trial: &[f64]) -> Vec<f64> {
    let stride = (mu_trial.len() / 16).max(1);
    mu_trial.iter().copied().step_by(stride).collect()
}

/// Consistency audit of the offline pipeline against its own accounting and
/// against independently constructed reference models.
///
/// The injected extra call deliberately breaks the assembly count; it is a
/// fault-injection hook proving the audit can fail.
pub fn run_audit(
    cfg: &AuditConfig,
    with_oracles: bool,
    inject_extra_call: bool,
    out_dir: Option<&Path>,
    backend: Backend,
) -> Result<AuditReport, RunError> {
    cfg.validate()?;
    let mu_trial = cfg.mu_trial.values();

    let report = match &cfg.problem {
        ProblemSpec::Diffusion1d { a, b, n_cells } => {
            let problem = exp_diffusion_problem(*a, *b, *n_cells)?;
            let counter = CountingMatrixProvider::new(&problem);
            let family = FamilySpec {
                provider: &counter,
                ..fem_family(&problem)
            };
            let (itp, layout, _, model) = build_model(
                &family,
                &mu_trial,
                cfg.stage_one_cap,
                cfg.stage_two_rule,
                cfg.stage_one_tol.to_stop(),
                cfg.stage_two_tol.to_stop(),
                backend,
            )?;
            if inject_extra_call {
                let _ = counter.assemble(mu_trial[0]);
            }
            let (split_worst, intrusive_worst) = if with_oracles {
                let split = build_split_snapshot_model(
                    &itp,
                    family.kernel.clone(),
                    &problem,
                )?;
                let intrusive = build_intrusive(
                    &layout,
                    |_, m| Ok(fem_lambda_matrix(&problem, &itp, m)),
                    |_| Ok(problem.mass()),
                )?;
                let mut ws = 0.0f64;
                let mut wi = 0.0f64;
                for &mu in &oracle_sample(&mu_trial) {
                    let approx = model.approximate_matrix(mu)?;
                    ws = ws.max(rel_frobenius_diff(&approx, &split.evaluate(mu)?));
                    wi = wi.max(rel_frobenius_diff(&approx, &intrusive.evaluate(mu)?));
                }
                (Some(ws), Some(wi))
            } else {
                (None, None)
            };
            finish_audit(
                cfg,
                backend,
                &model,
                counter.calls(),
                split_worst,
                intrusive_worst,
                inject_extra_call,
            )?
        }
        ProblemSpec::Kernel3d {
            n_points,
            radius,
            n_radii,
        } => {
            let problem = KernelProblem::unit_sphere(*n_points, *radius, [0.0, 0.0, 3.0])?;
            let counter = CountingMatrixProvider::new(&problem);
            let family = FamilySpec {
                provider: &counter,
                ..kernel_family(&problem, *n_radii)
            };
            let (itp, layout, _, model) = build_model(
                &family,
                &mu_trial,
                cfg.stage_one_cap,
                cfg.stage_two_rule,
                cfg.stage_one_tol.to_stop(),
                cfg.stage_two_tol.to_stop(),
                backend,
            )?;
            if inject_extra_call {
                let _ = counter.assemble(mu_trial[0]);
            }
            let intrusive_worst = if with_oracles {
                // Phase snapshots at the selected stage-one parameters carry
                // the full spatial structure; the triangular conversion turns
                // them into one matrix per basis function.
                let phase: Vec<DMat<Complex64>> = itp
                    .row_labels_sel()
                    .iter()
                    .map(|&nu| problem.phase_snapshot(nu))
                    .collect();
                let lambda_mats = gamma_terms(&itp, &phase)?;
                let n = problem.n();
                let diag_unit = DMat::from_fn(n, n, |i, j| {
                    if i == j {
                        Complex64::new(0.0, 1.0 / FOUR_PI)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                });
                let intrusive = build_intrusive(
                    &layout,
                    |_, m| Ok(lambda_mats[m].clone()),
                    |_| Ok(diag_unit.clone()),
                )?;
                let mut wi = 0.0f64;
                for &mu in &oracle_sample(&mu_trial) {
                    let approx = model.approximate_matrix(mu)?;
                    wi = wi.max(rel_frobenius_diff(&approx, &intrusive.evaluate(mu)?));
                }
                Some(wi)
            } else {
                None
            };
            finish_audit(
                cfg,
                backend,
                &model,
                counter.calls(),
                None,
                intrusive_worst,
                inject_extra_call,
            )?
        }
    };

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("audit.json"), &report)?;
    }
    Ok(report)
}

fn finish_audit<T: Scalar>(
    cfg: &AuditConfig,
    backend: Backend,
    model: &SnapshotModel<T>,
    observed_calls: usize,
    oracle_split_worst: Option<f64>,
    oracle_intrusive_worst: Option<f64>,
    extra_call_injected: bool,
) -> Result<AuditReport, RunError> {
    let assembly_count_ok =
        observed_calls == model.terms() && model.provider_calls() == model.terms();
    let cardinality_worst = cardinality_error(model)?;
    let cardinality_ok = cardinality_worst <= cfg.oracle_tol;
    let oracles_ok = oracle_split_worst.map_or(true, |w| w <= cfg.oracle_tol)
        && oracle_intrusive_worst.map_or(true, |w| w <= cfg.oracle_tol);
    Ok(AuditReport {
        format: "parasep-audit/1".to_string(),
        backend: backend_name(backend).to_string(),
        config: cfg.clone(),
        snapshot_terms: model.terms(),
        assemblies_reported: model.provider_calls(),
        assemblies_observed: observed_calls,
        assembly_count_ok,
        cardinality_worst,
        cardinality_ok,
        oracle_split_worst,
        oracle_intrusive_worst,
        oracles_ok,
        extra_call_injected,
        passed: assembly_count_ok && cardinality_ok && oracles_ok,
    })
}

#[derive(Debug, Serialize)]
pub struct ReplayReport {
    pub format: String,
    pub field: String,
    pub snapshot_terms: usize,
    pub evaluations: usize,
    pub betas_csv: String,
    pub norms_csv: String,
}

fn replay_typed<T: Scalar>(
    model: &SnapshotModel<T>,
    mus: &[f64],
    out_dir: &Path,
) -> Result<ReplayReport, RunError> {
    let d = model.terms();
    let mut beta_header = String::from("mu");
    for m in 0..d {
        match T::FIELD {
            crate::scalar::FieldTag::Real => beta_header.push_str(&format!(",beta_{m}")),
            crate::scalar::FieldTag::Complex => {
                beta_header.push_str(&format!(",beta_{m}_re,beta_{m}_im"));
            }
        }
    }
    let mut beta_rows = Vec::with_capacity(mus.len());
    let mut norm_rows = Vec::with_capacity(mus.len());
    for &mu in mus {
        let beta = model.beta(mu)?;
        let mut row = format!("{mu}");
        for b in &beta {
            match T::FIELD {
                crate::scalar::FieldTag::Real => row.push_str(&format!(",{}", b.re())),
                crate::scalar::FieldTag::Complex => {
                    row.push_str(&format!(",{},{}", b.re(), b.im()));
                }
            }
        }
        beta_rows.push(row);
        let norm = match model.approximate(mu)? {
            Payload::Matrix(m) => m.frobenius(),
            Payload::Vector(v) => crate::linalg::norm_2(&v),
        };
        norm_rows.push(format!("{mu},{norm}"));
    }
    let betas_csv = "betas.csv".to_string();
    write_csv(&out_dir.join(&betas_csv), &beta_header, beta_rows.into_iter())?;
    let norms_csv = "approx_norms.csv".to_string();
    write_csv(
        &out_dir.join(&norms_csv),
        "mu,approx_norm",
        norm_rows.into_iter(),
    )?;
    Ok(ReplayReport {
        format: "parasep-replay/1".to_string(),
        field: T::FIELD.name().to_string(),
        snapshot_terms: d,
        evaluations: mus.len(),
        betas_csv,
        norms_csv,
    })
}

/// Rebuild results from a stored model without any assembler: coefficients
/// and approximation norms over a parameter sweep. The stored directory is
/// the only input; nothing here can call a provider.
pub fn run_replay(
    model_dir: &Path,
    mus: &[f64],
    out_dir: &Path,
) -> Result<ReplayReport, RunError> {
    if mus.is_empty() {
        return Err(RunError::Config("replay needs at least one parameter".into()));
    }
    fs::create_dir_all(out_dir)?;
    // The manifest records the field; peek at it to pick the element type.
    let manifest_path: PathBuf = model_dir.join("model.json");
    let text = fs::read_to_string(&manifest_path)?;
    let head: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| RunError::Numerical(format!("unreadable manifest: {e}")))?;
    let field = head
        .get("field")
        .and_then(|v| v.as_str())
        .ok_or_else(|| RunError::Numerical("manifest lacks a field entry".into()))?;
    let report = match field {
        "real" => {
            let model = load_model::<f64>(model_dir)?;
            replay_typed(&model, mus, out_dir)?
        }
        "complex" => {
            let model = load_model::<Complex64>(model_dir)?;
            replay_typed(&model, mus, out_dir)?
        }
        other => {
            return Err(RunError::Numerical(format!(
                "manifest field {other:?} is not recognized"
            )));
        }
    };
    write_json(&out_dir.join("replay.json"), &report)?;
    Ok(report)
}
