//! Run configuration, deserialized from JSON with strict key checking.
//!
//! Unknown keys are rejected rather than ignored: a typo in a tolerance name
//! must fail loudly, not silently run with defaults. Validation beyond shape
//! lives in `validate` methods so the CLI can report config problems with a
//! dedicated exit code before any numerical work starts.

use serde::{Deserialize, Serialize};

use crate::eim::StopTol;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Evenly spaced parameter samples with exact endpoints.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl RangeSpec {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let span = self.stop - self.start;
        let steps = (self.count - 1) as f64;
        (0..self.count)
            .map(|k| {
                if k + 1 == self.count {
                    // Pin the endpoint instead of trusting start + n*step.
                    self.stop
                } else {
                    self.start + k as f64 * span / steps
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.count == 0 {
            return Err(ConfigError("range count must be positive".into()));
        }
        if !self.start.is_finite() || !self.stop.is_finite() {
            return Err(ConfigError("range endpoints must be finite".into()));
        }
        if self.count > 1 && self.stop <= self.start {
            return Err(ConfigError(
                "range stop must exceed start when count > 1".into(),
            ));
        }
        Ok(())
    }
}

/// Greedy stopping tolerance as written in config files.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum TolSpec {
    Absolute { value: f64 },
    RelativeToFirst { value: f64 },
}

impl TolSpec {
    pub fn to_stop(self) -> StopTol {
        match self {
            TolSpec::Absolute { value } => StopTol::Absolute(value),
            TolSpec::RelativeToFirst { value } => StopTol::RelativeToFirst(value),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = match self {
            TolSpec::Absolute { value } | TolSpec::RelativeToFirst { value } => *value,
        };
        if !(v.is_finite() && v >= 0.0) {
            return Err(ConfigError("tolerances must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// How the second-stage term cap follows the first-stage rank.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum CapRule {
    /// Cap at the achieved first-stage rank plus a constant.
    Offset { add: usize },
    Fixed { value: usize },
    /// No cap beyond the candidate inventory itself.
    Unbounded,
}

impl CapRule {
    pub fn cap(&self, stage_one_achieved: usize, candidates: usize) -> usize {
        match self {
            CapRule::Offset { add } => (stage_one_achieved + add).min(candidates),
            CapRule::Fixed { value } => (*value).min(candidates),
            CapRule::Unbounded => candidates,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum ProblemSpec {
    /// Dirichlet diffusion-reaction problem on an interval, exponential
    /// diffusion coefficient, unit source.
    Diffusion1d { a: f64, b: f64, n_cells: usize },
    /// Oscillatory kernel matrix on a point cloud on a sphere.
    Kernel3d {
        n_points: usize,
        radius: f64,
        n_radii: usize,
    },
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            ProblemSpec::Diffusion1d { a, b, n_cells } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(ConfigError("interval must be finite with a < b".into()));
                }
                if *n_cells < 2 {
                    return Err(ConfigError("need at least two cells".into()));
                }
            }
            ProblemSpec::Kernel3d {
                n_points,
                radius,
                n_radii,
            } => {
                if *n_points < 2 {
                    return Err(ConfigError("need at least two cloud points".into()));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(ConfigError("radius must be positive".into()));
                }
                if *n_radii == 0 {
                    return Err(ConfigError("need at least one radial sample".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub problem: ProblemSpec,
    pub mu_trial: RangeSpec,
    /// First-stage term caps, one study pass per entry.
    pub stage_one_caps: Vec<usize>,
    pub stage_two_rule: CapRule,
    pub stage_one_tol: TolSpec,
    pub stage_two_tol: TolSpec,
    /// Also report solution errors (needs the problem to carry a
    /// right-hand side; currently the interval problem).
    #[serde(default)]
    pub solve_errors: bool,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.problem.validate()?;
        self.mu_trial.validate()?;
        self.stage_one_tol.validate()?;
        self.stage_two_tol.validate()?;
        if self.stage_one_caps.is_empty() {
            return Err(ConfigError("stage_one_caps must not be empty".into()));
        }
        if self.stage_one_caps.iter().any(|&d| d == 0) {
            return Err(ConfigError("stage-one caps must be positive".into()));
        }
        if self.solve_errors && !matches!(self.problem, ProblemSpec::Diffusion1d { .. }) {
            return Err(ConfigError(
                "solve_errors needs a problem with a right-hand side".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineCheck {
    /// Mesh refinement factor for the cost-invariance comparison.
    pub factor: usize,
    /// Keep every k-th training parameter on the refined mesh to bound the
    /// truth-solve cost; the online operation count must not change.
    pub train_stride: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbmConfig {
    pub problem: ProblemSpec,
    pub mu_train: RangeSpec,
    pub stage_one_cap: usize,
    pub stage_two_rule: CapRule,
    pub stage_one_tol: TolSpec,
    pub stage_two_tol: TolSpec,
    pub n_hat_max: usize,
    /// Greedy target on the max relative training error; zero disables.
    pub rb_tol: f64,
    #[serde(default)]
    pub refine_check: Option<RefineCheck>,
}

impl RbmConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.problem.validate()?;
        self.mu_train.validate()?;
        self.stage_one_tol.validate()?;
        self.stage_two_tol.validate()?;
        if self.stage_one_cap == 0 {
            return Err(ConfigError("stage_one_cap must be positive".into()));
        }
        if self.n_hat_max == 0 {
            return Err(ConfigError("n_hat_max must be positive".into()));
        }
        if !(self.rb_tol.is_finite() && self.rb_tol >= 0.0) {
            return Err(ConfigError("rb_tol must be finite and nonnegative".into()));
        }
        if !matches!(self.problem, ProblemSpec::Diffusion1d { .. }) {
            return Err(ConfigError(
                "the reduced-basis driver needs a problem with a right-hand side".into(),
            ));
        }
        if let Some(rc) = &self.refine_check {
            if rc.factor < 2 {
                return Err(ConfigError("refine factor must be at least 2".into()));
            }
            if rc.train_stride == 0 {
                return Err(ConfigError("train stride must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub problem: ProblemSpec,
    pub mu_trial: RangeSpec,
    pub stage_one_cap: usize,
    pub stage_two_rule: CapRule,
    pub stage_one_tol: TolSpec,
    pub stage_two_tol: TolSpec,
    /// Agreement level required between the production evaluation and the
    /// reference models when oracles are enabled.
    pub oracle_tol: f64,
}

impl AuditConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.problem.validate()?;
        self.mu_trial.validate()?;
        self.stage_one_tol.validate()?;
        self.stage_two_tol.validate()?;
        if self.stage_one_cap == 0 {
            return Err(ConfigError("stage_one_cap must be positive".into()));
        }
        if !(self.oracle_tol.is_finite() && self.oracle_tol > 0.0) {
            return Err(ConfigError("oracle_tol must be positive".into()));
        }
        Ok(())
    }
}

pub fn parse_study(text: &str) -> Result<StudyConfig, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn parse_rbm(text: &str) -> Result<RbmConfig, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn parse_audit(text: &str) -> Result<AuditConfig, serde_json::Error> {
    serde_json::from_str(text)
}
