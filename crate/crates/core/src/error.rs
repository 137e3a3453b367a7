use std::path::PathBuf;

use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum LabError {
    #[error("point {x} lies outside the chart domain")]
    OutsideDomain { x: Complex64 },

    #[error("invalid chart: {0}")]
    InvalidChart(String),

    #[error("invalid quadratic differential: {0}")]
    InvalidDifferential(String),

    #[error("pushed-forward differential has a pole of order {order} (> 2)")]
    PoleOrderExceeded { order: i32 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("sample {index} is not null: <c,c> = {value:e}")]
    NotNull { index: usize, value: f64 },

    #[error("matrix does not preserve the two boundary rulings coherently (defect {defect:e})")]
    OutsideIdentityComponent { defect: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("bracket violation at grid index {index}: value {value}, bounds [{lower}, {upper}]")]
    BracketViolation {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("no super-solution constant C <= {max} satisfies the inequality on the grid")]
    NoSuperSolution { max: f64 },

    #[error("|q|^2 in the comparison metric is unbounded on the grid (value {value:e})")]
    UnboundedNorm { value: f64 },

    #[error("point (rho={rho}, theta={theta}) is too close to the grid edge for the stencil")]
    StencilOutOfRange { rho: f64, theta: f64 },

    #[error("integrator step underflow at path parameter {s}")]
    StepUnderflow { s: f64 },

    #[error("holonomy realness defect {defect:e} exceeds tolerance {tol:e}")]
    RealnessDefect { defect: f64, tol: f64 },

    #[error("invalid family: {0}")]
    InvalidFamily(String),

    #[error("solver failure for member t = {t:e}: {source}")]
    Member {
        t: f64,
        #[source]
        source: Box<LabError>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            LabError::InvalidChart(_)
            | LabError::InvalidDifferential(_)
            | LabError::InvalidFamily(_)
            | LabError::Config(_)
            | LabError::Parse { .. } => ErrorCategory::Config,
            LabError::Io { .. } => ErrorCategory::Io,
            LabError::Member { source, .. } => source.category(),
            _ => ErrorCategory::Numeric,
        }
    }

    /// Short stable identifier for machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::OutsideDomain { .. } => "outside_domain",
            LabError::InvalidChart(_) => "invalid_chart",
            LabError::InvalidDifferential(_) => "invalid_differential",
            LabError::PoleOrderExceeded { .. } => "pole_order_exceeded",
            LabError::Degenerate(_) => "degenerate",
            LabError::NotNull { .. } => "not_null",
            LabError::OutsideIdentityComponent { .. } => "outside_identity_component",
            LabError::GridMismatch(_) => "grid_mismatch",
            LabError::NonConvergence { .. } => "non_convergence",
            LabError::BracketViolation { .. } => "bracket_violation",
            LabError::NoSuperSolution { .. } => "no_super_solution",
            LabError::UnboundedNorm { .. } => "unbounded_norm",
            LabError::StencilOutOfRange { .. } => "stencil_out_of_range",
            LabError::StepUnderflow { .. } => "step_underflow",
            LabError::RealnessDefect { .. } => "realness_defect",
            LabError::InvalidFamily(_) => "invalid_family",
            LabError::Member { .. } => "member_failure",
            LabError::Config(_) => "config",
            LabError::Parse { .. } => "parse",
            LabError::Io { .. } => "io",
        }
    }
}
