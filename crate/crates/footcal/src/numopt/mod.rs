//! Numerical optimization backends: damped Gauss-Newton nonlinear least
//! squares, a quadratic-penalty constrained solver, and finite-difference
//! Jacobians. Every fitting and planning module in the crate runs on
//! these.
//!
//! All solves are deterministic: the same problem (same input bytes)
//! produces the same report. Problems are value types over closures, so
//! independent solves can run concurrently.

mod fd;
mod nlp;
mod nls;

pub use fd::finite_diff_jacobian;
pub use nlp::{nlp_solve, EqualityConstraint, InequalityFn, NlpProblem, PenaltySchedule};
pub use nls::{nls_solve, DampingSchedule, NlsProblem};

use nalgebra::{DMatrix, DVector};

/// Residual function: parameter vector to residual vector.
pub type ResidualFn<'a> = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + 'a>;
/// Analytic Jacobian of a residual function.
pub type JacobianFn<'a> = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + 'a>;
/// Scalar-valued constraint function.
pub type ScalarFn<'a> = Box<dyn Fn(&DVector<f64>) -> f64 + 'a>;

#[derive(Debug, thiserror::Error)]
pub enum OptError {
    #[error("residual not finite at the initial vector (component {component})")]
    NonFiniteResidual { component: usize },
    #[error("cost not finite at the initial vector")]
    NonFiniteCost,
    #[error("constraint `{name}` not finite at the initial vector")]
    NonFiniteConstraint { name: String },
    #[error("residual dimension {residuals} below parameter dimension {params}")]
    UnderDetermined { residuals: usize, params: usize },
    #[error("function not finite while differentiating coordinate {coordinate}")]
    NonFiniteEval { coordinate: usize },
    #[error("finite-difference step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("bounds must satisfy lower <= upper componentwise (component {component})")]
    InvertedBounds { component: usize },
    #[error("{what} must be positive, got {value}")]
    NonPositiveParameter { what: &'static str, value: f64 },
}

/// Why a solve stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Tolerances met (and constraints feasible, for NLP).
    Converged,
    /// Iteration budget exhausted.
    MaxIterations,
    /// No acceptable step could be found; the best-found vector is
    /// reported.
    Stalled,
}

/// Outcome of an NLS or NLP solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: DVector<f64>,
    /// Sum of squared residuals at `x` (NLS), or the scalar objective
    /// value (NLP).
    pub cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Maximum constraint violation at `x`. Always 0 for unconstrained
    /// least squares.
    pub max_constraint_violation: f64,
    /// Max constraint violation recorded after each outer penalty stage.
    /// Empty for plain NLS solves.
    pub outer_violations: Vec<f64>,
}

/// Convergence tolerances shared by both solvers.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tolerances {
    /// Norm of the least-squares gradient J^T r.
    pub gradient_norm: f64,
    /// Norm of an accepted step.
    pub step_norm: f64,
    /// Relative cost decrease of an accepted step.
    pub relative_cost_decrease: f64,
    /// Constraint feasibility threshold (NLP).
    pub feasibility: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            gradient_norm: 1e-8,
            step_norm: 1e-10,
            relative_cost_decrease: 1e-14,
            feasibility: 1e-6,
        }
    }
}

impl Tolerances {
    pub(crate) fn validate(&self) -> Result<(), OptError> {
        for (what, value) in [
            ("gradient tolerance", self.gradient_norm),
            ("step tolerance", self.step_norm),
            ("relative cost tolerance", self.relative_cost_decrease),
            ("feasibility tolerance", self.feasibility),
        ] {
            if value <= 0.0 {
                return Err(OptError::NonPositiveParameter { what, value });
            }
        }
        Ok(())
    }
}

/// Default scale for finite-difference steps: h_j = step * max(1, |x_j|).
pub const DEFAULT_FD_STEP: f64 = 1e-6;
