//! Damped Gauss-Newton nonlinear least squares.

use nalgebra::{DMatrix, DVector};

use super::{
    finite_diff_jacobian, JacobianFn, OptError, ResidualFn, SolveReport, Termination, Tolerances,
    DEFAULT_FD_STEP,
};

/// Multiplicative damping adaptation for the Gauss-Newton system
/// (J^T J + lambda I) dx = -J^T r.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DampingSchedule {
    pub initial: f64,
    /// Factor applied when a step is rejected.
    pub increase: f64,
    /// Factor applied when a step is accepted.
    pub decrease: f64,
    /// Damping beyond this with no accepted step means the solve stalled.
    pub max: f64,
}

impl Default for DampingSchedule {
    fn default() -> Self {
        DampingSchedule {
            initial: 1e-3,
            increase: 10.0,
            decrease: 0.5,
            max: 1e14,
        }
    }
}

/// A nonlinear least-squares problem: minimize ||r(x)||^2.
pub struct NlsProblem<'a> {
    pub residual: ResidualFn<'a>,
    /// Analytic Jacobian; finite differences are used when absent.
    pub jacobian: Option<JacobianFn<'a>>,
    pub x0: DVector<f64>,
    pub tolerances: Tolerances,
    pub max_iterations: usize,
    pub damping: DampingSchedule,
    /// Base scale for finite-difference steps.
    pub fd_step: f64,
}

impl<'a> NlsProblem<'a> {
    pub fn new<F>(x0: DVector<f64>, residual: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + 'a,
    {
        NlsProblem {
            residual: Box::new(residual),
            jacobian: None,
            x0,
            tolerances: Tolerances::default(),
            max_iterations: 200,
            damping: DampingSchedule::default(),
            fd_step: DEFAULT_FD_STEP,
        }
    }

    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&DVector<f64>) -> DMatrix<f64> + 'a,
    {
        self.jacobian = Some(Box::new(jacobian));
        self
    }

    pub fn with_tolerances(mut self, tolerances: Tolerances) -> Self {
        self.tolerances = tolerances;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations.max(1);
        self
    }

    pub fn with_damping(mut self, damping: DampingSchedule) -> Self {
        self.damping = damping;
        self
    }
}

/// Solve an unconstrained nonlinear least-squares problem.
///
/// Accepted steps never increase the cost, and identical problems yield
/// identical reports.
pub fn nls_solve(problem: &NlsProblem<'_>) -> Result<SolveReport, OptError> {
    solve_core(problem, None, true)
}

/// Shared Gauss-Newton core. `bounds`, when present, are enforced by
/// projecting every trial point (used by the penalty NLP solver, whose
/// stacked residual may be shorter than the parameter vector, hence
/// `check_dims`).
pub(crate) fn solve_core(
    problem: &NlsProblem<'_>,
    bounds: Option<(&DVector<f64>, &DVector<f64>)>,
    check_dims: bool,
) -> Result<SolveReport, OptError> {
    problem.tolerances.validate()?;
    let n = problem.x0.len();
    let mut x = problem.x0.clone();
    if let Some((lo, hi)) = bounds {
        clamp_in_place(&mut x, lo, hi);
    }

    let mut r = (problem.residual)(&x);
    if let Some(component) = r.iter().position(|v| !v.is_finite()) {
        return Err(OptError::NonFiniteResidual { component });
    }
    if check_dims && r.len() < n {
        return Err(OptError::UnderDetermined {
            residuals: r.len(),
            params: n,
        });
    }

    let mut cost = r.norm_squared();
    let mut lambda = problem.damping.initial;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    'outer: while iterations < problem.max_iterations {
        iterations += 1;
        let jac = match &problem.jacobian {
            Some(j) => j(&x),
            None => finite_diff_jacobian(&problem.residual, &x, problem.fd_step)?,
        };
        let gradient = jac.transpose() * &r;
        if projected_gradient_norm(&gradient, &x, bounds) <= problem.tolerances.gradient_norm {
            termination = Termination::Converged;
            break;
        }

        // Active-set reduction: coordinates pinned at a bound with the
        // gradient pushing outward stay frozen this iteration, so the
        // damped system is solved over the free coordinates only.
        let free: Vec<usize> = match bounds {
            None => (0..n).collect(),
            Some((lo, hi)) => (0..n)
                .filter(|&i| {
                    let pinned_low = x[i] <= lo[i] && gradient[i] > 0.0;
                    let pinned_high = x[i] >= hi[i] && gradient[i] < 0.0;
                    !(pinned_low || pinned_high)
                })
                .collect(),
        };
        if free.is_empty() {
            termination = Termination::Converged;
            break;
        }
        let jac_free = jac.select_columns(free.iter());
        let gradient_free = DVector::from_iterator(free.len(), free.iter().map(|&i| gradient[i]));
        let jtj = jac_free.transpose() * &jac_free;

        // Retry the linear solve with growing damping until a step is
        // accepted or the damping budget runs out.
        loop {
            let mut system = jtj.clone();
            for i in 0..free.len() {
                system[(i, i)] += lambda;
            }
            let step_free = match system.clone().cholesky() {
                Some(chol) => chol.solve(&(-&gradient_free)),
                None => {
                    lambda *= problem.damping.increase;
                    if lambda > problem.damping.max {
                        termination = Termination::Stalled;
                        break 'outer;
                    }
                    continue;
                }
            };
            let mut trial = x.clone();
            for (k, &i) in free.iter().enumerate() {
                trial[i] += step_free[k];
            }
            if let Some((lo, hi)) = bounds {
                clamp_in_place(&mut trial, lo, hi);
            }
            let trial_r = (problem.residual)(&trial);
            let trial_cost = if trial_r.iter().all(|v| v.is_finite()) {
                trial_r.norm_squared()
            } else {
                f64::INFINITY
            };
            if trial_cost < cost {
                let moved = (&trial - &x).norm();
                let decrease = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                x = trial;
                r = trial_r;
                cost = trial_cost;
                lambda = (lambda * problem.damping.decrease).max(1e-16);
                if std::env::var_os("FOOTCAL_GN_DEBUG").is_some() {
                    eprintln!(
                        "  gn it {iterations}: accept cost {cost:.6e} moved {moved:.3e} lambda {lambda:.1e}"
                    );
                }
                if moved <= problem.tolerances.step_norm
                    || decrease <= problem.tolerances.relative_cost_decrease
                {
                    termination = Termination::Converged;
                    break 'outer;
                }
                break;
            }
            lambda *= problem.damping.increase;
            if std::env::var_os("FOOTCAL_GN_DEBUG").is_some() {
                eprintln!("  gn it {iterations}: reject (trial {trial_cost:.6e} >= {cost:.6e}), lambda {lambda:.1e}");
            }
            if lambda > problem.damping.max {
                // Rank collapse or a flat valley: no step of any damping
                // improves the cost.
                termination = Termination::Stalled;
                break 'outer;
            }
        }
    }

    Ok(SolveReport {
        x,
        cost,
        iterations,
        termination,
        max_constraint_violation: 0.0,
        outer_violations: Vec::new(),
    })
}

fn clamp_in_place(x: &mut DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Gradient norm with components frozen at an active bound zeroed out, so
/// convergence at a box face is recognized.
fn projected_gradient_norm(
    gradient: &DVector<f64>,
    x: &DVector<f64>,
    bounds: Option<(&DVector<f64>, &DVector<f64>)>,
) -> f64 {
    match bounds {
        None => gradient.norm(),
        Some((lo, hi)) => {
            let mut acc = 0.0;
            for i in 0..x.len() {
                let g = gradient[i];
                let pinned_low = x[i] <= lo[i] && g > 0.0;
                let pinned_high = x[i] >= hi[i] && g < 0.0;
                if !(pinned_low || pinned_high) {
                    acc += g * g;
                }
            }
            acc.sqrt()
        }
    }
}
