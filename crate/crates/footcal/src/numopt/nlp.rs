//! Quadratic-penalty constrained solver.
//!
//! The objective is supplied in least-squares form (cost = ||rho(x)||^2).
//! Each outer stage stacks the cost residuals with penalty-weighted
//! equality residuals and inequality deficits and hands the result to the
//! Gauss-Newton core; box bounds are enforced exactly by projection
//! inside that core. The penalty weight grows geometrically until the
//! iterate is feasible or the schedule runs out.

use nalgebra::DVector;

use super::nls::solve_core;
use super::{
    JacobianFn, NlsProblem, OptError, ResidualFn, SolveReport, Termination, Tolerances,
    DEFAULT_FD_STEP,
};

/// One equality constraint c(x) = 0, satisfied when every component of
/// |c(x)| is at or below `tolerance`.
pub struct EqualityConstraint<'a> {
    pub name: String,
    pub function: ResidualFn<'a>,
    pub tolerance: f64,
}

impl<'a> EqualityConstraint<'a> {
    pub fn new<F>(name: impl Into<String>, function: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + 'a,
    {
        EqualityConstraint {
            name: name.into(),
            function: Box::new(function),
            tolerance: 0.0,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance.max(0.0);
        self
    }
}

/// Inequality constraints return a vector that is feasible when every
/// component is >= 0.
pub type InequalityFn<'a> = ResidualFn<'a>;

/// Outer-loop penalty weights.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PenaltySchedule {
    pub initial_weight: f64,
    pub growth: f64,
    pub max_outer_iterations: usize,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        PenaltySchedule {
            initial_weight: 10.0,
            growth: 10.0,
            max_outer_iterations: 10,
        }
    }
}

impl PenaltySchedule {
    fn validate(&self) -> Result<(), OptError> {
        if self.initial_weight <= 0.0 {
            return Err(OptError::NonPositiveParameter {
                what: "penalty initial weight",
                value: self.initial_weight,
            });
        }
        if self.growth <= 1.0 {
            return Err(OptError::NonPositiveParameter {
                what: "penalty growth factor (must exceed 1)",
                value: self.growth,
            });
        }
        Ok(())
    }
}

/// Constrained problem: minimize ||cost_residuals(x)||^2 subject to
/// equalities, inequalities (>= 0) and box bounds.
pub struct NlpProblem<'a> {
    pub cost_residuals: ResidualFn<'a>,
    pub cost_jacobian: Option<JacobianFn<'a>>,
    pub equalities: Vec<EqualityConstraint<'a>>,
    pub inequalities: Vec<InequalityFn<'a>>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Clamped to the bounds before the first evaluation.
    pub x0: DVector<f64>,
    pub penalty: PenaltySchedule,
    pub tolerances: Tolerances,
    pub max_inner_iterations: usize,
    pub fd_step: f64,
}

impl<'a> NlpProblem<'a> {
    /// Unbounded problem; add bounds with [`NlpProblem::with_bounds`].
    pub fn new<F>(x0: DVector<f64>, cost_residuals: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + 'a,
    {
        let n = x0.len();
        NlpProblem {
            cost_residuals: Box::new(cost_residuals),
            cost_jacobian: None,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
            x0,
            penalty: PenaltySchedule::default(),
            tolerances: Tolerances::default(),
            max_inner_iterations: 100,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_equality(mut self, constraint: EqualityConstraint<'a>) -> Self {
        self.equalities.push(constraint);
        self
    }

    pub fn with_inequality<F>(mut self, function: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + 'a,
    {
        self.inequalities.push(Box::new(function));
        self
    }

    pub fn with_penalty(mut self, penalty: PenaltySchedule) -> Self {
        self.penalty = penalty;
        self
    }

    pub fn with_tolerances(mut self, tolerances: Tolerances) -> Self {
        self.tolerances = tolerances;
        self
    }

    /// Scalar objective at `x`.
    pub fn cost(&self, x: &DVector<f64>) -> f64 {
        (self.cost_residuals)(x).norm_squared()
    }

    /// Max violation over all constraints: |c| beyond its tolerance for
    /// equalities, deficit below zero for inequalities. Bounds are
    /// maintained by projection and never contribute.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        for eq in &self.equalities {
            let c = (eq.function)(x);
            for v in c.iter() {
                worst = worst.max((v.abs() - eq.tolerance).max(0.0));
            }
        }
        for ineq in &self.inequalities {
            let g = ineq(x);
            for v in g.iter() {
                worst = worst.max((-v).max(0.0));
            }
        }
        worst
    }
}

/// Solve with a quadratic-penalty outer loop over damped Gauss-Newton
/// inner solves. Bounds hold exactly on the returned vector; the report
/// carries the max constraint violation and the per-stage violation
/// trace.
pub fn nlp_solve(problem: &NlpProblem<'_>) -> Result<SolveReport, OptError> {
    problem.penalty.validate()?;
    problem.tolerances.validate()?;
    let n = problem.x0.len();
    for i in 0..n {
        if problem.lower[i] > problem.upper[i] {
            return Err(OptError::InvertedBounds { component: i });
        }
    }

    let mut x = problem.x0.clone();
    for i in 0..n {
        x[i] = x[i].clamp(problem.lower[i], problem.upper[i]);
    }

    if !problem.cost(&x).is_finite() {
        return Err(OptError::NonFiniteCost);
    }
    for eq in &problem.equalities {
        if (eq.function)(&x).iter().any(|v| !v.is_finite()) {
            return Err(OptError::NonFiniteConstraint {
                name: eq.name.clone(),
            });
        }
    }
    for (k, ineq) in problem.inequalities.iter().enumerate() {
        if ineq(&x).iter().any(|v| !v.is_finite()) {
            return Err(OptError::NonFiniteConstraint {
                name: format!("inequality[{k}]"),
            });
        }
    }

    let feasibility = problem.tolerances.feasibility;
    let mut weight = problem.penalty.initial_weight;
    let mut iterations = 0;
    let mut outer_violations = Vec::new();
    // Best-found iterate: a feasible point with lower cost beats any
    // other feasible point; any feasible point beats an infeasible one;
    // among infeasible points, lower violation wins.
    let mut best_x = x.clone();
    let mut best_cost = problem.cost(&x);
    let mut best_violation = problem.max_violation(&x);
    let mut best_converged = false;

    for _outer in 0..problem.penalty.max_outer_iterations {
        let sqrt_w = weight.sqrt();
        let stacked = |p: &DVector<f64>| stack_penalized(problem, p, sqrt_w);
        let inner = NlsProblem {
            residual: Box::new(stacked),
            jacobian: None,
            x0: x.clone(),
            tolerances: problem.tolerances,
            max_iterations: problem.max_inner_iterations,
            damping: Default::default(),
            fd_step: problem.fd_step,
        };
        let report = solve_core(&inner, Some((&problem.lower, &problem.upper)), false)?;
        x = report.x;
        iterations += report.iterations;
        let inner_converged = report.termination == Termination::Converged;

        let violation = problem.max_violation(&x);
        let cost = problem.cost(&x);
        outer_violations.push(violation);
        if std::env::var_os("FOOTCAL_NUMOPT_DEBUG").is_some() {
            eprintln!(
                "penalty stage mu={weight:.1e}: inner {:?} after {} iters, cost {cost:.6e}, viol {violation:.3e}",
                report.termination, report.iterations
            );
        }
        let improves = match (violation <= feasibility, best_violation <= feasibility) {
            (true, true) => cost < best_cost,
            (true, false) => true,
            (false, true) => false,
            (false, false) => violation < best_violation,
        };
        let plateau = improves
            && inner_converged
            && violation <= feasibility
            && (best_violation <= feasibility
                && (best_cost - cost).abs()
                    <= problem.tolerances.relative_cost_decrease * best_cost.abs().max(1.0));
        if improves {
            best_x = x.clone();
            best_cost = cost;
            best_violation = violation;
            best_converged = inner_converged;
        }
        if plateau {
            break;
        }
        weight *= problem.penalty.growth;
    }

    // Restoration phase: the penalty ladder converges to the constrained
    // optimum from the infeasible side, so the final iterate often sits
    // just off the manifold. A constraints-only solve projects it back;
    // the cost barely moves because the projection is near-orthogonal to
    // the cost descent directions.
    if best_violation > feasibility || problem.max_violation(&x) > feasibility {
        let restored_from = x.clone();
        let constraint_stack = |p: &DVector<f64>| stack_constraints(problem, p);
        // The restoration works at the residual scale of the feasibility
        // gate, far below the caller's cost-level tolerances.
        let restoration = NlsProblem {
            residual: Box::new(constraint_stack),
            jacobian: None,
            x0: restored_from,
            tolerances: Tolerances {
                gradient_norm: 1e-12,
                step_norm: 1e-14,
                relative_cost_decrease: 1e-12,
                feasibility: problem.tolerances.feasibility,
            },
            max_iterations: 40,
            damping: Default::default(),
            fd_step: problem.fd_step,
        };
        let report = solve_core(&restoration, Some((&problem.lower, &problem.upper)), false)?;
        iterations += report.iterations;
        let violation = problem.max_violation(&report.x);
        let cost = problem.cost(&report.x);
        outer_violations.push(violation);
        if std::env::var_os("FOOTCAL_NUMOPT_DEBUG").is_some() {
            eprintln!(
                "restoration: {:?} after {} iters, cost {cost:.6e}, viol {violation:.3e}",
                report.termination, report.iterations
            );
            for eq in &problem.equalities {
                let c = (eq.function)(&report.x);
                let worst = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                eprintln!("  equality `{}`: {worst:.3e}", eq.name);
            }
            for (k, ineq) in problem.inequalities.iter().enumerate() {
                let g = ineq(&report.x);
                let worst = g.iter().fold(0.0f64, |a, v| a.max((-v).max(0.0)));
                eprintln!("  inequality[{k}]: {worst:.3e}");
            }
        }
        let improves = match (violation <= feasibility, best_violation <= feasibility) {
            (true, true) => cost < best_cost,
            (true, false) => true,
            (false, true) => false,
            (false, false) => violation < best_violation,
        };
        if improves {
            best_x = report.x;
            best_cost = cost;
            best_violation = violation;
            best_converged = true;
        }
    }

    let termination = if best_violation <= feasibility {
        if best_converged {
            Termination::Converged
        } else {
            Termination::MaxIterations
        }
    } else {
        // Infeasible at every penalty stage; report the best-found
        // vector.
        Termination::Stalled
    };
    Ok(SolveReport {
        cost: best_cost,
        x: best_x,
        iterations,
        termination,
        max_constraint_violation: best_violation,
        outer_violations,
    })
}

/// Constraint residuals only: equality rows plus inequality deficits.
fn stack_constraints(problem: &NlpProblem<'_>, x: &DVector<f64>) -> DVector<f64> {
    let mut out: Vec<f64> = Vec::new();
    for eq in &problem.equalities {
        let c = (eq.function)(x);
        out.extend(c.iter());
    }
    for ineq in &problem.inequalities {
        let g = ineq(x);
        out.extend(g.iter().map(|v| (-v).max(0.0)));
    }
    DVector::from_vec(out)
}

fn stack_penalized(problem: &NlpProblem<'_>, x: &DVector<f64>, sqrt_w: f64) -> DVector<f64> {
    let mut out: Vec<f64> = (problem.cost_residuals)(x).iter().copied().collect();
    for eq in &problem.equalities {
        let c = (eq.function)(x);
        out.extend(c.iter().map(|v| sqrt_w * v));
    }
    for ineq in &problem.inequalities {
        let g = ineq(x);
        out.extend(g.iter().map(|v| sqrt_w * (-v).max(0.0)));
    }
    DVector::from_vec(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numopt::nlp_solve;

    #[test]
    fn active_inequality_at_bound() {
        // minimize (x - 2)^2 subject to x <= 1, written as 1 - x >= 0.
        let problem = NlpProblem::new(DVector::from_vec(vec![0.0]), |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0] - 2.0])
        })
        .with_inequality(|x: &DVector<f64>| DVector::from_vec(vec![1.0 - x[0]]));
        let report = nlp_solve(&problem).unwrap();
        assert!(
            (report.x[0] - 1.0).abs() < 1e-5,
            "x = {}, violation = {}",
            report.x[0],
            report.max_constraint_violation
        );
        assert!(report.max_constraint_violation <= 1e-6);
    }

    #[test]
    fn symmetric_equality_projection() {
        // minimize x^2 + y^2 subject to x + y = 1 -> (0.5, 0.5).
        let problem = NlpProblem::new(DVector::from_vec(vec![0.0, 0.0]), |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0], x[1]])
        })
        .with_equality(EqualityConstraint::new("sum", |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0] + x[1] - 1.0])
        }));
        let report = nlp_solve(&problem).unwrap();
        assert!((report.x[0] - 0.5).abs() < 1e-5, "x = {:?}", report.x);
        assert!((report.x[1] - 0.5).abs() < 1e-5);
        assert!(report.max_constraint_violation <= 1e-6);
    }

    #[test]
    fn bounds_hold_exactly() {
        let problem = NlpProblem::new(DVector::from_vec(vec![5.0]), |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0] + 4.0])
        })
        .with_bounds(DVector::from_vec(vec![-1.0]), DVector::from_vec(vec![1.0]));
        let report = nlp_solve(&problem).unwrap();
        assert!(report.x[0] >= -1.0 && report.x[0] <= 1.0);
        assert!((report.x[0] + 1.0).abs() < 1e-12, "clamps to lower bound");
    }

    #[test]
    fn infeasible_reports_stalled_with_best_vector() {
        // x = 0 and x = 1 cannot both hold.
        let problem = NlpProblem::new(DVector::from_vec(vec![0.3]), |x: &DVector<f64>| {
            DVector::from_vec(vec![0.0 * x[0]])
        })
        .with_equality(EqualityConstraint::new("a", |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0]])
        }))
        .with_equality(EqualityConstraint::new("b", |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0] - 1.0])
        }));
        let report = nlp_solve(&problem).unwrap();
        assert_eq!(report.termination, Termination::Stalled);
        // Best compromise is near 0.5 where the max violation is minimal.
        assert!((report.x[0] - 0.5).abs() < 1e-3, "x = {:?}", report.x);
        assert!(report.max_constraint_violation > 0.4);
    }

    #[test]
    fn violation_trace_non_increasing() {
        let problem = NlpProblem::new(DVector::from_vec(vec![2.0, -1.0]), |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0] - 1.0, x[1] - 1.0])
        })
        .with_equality(EqualityConstraint::new("circle", |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0] * x[0] + x[1] * x[1] - 1.0])
        }));
        let report = nlp_solve(&problem).unwrap();
        for pair in report.outer_violations.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-12,
                "violation increased: {:?}",
                report.outer_violations
            );
        }
    }

    #[test]
    fn non_finite_cost_rejected() {
        let problem = NlpProblem::new(DVector::from_vec(vec![-1.0]), |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0].sqrt()])
        });
        assert!(matches!(nlp_solve(&problem), Err(OptError::NonFiniteCost)));
    }
}
