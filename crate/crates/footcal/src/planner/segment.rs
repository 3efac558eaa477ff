//! One receding-horizon segment: direct collocation over a short state
//! sequence with transition, stability, joint-limit, collision and
//! foot-transform constraints.

use std::cell::RefCell;

use nalgebra::{DVector, Vector2};

use super::{PlannerConfig, PlannerError, StanceContext};
use crate::model::{Pose, RobotModel};
use crate::numopt::{nlp_solve, EqualityConstraint, NlpProblem, SolveReport};
use crate::sampler::DoubleSupportConfig;

/// Output of one segment solve. States are reconstructed from the start
/// state and the transitions, so the transition identity holds bit-exactly.
#[derive(Debug, Clone)]
pub struct SegmentResult {
    /// q[0..N), including the fixed start state.
    pub states: Vec<DVector<f64>>,
    /// u[0..N-1).
    pub transitions: Vec<DVector<f64>>,
    pub cops: Vec<Vector2<f64>>,
    pub distance_before: f64,
    pub distance_after: f64,
    /// The solve could not move the CoP closer to the target.
    pub no_progress: bool,
    pub report: SolveReport,
}

/// Cached per-state kinematics, keyed on the exact joint vector. Within
/// one stacked residual evaluation every constraint closure sees the same
/// states, and a finite-difference column only perturbs one of them.
type CacheSlot = Option<(DVector<f64>, CachedState)>;

struct StateCache {
    slots: RefCell<Vec<CacheSlot>>,
}

#[derive(Clone)]
struct CachedState {
    cop: Vector2<f64>,
    tf_residual: [f64; 6],
    cop_margin: f64,
    pair_distances: Vec<f64>,
}

impl StateCache {
    fn new(states: usize) -> Self {
        StateCache {
            slots: RefCell::new(vec![None; states]),
        }
    }

    fn eval(&self, ctx: &StanceContext<'_>, index: usize, q: &DVector<f64>) -> CachedState {
        let mut slots = self.slots.borrow_mut();
        if let Some((cached_q, cached)) = &slots[index] {
            if cached_q == q {
                return cached.clone();
            }
        }
        let poses: Vec<Pose> = ctx
            .model
            .forward_kinematics(q)
            .expect("dimension fixed by construction");
        let cop = ctx.model.cop_from_poses(&poses);
        let state = CachedState {
            cop,
            tf_residual: ctx.tf_residual(&poses),
            cop_margin: ctx.cop_inside_margin(&cop),
            pair_distances: ctx.model.pair_distances(&poses),
        };
        slots[index] = Some((q.clone(), state.clone()));
        state
    }
}

/// Plan one segment of `cfg.horizon` states from `q_start` toward a CoP
/// target. `u_prev` is the previous segment's last transition, smoothing
/// across segment boundaries.
pub fn plan_segment(
    model: &RobotModel,
    ds: &DoubleSupportConfig,
    q_start: &DVector<f64>,
    u_prev: &DVector<f64>,
    target: &Vector2<f64>,
    cfg: &PlannerConfig,
) -> Result<SegmentResult, PlannerError> {
    cfg.validate()?;
    let n = model.nq();
    let free = cfg.horizon - 1;
    let dim = 2 * free * n;

    let start_cop = model.modeled_cop(q_start)?;
    let distance_before = (start_cop - target).norm();

    // Decision vector: the free states q[1..N) then the transitions
    // u[0..N-1).
    let q_at = move |z: &DVector<f64>, i: usize| z.rows((i - 1) * n, n).into_owned();
    let u_at = move |z: &DVector<f64>, j: usize| z.rows(free * n + j * n, n).into_owned();

    let cache = StateCache::new(free);
    let sqrt_qc = [cfg.q_c[0].sqrt(), cfg.q_c[1].sqrt()];
    let sqrt_qu = cfg.q_u.sqrt();

    let cost_ctx = StanceContext::new(model, ds)?;
    let cache_ref = &cache;
    let target_v = *target;
    let u_prev_v = u_prev.clone();
    let cost = move |z: &DVector<f64>| {
        let mut r = Vec::with_capacity(free * 2 + free * n);
        for i in 1..=free {
            let state = cache_ref.eval(&cost_ctx, i - 1, &q_at(z, i));
            r.push(sqrt_qc[0] * (state.cop.x - target_v.x));
            r.push(sqrt_qc[1] * (state.cop.y - target_v.y));
        }
        for j in 0..free {
            let u = u_at(z, j);
            let prev = if j == 0 {
                u_prev_v.clone()
            } else {
                u_at(z, j - 1)
            };
            for k in 0..n {
                r.push(sqrt_qu * (u[k] - prev[k]));
            }
        }
        DVector::from_vec(r)
    };

    let q_start_v = q_start.clone();
    let transitions_eq = move |z: &DVector<f64>| {
        let mut r = Vec::with_capacity(free * n);
        for i in 1..=free {
            let q_i = q_at(z, i);
            let q_prev = if i == 1 {
                q_start_v.clone()
            } else {
                q_at(z, i - 1)
            };
            let u = u_at(z, i - 1);
            for k in 0..n {
                r.push(q_i[k] - q_prev[k] - u[k]);
            }
        }
        DVector::from_vec(r)
    };

    let tf_ctx = StanceContext::new(model, ds)?;
    let tf_eq = move |z: &DVector<f64>| {
        let mut r = Vec::with_capacity(free * 6);
        for i in 1..=free {
            let state = cache_ref.eval(&tf_ctx, i - 1, &q_at(z, i));
            r.extend_from_slice(&state.tf_residual);
        }
        DVector::from_vec(r)
    };

    // Inequalities are enforced a buffer tighter than the certified
    // thresholds, so active constraints still certify after the solver
    // stops within its feasibility tolerance.
    let buffer = 10.0 * cfg.tolerances.feasibility;
    let cop_ctx = StanceContext::new(model, ds)?;
    let margin = cfg.cop_margin + buffer;
    let stability_ineq = move |z: &DVector<f64>| {
        let mut r = Vec::with_capacity(free);
        for i in 1..=free {
            let state = cache_ref.eval(&cop_ctx, i - 1, &q_at(z, i));
            r.push(state.cop_margin - margin);
        }
        DVector::from_vec(r)
    };

    let col_ctx = StanceContext::new(model, ds)?;
    let d_min = cfg.d_min + buffer;
    let pairs = model.collision_pairs.len();
    let collision_ineq = move |z: &DVector<f64>| {
        let mut r = Vec::with_capacity(free * pairs);
        for i in 1..=free {
            let state = cache_ref.eval(&col_ctx, i - 1, &q_at(z, i));
            r.extend(state.pair_distances.iter().map(|d| d - d_min));
        }
        DVector::from_vec(r)
    };

    // Boxes: states inside slightly shrunk joint limits (so that exact
    // reintegration stays within the true limits), transitions inside the
    // quasi-static bound.
    let shrink = cfg.horizon as f64 * cfg.tolerances.feasibility;
    let mut lower = DVector::zeros(dim);
    let mut upper = DVector::zeros(dim);
    for i in 0..free {
        for k in 0..n {
            lower[i * n + k] = model.q_min[k] + shrink;
            upper[i * n + k] = model.q_max[k] - shrink;
            lower[free * n + i * n + k] = -cfg.u_max;
            upper[free * n + i * n + k] = cfg.u_max;
        }
    }

    // Start from the stationary segment: all states at q_start, zero
    // transitions. It is feasible whenever the start state is.
    let mut x0 = DVector::zeros(dim);
    for i in 0..free {
        for k in 0..n {
            x0[i * n + k] = q_start[k];
        }
    }

    let mut problem = NlpProblem::new(x0, cost)
        .with_equality(EqualityConstraint::new("transitions", transitions_eq))
        .with_equality(EqualityConstraint::new("foot-transform", tf_eq))
        .with_inequality(stability_ineq)
        .with_inequality(collision_ineq)
        .with_bounds(lower, upper)
        .with_penalty(cfg.penalty)
        .with_tolerances(cfg.tolerances);
    problem.max_inner_iterations = 80;
    let report = nlp_solve(&problem)?;

    // Reintegrate the states from the transitions so q[i] = q[i-1] + u[i-1]
    // holds bit-exactly on the emitted segment.
    let mut states = Vec::with_capacity(cfg.horizon);
    let mut transitions = Vec::with_capacity(free);
    states.push(q_start.clone());
    for j in 0..free {
        let u = u_at(&report.x, j);
        let next = states.last().expect("non-empty") + &u;
        transitions.push(u);
        states.push(next);
    }
    let cops = states
        .iter()
        .map(|q| model.modeled_cop(q))
        .collect::<Result<Vec<_>, _>>()?;
    let distance_after = (cops.last().expect("non-empty") - target).norm();

    Ok(SegmentResult {
        no_progress: distance_after >= distance_before,
        states,
        transitions,
        cops,
        distance_before,
        distance_after,
        report,
    })
}
