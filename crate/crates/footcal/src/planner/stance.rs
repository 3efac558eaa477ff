//! Initial stance reaching: find a feasible joint configuration for a
//! sampled double support before trajectory planning starts.

use nalgebra::DVector;

use super::{PlannerConfig, PlannerError, StanceContext};
use crate::model::RobotModel;
use crate::numopt::{nlp_solve, EqualityConstraint, NlpProblem, Termination};
use crate::sampler::DoubleSupportConfig;

/// Solve for a joint vector that realizes the stance transform while
/// keeping the CoP inside the sensing polygon, the legs collision-free
/// and the joints within limits. The objective keeps the configuration
/// close to the neutral posture.
pub fn reach_stance(
    model: &RobotModel,
    ds: &DoubleSupportConfig,
    cfg: &PlannerConfig,
) -> Result<DVector<f64>, PlannerError> {
    cfg.validate()?;
    let ctx = StanceContext::new(model, ds)?;
    let n = model.nq();

    // The neutral posture with the right hip yaw preloaded toward the
    // stance yaw starts the solve in the right basin.
    let mut x0 = DVector::zeros(n);
    if let Some(idx) = model
        .links
        .iter()
        .find(|l| l.name == "r_hip_yaw")
        .and_then(|l| l.q_index)
    {
        x0[idx] = ds.dtheta;
    }
    let nominal = x0.clone();

    // Joint boxes shrunk by the feasibility tolerance so downstream
    // integration arithmetic cannot leave the true limits.
    let shrink = cfg.horizon as f64 * cfg.tolerances.feasibility;
    let lower = DVector::from_fn(n, |i, _| model.q_min[i] + shrink);
    let upper = DVector::from_fn(n, |i, _| model.q_max[i] - shrink);

    let posture = move |q: &DVector<f64>| q - &nominal;
    let tf_ctx = StanceContext::new(model, ds)?;
    let tf_eq = move |q: &DVector<f64>| {
        let poses = tf_ctx
            .model
            .forward_kinematics(q)
            .expect("dimension fixed by construction");
        DVector::from_row_slice(&tf_ctx.tf_residual(&poses))
    };
    let buffer = 10.0 * cfg.tolerances.feasibility;
    let cop_ctx = StanceContext::new(model, ds)?;
    let margin = cfg.cop_margin + buffer;
    let cop_ineq = move |q: &DVector<f64>| {
        let poses = cop_ctx
            .model
            .forward_kinematics(q)
            .expect("dimension fixed");
        let cop = cop_ctx.model.cop_from_poses(&poses);
        DVector::from_vec(vec![cop_ctx.cop_inside_margin(&cop) - margin])
    };
    let d_min = cfg.d_min + buffer;
    let collision_ineq = move |q: &DVector<f64>| {
        let poses = model.forward_kinematics(q).expect("dimension fixed");
        let distances = model.pair_distances(&poses);
        DVector::from_iterator(distances.len(), distances.into_iter().map(|d| d - d_min))
    };

    let problem = NlpProblem::new(x0, posture)
        .with_equality(EqualityConstraint::new("foot-transform", tf_eq))
        .with_inequality(cop_ineq)
        .with_inequality(collision_ineq)
        .with_bounds(lower, upper)
        .with_penalty(cfg.penalty)
        .with_tolerances(cfg.tolerances);
    let report = nlp_solve(&problem)?;
    if report.termination == Termination::Stalled
        || report.max_constraint_violation > cfg.tolerances.feasibility
    {
        return Err(PlannerError::StanceUnreachable(format!(
            "(dx={}, dy={}, dtheta={}): residual {:.3e} after {} iterations",
            ds.dx, ds.dy, ds.dtheta, report.max_constraint_violation, report.iterations
        )));
    }

    // Independent re-check of what the solver claims.
    let q = report.x;
    let poses = ctx.model.forward_kinematics(&q)?;
    let tf = ctx.tf_residual(&poses);
    let worst_tf = tf.iter().fold(0.0f64, |acc, r| acc.max(r.abs()));
    if worst_tf > cfg.tf_tol {
        return Err(PlannerError::StanceUnreachable(format!(
            "foot-transform residual {worst_tf:.3e} above {:.1e}",
            cfg.tf_tol
        )));
    }
    Ok(q)
}
