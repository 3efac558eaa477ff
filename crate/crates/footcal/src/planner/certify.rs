//! Independent trajectory certification: re-evaluates every constraint
//! on every emitted state directly from the model, without touching the
//! solver. A trajectory only counts as feasible when this checker says
//! so.

use nalgebra::DVector;

use super::{PlannerConfig, PlannerError, StanceContext, SwitchReason, Trajectory};
use crate::model::RobotModel;
use crate::sampler::DoubleSupportConfig;

/// Worst-case constraint numbers for one state.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct StateResiduals {
    /// Inward distance of the CoP from the sensing polygon boundary, m.
    pub cop_inside_margin: f64,
    /// Smallest capsule-pair distance, m.
    pub min_capsule_distance: f64,
    /// Largest foot-transform residual component.
    pub tf_residual: f64,
    /// Worst joint-limit violation (0 when inside the limits).
    pub limit_violation: f64,
    /// Largest transition-identity residual against the stored states.
    pub transition_residual: f64,
}

/// Certification verdict for a full trajectory.
#[derive(Debug, Clone)]
pub struct CertificationReport {
    pub per_state: Vec<StateResiduals>,
    pub violations: Vec<String>,
    /// Landmark switches that fired neither rule disjunct (stall-guard
    /// advances).
    pub guard_switches: usize,
    pub ok: bool,
}

/// Re-evaluate all path constraints and the landmark-switch rule on an
/// emitted trajectory.
pub fn certify_trajectory(
    model: &RobotModel,
    ds: &DoubleSupportConfig,
    traj: &Trajectory,
    cfg: &PlannerConfig,
) -> Result<CertificationReport, PlannerError> {
    let ctx = StanceContext::new(model, ds)?;
    let mut report = CertificationReport {
        per_state: Vec::with_capacity(traj.states.len()),
        violations: Vec::new(),
        guard_switches: 0,
        ok: true,
    };
    let flag = |msg: String, violations: &mut Vec<String>| {
        violations.push(msg);
    };

    for (idx, q) in traj.states.iter().enumerate() {
        let poses = model.forward_kinematics(q)?;
        let cop = model.cop_from_poses(&poses);
        let cop_inside_margin = ctx.cop_inside_margin(&cop);
        let tf = ctx.tf_residual(&poses);
        let tf_residual = tf.iter().fold(0.0f64, |acc, r| acc.max(r.abs()));
        let min_capsule_distance = model.min_pair_distance(&poses);
        let mut limit_violation = 0.0f64;
        for k in 0..model.nq() {
            limit_violation = limit_violation
                .max(model.q_min[k] - q[k])
                .max(q[k] - model.q_max[k]);
        }
        let transition_residual = if idx == 0 {
            0.0
        } else {
            let expected: DVector<f64> = &traj.states[idx - 1] + &traj.transitions[idx - 1];
            (q - expected).amax()
        };

        if cop_inside_margin < cfg.cop_margin {
            flag(
                format!(
                    "state {idx}: CoP margin {cop_inside_margin:.5} below {:.5}",
                    cfg.cop_margin
                ),
                &mut report.violations,
            );
        }
        if min_capsule_distance < cfg.d_min {
            flag(
                format!(
                    "state {idx}: capsule distance {min_capsule_distance:.5} below {:.5}",
                    cfg.d_min
                ),
                &mut report.violations,
            );
        }
        if tf_residual > cfg.tf_tol {
            flag(
                format!("state {idx}: foot-transform residual {tf_residual:.3e}"),
                &mut report.violations,
            );
        }
        if limit_violation > 0.0 {
            flag(
                format!("state {idx}: joint limits violated by {limit_violation:.3e}"),
                &mut report.violations,
            );
        }
        if transition_residual != 0.0 {
            flag(
                format!("state {idx}: transition identity off by {transition_residual:.3e}"),
                &mut report.violations,
            );
        }
        report.per_state.push(StateResiduals {
            cop_inside_margin,
            min_capsule_distance,
            tf_residual,
            limit_violation,
            transition_residual,
        });
    }

    // Landmark switch rule, checked exhaustively on the log.
    for visit in &traj.visits {
        match visit.reason {
            SwitchReason::StallGuard => report.guard_switches += 1,
            _ => {
                let rule = visit.distance_after < cfg.arrival_radius
                    || visit.distance_before - visit.distance_after <= 0.0;
                if !rule {
                    flag(
                        format!(
                            "switch at step {} violates the rule: d_prev {:.5}, d {:.5}",
                            visit.step, visit.distance_before, visit.distance_after
                        ),
                        &mut report.violations,
                    );
                }
            }
        }
    }
    // Visited target indices must be monotone.
    if traj.visits.windows(2).any(|w| w[1].target <= w[0].target) {
        flag(
            "landmark visits are not strictly increasing".into(),
            &mut report.violations,
        );
    }

    report.ok = report.violations.is_empty();
    Ok(report)
}
