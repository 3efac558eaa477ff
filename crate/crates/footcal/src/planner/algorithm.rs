//! The landmark-switching planning loop: drive the CoP to the nearest
//! landmark-polygon midpoint, then chase the four landmarks counter-
//! clockwise, replanning a short segment at a time and advancing the
//! target when the CoP arrives or stops making progress.

use nalgebra::{DVector, Vector2};

use super::{
    make_landmarks, plan_segment, LandmarkVisit, PlannerConfig, PlannerError, StepRecord,
    SwitchReason, Trajectory,
};
use crate::model::RobotModel;
use crate::sampler::DoubleSupportConfig;

/// Entry midpoint plus the four landmarks counter-clockwise from it.
fn target_sequence(
    model: &RobotModel,
    ds: &DoubleSupportConfig,
    initial_cop: &Vector2<f64>,
    inset_fraction: f64,
) -> Vec<Vector2<f64>> {
    let set = make_landmarks(model, ds, inset_fraction);
    let nearest_mid = (0..4)
        .min_by(|&a, &b| {
            let da = (set.midpoints[a] - initial_cop).norm();
            let db = (set.midpoints[b] - initial_cop).norm();
            da.partial_cmp(&db).expect("finite distances")
        })
        .expect("four midpoints");
    let mut targets = vec![set.midpoints[nearest_mid]];
    // Midpoint k sits between landmarks k and k+1; continue CCW.
    for step in 1..=4 {
        targets.push(set.landmarks[(nearest_mid + step) % 4]);
    }
    targets
}

/// Plan a full stance trajectory with the receding-horizon loop.
///
/// The landmark index advances when the post-segment distance d[s] drops
/// inside the arrival radius, or when it fails to decrease (an
/// unreachable landmark near a kinematic singularity; replanning from
/// the stuck state reproduces it exactly, so ties count as
/// non-decreasing). The distance baseline is re-initialized against the
/// new target after each switch. A per-landmark step budget remains as a
/// safety valve, and the total step budget marks the trajectory
/// incomplete when exhausted.
pub fn plan_trajectory(
    model: &RobotModel,
    ds: &DoubleSupportConfig,
    q_init: &DVector<f64>,
    cfg: &PlannerConfig,
) -> Result<Trajectory, PlannerError> {
    cfg.validate()?;
    let initial_cop = model.modeled_cop(q_init)?;
    let targets = target_sequence(model, ds, &initial_cop, cfg.landmark_inset);

    let mut traj = Trajectory {
        states: vec![q_init.clone()],
        transitions: Vec::new(),
        cops: vec![initial_cop],
        target_index: vec![0],
        steps: Vec::new(),
        visits: Vec::new(),
        targets: targets.clone(),
        complete: false,
    };

    let mut target_idx = 0usize;
    let mut step = 0usize;
    let mut steps_on_target = 0usize;
    let mut u_prev = DVector::zeros(model.nq());
    let mut distance = (initial_cop - targets[target_idx]).norm();

    while target_idx < targets.len() {
        if step >= cfg.max_steps {
            return Ok(traj); // incomplete
        }
        let q_current = traj.states.last().expect("non-empty").clone();
        let segment = plan_segment(model, ds, &q_current, &u_prev, &targets[target_idx], cfg)?;
        step += 1;
        steps_on_target += 1;

        // Append the segment (its first state duplicates the current one).
        for (i, q) in segment.states.iter().enumerate().skip(1) {
            traj.states.push(q.clone());
            traj.cops.push(segment.cops[i]);
            traj.target_index.push(target_idx);
            traj.transitions.push(segment.transitions[i - 1].clone());
        }
        u_prev = segment
            .transitions
            .last()
            .cloned()
            .unwrap_or_else(|| DVector::zeros(model.nq()));

        let d_prev = distance;
        let d_now = segment.distance_after;
        traj.steps.push(StepRecord {
            step,
            target: target_idx,
            distance_before: d_prev,
            distance_after: d_now,
            no_progress: segment.no_progress,
        });

        let reason = if d_now < cfg.arrival_radius {
            Some(SwitchReason::WithinRadius)
        } else if d_prev - d_now <= 0.0 {
            Some(SwitchReason::NonDecreasing)
        } else if steps_on_target >= cfg.max_steps_per_landmark {
            Some(SwitchReason::StallGuard)
        } else {
            None
        };
        match reason {
            Some(reason) => {
                traj.visits.push(LandmarkVisit {
                    step,
                    target: target_idx,
                    distance_before: d_prev,
                    distance_after: d_now,
                    reason,
                });
                target_idx += 1;
                steps_on_target = 0;
                if target_idx < targets.len() {
                    let cop = traj.cops.last().expect("non-empty");
                    distance = (cop - targets[target_idx]).norm();
                }
            }
            None => distance = d_now,
        }
    }
    traj.complete = true;
    Ok(traj)
}
