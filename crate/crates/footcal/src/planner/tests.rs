use nalgebra::{DVector, Vector2, Vector3};

use super::*;
use crate::model::{contains_with_margin, RobotModel};
use crate::sampler::DoubleSupportConfig;

fn model() -> RobotModel {
    RobotModel::nao_like()
}

#[test]
fn landmarks_inset_from_sensing_polygon_edges() {
    let m = model();
    let ds = DoubleSupportConfig::new(0.0, 0.14, 0.0, &m).unwrap();
    let set = make_landmarks(&m, &ds, 0.25);
    // Default feet: sensing polygon spans x in [-0.07, 0.07], foot length
    // 0.16, so the inset is 0.04 and landmarks sit at x = +-0.03 on each
    // foot's centerline.
    let expect = [
        Vector2::new(0.03, 0.0),
        Vector2::new(-0.03, 0.0),
        Vector2::new(-0.03, -0.14),
        Vector2::new(0.03, -0.14),
    ];
    for (lm, ex) in set.landmarks.iter().zip(&expect) {
        assert!((lm - ex).norm() < 1e-12, "landmark {lm:?} vs {ex:?}");
    }
}

#[test]
fn landmarks_for_full_length_sensing_polygon() {
    // A foot whose sensing polygon spans the whole 0.16 m length puts the
    // landmarks 0.04 m from the front and rear edges.
    let mut m = model();
    let span = [
        Vector2::new(0.08, 0.03),
        Vector2::new(0.08, -0.03),
        Vector2::new(-0.08, -0.03),
        Vector2::new(-0.08, 0.03),
    ];
    m.left_foot.sensors = span;
    m.left_foot.sensing_polygon = span.to_vec();
    m.right_foot.sensors = span;
    m.right_foot.sensing_polygon = span.to_vec();
    let ds = DoubleSupportConfig::new(0.0, 0.12, 0.0, &m).unwrap();
    let set = make_landmarks(&m, &ds, 0.25);
    assert!((set.landmarks[0] - Vector2::new(0.04, 0.0)).norm() < 1e-12);
    assert!((set.landmarks[1] - Vector2::new(-0.04, 0.0)).norm() < 1e-12);
}

#[test]
fn symmetric_stance_symmetric_landmarks() {
    let m = model();
    let spacing = 0.13;
    let ds = DoubleSupportConfig::new(0.0, spacing, 0.0, &m).unwrap();
    let set = make_landmarks(&m, &ds, 0.25);
    let axis = -spacing / 2.0;
    // Left-foot landmarks mirror the right-foot ones about the stance
    // axis.
    assert!((set.landmarks[0].y - axis) + (set.landmarks[3].y - axis) < 1e-9);
    assert!((set.landmarks[0].x - set.landmarks[3].x).abs() < 1e-9);
    assert!((set.landmarks[1].x - set.landmarks[2].x).abs() < 1e-9);
}

#[test]
fn rotated_foot_landmarks_rotate_rigidly() {
    let m = model();
    let ds = DoubleSupportConfig::new(0.03, 0.14, 0.3, &m).unwrap();
    let set = make_landmarks(&m, &ds, 0.25);
    // Right-foot landmarks are the foot-frame landmarks pushed through
    // the stance transform.
    let foot_front = Vector2::new(0.03, 0.0);
    let foot_rear = Vector2::new(-0.03, 0.0);
    let world = |p: Vector2<f64>| {
        ds.right_in_left
            .transform_point(&Vector3::new(p.x, p.y, 0.0))
            .xy()
    };
    assert!((set.landmarks[3] - world(foot_front)).norm() < 1e-12);
    assert!((set.landmarks[2] - world(foot_rear)).norm() < 1e-12);
}

#[test]
fn landmark_polygon_is_counter_clockwise() {
    let m = model();
    for (dx, dy, dth) in [(0.0, 0.12, 0.0), (0.05, 0.16, 0.3), (-0.02, 0.11, -0.25)] {
        let ds = DoubleSupportConfig::new(dx, dy, dth, &m).unwrap();
        let set = make_landmarks(&m, &ds, 0.25);
        assert!(crate::model::signed_area_doubled(&set.landmarks) > 0.0);
        // All landmarks inside the sensing polygon.
        let hull = m.sensing_polygon(&ds).unwrap();
        for lm in &set.landmarks {
            assert!(contains_with_margin(&hull, lm, 0.0), "landmark {lm:?}");
        }
    }
}

#[test]
fn reach_stance_round_trips_sampled_configs() {
    let m = model();
    let cfg = PlannerConfig::default();
    for (dx, dy, dth) in [(0.0, 0.10, 0.0), (0.02, 0.13, 0.175), (-0.04, 0.12, -0.25)] {
        let ds = DoubleSupportConfig::new(dx, dy, dth, &m).unwrap();
        let q = reach_stance(&m, &ds, &cfg).unwrap();
        let tf = m.foot_transform(&q).unwrap();
        let (rx, ry, rth) = DoubleSupportConfig::params_from_pose(&tf);
        assert!((rx - dx).abs() < 1e-5, "dx {rx} vs {dx}");
        assert!((ry - dy).abs() < 1e-5, "dy {ry} vs {dy}");
        assert!((rth - dth).abs() < 1e-5, "dtheta {rth} vs {dth}");
        // Feasibility of the reached stance.
        let poses = m.forward_kinematics(&q).unwrap();
        assert!(m.min_pair_distance(&poses) >= cfg.d_min);
        let hull = m.sensing_polygon(&ds).unwrap();
        let cop = m.modeled_cop(&q).unwrap();
        assert!(contains_with_margin(&hull, &cop, cfg.cop_margin));
    }
}

#[test]
fn segment_with_target_at_current_cop_stays_put() {
    let m = model();
    let cfg = PlannerConfig::default();
    let ds = DoubleSupportConfig::new(0.0, 0.12, 0.0, &m).unwrap();
    let q0 = reach_stance(&m, &ds, &cfg).unwrap();
    let cop0 = m.modeled_cop(&q0).unwrap();
    let u_prev = DVector::zeros(m.nq());
    let seg = plan_segment(&m, &ds, &q0, &u_prev, &cop0, &cfg).unwrap();
    for u in &seg.transitions {
        assert!(u.amax() < 1e-4, "transition magnitude {}", u.amax());
    }
    assert!(seg.report.cost < 1e-6, "cost {}", seg.report.cost);
}

#[test]
fn segment_constraints_hold_on_reevaluation() {
    let m = model();
    let cfg = PlannerConfig::default();
    let ds = DoubleSupportConfig::new(0.01, 0.12, 0.1, &m).unwrap();
    let q0 = reach_stance(&m, &ds, &cfg).unwrap();
    let cop0 = m.modeled_cop(&q0).unwrap();
    // Target ahead on the symmetry axis.
    let target = Vector2::new(cop0.x + 0.02, cop0.y);
    let u_prev = DVector::zeros(m.nq());
    let seg = plan_segment(&m, &ds, &q0, &u_prev, &target, &cfg).unwrap();
    assert!(!seg.no_progress, "segment should make progress");

    let ctx = StanceContext::new(&m, &ds).unwrap();
    let hull = m.sensing_polygon(&ds).unwrap();
    for (i, q) in seg.states.iter().enumerate() {
        let poses = m.forward_kinematics(q).unwrap();
        let tf = ctx.tf_residual(&poses);
        let worst = tf.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        assert!(worst < 1e-6, "state {i}: tf residual {worst:.3e}");
        assert!(m.min_pair_distance(&poses) > cfg.d_min - 1e-12);
        let cop = m.modeled_cop(q).unwrap();
        assert!(contains_with_margin(&hull, &cop, cfg.cop_margin - 1e-12));
        for k in 0..m.nq() {
            assert!(q[k] >= m.q_min[k] && q[k] <= m.q_max[k]);
        }
    }
    for (i, u) in seg.transitions.iter().enumerate() {
        let expected = &seg.states[i] + u;
        assert_eq!(expected, seg.states[i + 1], "transition identity");
        assert!(u.amax() <= cfg.u_max + 1e-12);
    }
}

fn plan_default_stance() -> (RobotModel, DoubleSupportConfig, PlannerConfig, Trajectory) {
    let m = model();
    let cfg = PlannerConfig::default();
    let ds = DoubleSupportConfig::new(0.02, 0.12, 0.1, &m).unwrap();
    let q0 = reach_stance(&m, &ds, &cfg).unwrap();
    let traj = plan_trajectory(&m, &ds, &q0, &cfg).unwrap();
    (m, ds, cfg, traj)
}

#[test]
fn trajectory_visits_all_landmarks_in_order() {
    let (_, _, _, traj) = plan_default_stance();
    assert!(traj.complete, "trajectory incomplete");
    assert_eq!(traj.visits.len(), traj.targets.len());
    for (i, visit) in traj.visits.iter().enumerate() {
        assert_eq!(visit.target, i, "monotone target order");
    }
    // Every switch satisfies the rule, none were stall-guard advances.
    for visit in &traj.visits {
        assert_ne!(visit.reason, SwitchReason::StallGuard);
        assert!(
            visit.distance_after < 0.005 || visit.distance_before - visit.distance_after <= 0.0
        );
    }
}

#[test]
fn trajectory_certifies_cleanly() {
    let (m, ds, cfg, traj) = plan_default_stance();
    let report = certify_trajectory(&m, &ds, &traj, &cfg).unwrap();
    assert!(report.ok, "violations: {:?}", report.violations);
    assert_eq!(report.guard_switches, 0);
    assert_eq!(report.per_state.len(), traj.states.len());
}

#[test]
fn trajectory_replay_is_deterministic() {
    let (_, _, _, a) = plan_default_stance();
    let (_, _, _, b) = plan_default_stance();
    assert_eq!(a.states.len(), b.states.len());
    for (qa, qb) in a.states.iter().zip(&b.states) {
        assert_eq!(qa, qb);
    }
}

#[test]
fn visited_targets_progress_counter_clockwise() {
    let (_, _, _, traj) = plan_default_stance();
    // Signed area of the polyline through the chased targets (midpoint +
    // four landmarks) is positive.
    assert!(crate::model::signed_area_doubled(&traj.targets[1..]) > 0.0);
}

#[test]
fn unreachable_stance_is_an_error() {
    let m = model();
    let cfg = PlannerConfig::default();
    // Separation beyond anything the legs can span.
    let ds = DoubleSupportConfig {
        dx: 0.0,
        dy: 0.5,
        dtheta: 0.0,
        right_in_left: {
            let mut p = crate::model::Pose::identity();
            p.translation = nalgebra::Vector3::new(0.0, -0.5, 0.0);
            p
        },
        world_sensors: m.world_sensor_positions(&{
            let mut p = crate::model::Pose::identity();
            p.translation = nalgebra::Vector3::new(0.0, -0.5, 0.0);
            p
        }),
    };
    assert!(matches!(
        reach_stance(&m, &ds, &cfg),
        Err(PlannerError::StanceUnreachable(_))
    ));
}

#[test]
fn unreachable_landmark_still_terminates() {
    let mut m = model();
    // Legs barely able to move: the lateral landmarks cannot be reached.
    for k in 0..m.nq() {
        m.q_min[k] = m.q_min[k].max(-0.06);
        m.q_max[k] = m.q_max[k].min(0.06);
    }
    let cfg = PlannerConfig {
        max_steps: 40,
        max_steps_per_landmark: 6,
        ..Default::default()
    };
    let ds = DoubleSupportConfig::new(0.0, 0.10, 0.0, &m).unwrap();
    let q0 = DVector::zeros(m.nq());
    let traj = plan_trajectory(&m, &ds, &q0, &cfg).unwrap();
    // Termination is the contract; completion is not.
    assert!(traj.steps.len() <= cfg.max_steps);
}
