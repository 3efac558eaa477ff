use nalgebra::{DVector, Vector2, Vector3};

use super::*;
use crate::rng::Rng;
use crate::sampler::DoubleSupportConfig;

/// Minimal chain for kinematics-only checks: a fixed root plus two
/// revolute-z links offset one meter along x.
fn two_link_chain() -> RobotModel {
    let dummy_sensors = [
        Vector2::new(0.05, 0.03),
        Vector2::new(0.05, -0.03),
        Vector2::new(-0.05, -0.03),
        Vector2::new(-0.05, 0.03),
    ];
    let foot = FootLayout {
        link: 0,
        length: 0.16,
        width: 0.09,
        sensors: dummy_sensors,
        sensing_polygon: dummy_sensors.to_vec(),
    };
    let link = |name: &str, parent, joint, x, mass, q_index| Link {
        name: name.to_string(),
        parent,
        joint,
        origin: Pose::from_translation(x, 0.0, 0.0),
        mass,
        com: Vector3::zeros(),
        q_index,
    };
    RobotModel {
        name: "two_link".to_string(),
        links: vec![
            link("root", None, JointKind::Fixed, 0.0, 1.0, None),
            link(
                "a",
                Some(0),
                JointKind::Revolute { axis: Vector3::z() },
                1.0,
                1.0,
                Some(0),
            ),
            link(
                "b",
                Some(1),
                JointKind::Revolute { axis: Vector3::z() },
                1.0,
                1.0,
                Some(1),
            ),
        ],
        q_min: DVector::from_vec(vec![-3.0, -3.0]),
        q_max: DVector::from_vec(vec![3.0, 3.0]),
        capsules: vec![],
        collision_pairs: vec![],
        left_foot: foot.clone(),
        right_foot: foot,
        total_mass: 3.0,
        gravity: 9.81,
    }
}

/// Mirror-symmetric stance: a lateral sway by `roll` (ankle/hip roll
/// parallelogram) plus a squat by `bend` (zero-sum pitch chain). The
/// right leg runs the mirrored values in reversed traversal order, which
/// for this chain is plain negation-reversal of the left values.
fn mirror_q(roll: f64, bend: f64) -> DVector<f64> {
    let left = [roll, bend, -2.0 * bend, bend, -roll, 0.0];
    let mut q = left.to_vec();
    q.extend(left.iter().rev().map(|v| -v));
    DVector::from_vec(q)
}

#[test]
fn chain_of_unit_translations() {
    let m = two_link_chain();
    let q = DVector::zeros(2);
    let poses = m.forward_kinematics(&q).unwrap();
    assert!((poses[2].translation - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-15);
}

#[test]
fn quarter_turn_rotates_child_onto_y() {
    let m = two_link_chain();
    // Joint 0 sits at (1,0,0); a quarter turn about z moves the child's
    // unit x-offset onto the y direction.
    let q = DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0]);
    let poses = m.forward_kinematics(&q).unwrap();
    assert!((poses[2].translation - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
}

#[test]
fn pose_inverse_composition_is_identity() {
    let m = RobotModel::nao_like();
    let mut rng = Rng::new(11);
    for _ in 0..10 {
        let q = random_q(&m, &mut rng);
        for pose in m.forward_kinematics(&q).unwrap() {
            let id = pose.compose(&pose.inverse());
            assert!(id.translation.norm() < 1e-12);
            assert!(id.orthonormality_error() < 1e-12);
        }
    }
}

#[test]
fn dimension_mismatch_is_an_error() {
    let m = RobotModel::nao_like();
    let q = DVector::zeros(7);
    assert!(matches!(
        m.forward_kinematics(&q),
        Err(ModelError::DimensionMismatch {
            expected: 12,
            got: 7
        })
    ));
}

#[test]
fn equal_mass_midpoint_com() {
    // Equal masses with world CoMs at (0,0,0) and (1,0,0).
    let mut m = two_link_chain();
    m.links[0].mass = 1.0;
    m.links[1].mass = 1.0;
    m.links[2].mass = 0.0;
    m.total_mass = 2.0;
    let com = m.modeled_com(&DVector::zeros(2)).unwrap();
    assert!((com - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
}

#[test]
fn single_link_com_is_that_link() {
    let mut m = two_link_chain();
    m.links[1].mass = 0.0;
    m.links[2].mass = 0.0;
    m.total_mass = 1.0;
    m.links[0].com = Vector3::new(0.2, -0.1, 0.05);
    let com = m.modeled_com(&DVector::zeros(2)).unwrap();
    assert!((com - Vector3::new(0.2, -0.1, 0.05)).norm() < 1e-15);
}

fn random_q(m: &RobotModel, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(m.nq(), |i, _| rng.uniform_in(m.q_min[i], m.q_max[i]))
}

// Independent duplicate of the mass-weighted sum, evaluated directly from
// the FK poses.
#[test]
fn com_matches_brute_force_sum() {
    let m = RobotModel::nao_like();
    let mut rng = Rng::new(23);
    for _ in 0..20 {
        let q = random_q(&m, &mut rng);
        let com = m.modeled_com(&q).unwrap();
        let poses = m.forward_kinematics(&q).unwrap();
        let mut acc = Vector3::zeros();
        let mut mass = 0.0;
        for (link, pose) in m.links.iter().zip(&poses) {
            acc += (pose.rotation * link.com + pose.translation) * link.mass;
            mass += link.mass;
        }
        assert!((com - acc / mass).norm() < 1e-12);
    }
}

#[test]
fn cop_is_the_ground_projection() {
    let m = RobotModel::nao_like();
    let q = DVector::zeros(12);
    let com = m.modeled_com(&q).unwrap();
    let cop = m.modeled_cop(&q).unwrap();
    assert_eq!(cop.x, com.x);
    assert_eq!(cop.y, com.y);
}

#[test]
fn symmetric_stance_cop_on_symmetry_axis() {
    let m = RobotModel::nao_like();
    // Pure squat: zero roll keeps the mass distribution symmetric.
    let q = mirror_q(0.0, 0.15);
    let tf = m.foot_transform(&q).unwrap();
    let cop = m.modeled_cop(&q).unwrap();
    // The symmetry plane lies halfway between the soles.
    assert!(
        (cop.y - tf.translation.y / 2.0).abs() < 1e-9,
        "cop.y {} vs plane {}",
        cop.y,
        tf.translation.y / 2.0
    );
}

#[test]
fn mass_doubling_leaves_com_fixed() {
    let m = RobotModel::nao_like();
    let mut doubled = m.clone();
    for link in &mut doubled.links {
        link.mass *= 2.0;
    }
    doubled.total_mass *= 2.0;
    let q = mirror_q(0.02, 0.2);
    let a = m.modeled_com(&q).unwrap();
    let b = doubled.modeled_com(&q).unwrap();
    assert!((a - b).norm() < 1e-12);
}

#[test]
fn mirror_symmetric_q_gives_lateral_translation_zero_yaw() {
    let m = RobotModel::nao_like();
    for (roll, bend) in [(0.0, 0.0), (0.1, 0.2), (-0.2, -0.15), (0.25, 0.3)] {
        let q = mirror_q(roll, bend);
        let tf = m.foot_transform(&q).unwrap();
        assert!(tf.translation.x.abs() < 1e-9, "tx = {}", tf.translation.x);
        assert!(tf.translation.z.abs() < 1e-9, "tz = {}", tf.translation.z);
        assert!(tf.yaw().abs() < 1e-9, "yaw = {}", tf.yaw());
        assert!(tf.translation.y < 0.0, "right foot sits at negative y");
    }
}

#[test]
fn left_foot_in_left_frame_is_identity() {
    let m = RobotModel::nao_like();
    let q = mirror_q(0.1, 0.1);
    let poses = m.forward_kinematics(&q).unwrap();
    let left = &poses[m.left_foot.link];
    let rel = left.inverse().compose(left);
    assert!(rel.translation.norm() < 1e-15);
    assert!((rel.rotation - nalgebra::Matrix3::identity()).amax() < 1e-15);
}

#[test]
fn zero_q_recovers_the_declared_stance() {
    let m = RobotModel::nao_like();
    let tf = m.foot_transform(&DVector::zeros(12)).unwrap();
    let (dx, dy, dtheta) = DoubleSupportConfig::params_from_pose(&tf);
    assert!(dx.abs() < 1e-12);
    assert!((dy - 0.10).abs() < 1e-12);
    assert!(dtheta.abs() < 1e-12);
}

#[test]
fn aligned_feet_hull_is_the_spanning_rectangle() {
    let m = RobotModel::nao_like();
    let spacing = 0.14;
    let ds = DoubleSupportConfig::new(0.0, spacing, 0.0, &m).unwrap();
    let hull = m.sensing_polygon(&ds).unwrap();
    assert_eq!(hull.len(), 4);
    let xs: Vec<f64> = hull.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = hull.iter().map(|p| p.y).collect();
    let (xmin, xmax) = (-0.07, 0.07);
    let (ymin, ymax) = (-spacing - 0.03, 0.03);
    for x in &xs {
        assert!((x - xmin).abs() < 1e-12 || (x - xmax).abs() < 1e-12);
    }
    for y in &ys {
        assert!((y - ymin).abs() < 1e-12 || (y - ymax).abs() < 1e-12);
    }
}

#[test]
fn every_sensor_point_inside_hull() {
    let m = RobotModel::nao_like();
    let mut rng = Rng::new(77);
    for _ in 0..20 {
        let Ok(ds) = DoubleSupportConfig::new(
            rng.uniform_in(-0.04, 0.08),
            rng.uniform_in(0.10, 0.17),
            rng.uniform_in(-0.35, 0.35),
            &m,
        ) else {
            continue;
        };
        let hull = m.sensing_polygon(&ds).unwrap();
        for p in &ds.world_sensors {
            assert!(contains_with_margin(&hull, p, -1e-12));
        }
    }
}

// Second hull implementation (gift wrapping) as an independent oracle.
fn gift_wrap(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let start = points
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.x, a.1.y).partial_cmp(&(b.1.x, b.1.y)).unwrap())
        .unwrap()
        .0;
    let mut hull = vec![points[start]];
    let mut current = start;
    loop {
        let mut next = (current + 1) % points.len();
        for (i, p) in points.iter().enumerate() {
            if i == current {
                continue;
            }
            let a = points[next] - points[current];
            let b = p - points[current];
            let cross = a.x * b.y - a.y * b.x;
            if cross < 0.0 || (cross == 0.0 && b.norm() > a.norm()) {
                next = i;
            }
        }
        if next == start {
            break;
        }
        hull.push(points[next]);
        current = next;
    }
    hull
}

#[test]
fn rotated_foot_hull_matches_gift_wrapping() {
    let m = RobotModel::nao_like();
    let ds = DoubleSupportConfig::new(0.02, 0.13, 0.3, &m).unwrap();
    let hull = m.sensing_polygon(&ds).unwrap();
    let mut wrapped = gift_wrap(&ds.world_sensors);
    assert_eq!(hull.len(), wrapped.len());
    // Rotate the wrapped hull so both start at the same vertex.
    let offset = wrapped
        .iter()
        .position(|p| (p - hull[0]).norm() < 1e-12)
        .expect("hulls share vertices");
    wrapped.rotate_left(offset);
    for (a, b) in hull.iter().zip(&wrapped) {
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn sensing_polygon_is_convex_and_agrees_with_half_planes() {
    let m = RobotModel::nao_like();
    let ds = DoubleSupportConfig::new(0.04, 0.15, -0.2, &m).unwrap();
    let hull = m.sensing_polygon(&ds).unwrap();
    assert!(signed_area_doubled(&hull) > 0.0);
    let planes = inward_half_planes(&hull);
    let mut rng = Rng::new(5);
    for _ in 0..300 {
        let p = Vector2::new(rng.uniform_in(-0.2, 0.2), rng.uniform_in(-0.3, 0.1));
        let inside_planes = planes.iter().all(|(n, d)| n.dot(&p) - d >= 0.0);
        assert_eq!(inside_planes, contains_with_margin(&hull, &p, 0.0));
    }
}

#[test]
fn fk_orthonormality_over_long_chains() {
    let m = RobotModel::nao_like();
    let mut rng = Rng::new(41);
    let mut acc = Pose::identity();
    for i in 0..10_000 {
        let q = random_q(&m, &mut rng);
        let poses = m.forward_kinematics(&q).unwrap();
        acc = acc.compose(&poses[m.right_foot.link]);
        if i % 128 == 127 {
            acc = acc.renormalized();
        }
    }
    assert!(acc.orthonormality_error() < 1e-9);
}

#[test]
fn default_model_file_is_consistent() {
    let m = RobotModel::nao_like();
    assert_eq!(m.nq(), 12);
    assert_eq!(m.links.len(), 14);
    assert!((m.total_mass - 5.5).abs() < 1e-12);
    let mass_sum: f64 = m.links.iter().map(|l| l.mass).sum();
    assert!((mass_sum - m.total_mass).abs() < 1e-9);
    assert!(m.q_min.iter().zip(m.q_max.iter()).all(|(lo, hi)| lo < hi));
    assert!(m.capsules.iter().all(|c| c.capsule.radius > 0.0));
    assert_eq!(m.collision_pairs.len(), 5);
    // Feet clear of each other at the default stance.
    let poses = m.forward_kinematics(&DVector::zeros(12)).unwrap();
    assert!(m.min_pair_distance(&poses) > 0.005);
}

#[test]
fn rejects_wrong_schema_and_bad_mass() {
    let bad_schema = DEFAULT_MODEL_TOML.replace("footcal-robot/1", "footcal-robot/99");
    assert!(RobotFile::parse(&bad_schema).is_err());
    let bad_mass = DEFAULT_MODEL_TOML.replace("total_mass = 5.5", "total_mass = 6.0");
    let parsed = RobotFile::parse(&bad_mass).unwrap();
    assert!(matches!(
        parsed.into_model(),
        Err(ModelError::Validation(_))
    ));
}
