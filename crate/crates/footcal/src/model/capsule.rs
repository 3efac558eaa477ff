//! Capsule collision geometry.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::Pose;

/// A capsule: the set of points within `radius` of the segment p0-p1,
/// expressed in its owning link's frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub p0: [f64; 3],
    pub p1: [f64; 3],
    pub radius: f64,
}

impl Capsule {
    pub fn endpoints(&self) -> (Vector3<f64>, Vector3<f64>) {
        (Vector3::from(self.p0), Vector3::from(self.p1))
    }
}

/// Signed distance between two capsules under the given link poses:
/// the minimum distance R between the world-frame centerlines minus the
/// radius sum. Negative values mean penetration.
///
/// The segments are put in a canonical order before the closest-point
/// pass, so swapping the arguments returns the same bits.
pub fn capsule_distance(c1: &Capsule, pose1: &Pose, c2: &Capsule, pose2: &Pose) -> f64 {
    let (a0, a1) = c1.endpoints();
    let (b0, b1) = c2.endpoints();
    let mut seg_a = (pose1.transform_point(&a0), pose1.transform_point(&a1));
    let mut seg_b = (pose2.transform_point(&b0), pose2.transform_point(&b1));
    let key = |s: &(Vector3<f64>, Vector3<f64>)| [s.0.x, s.0.y, s.0.z, s.1.x, s.1.y, s.1.z];
    if key(&seg_b) < key(&seg_a) {
        std::mem::swap(&mut seg_a, &mut seg_b);
    }
    let r = segment_segment_distance(&seg_a.0, &seg_a.1, &seg_b.0, &seg_b.1);
    r - (c1.radius + c2.radius)
}

/// Minimum distance between segments p1-q1 and p2-q2 (Ericson's closest
/// point algorithm, robust to degenerate segments).
pub fn segment_segment_distance(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);

    let (s, t);
    if a <= f64::EPSILON && e <= f64::EPSILON {
        return (p1 - p2).norm();
    }
    if a <= f64::EPSILON {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= f64::EPSILON {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s_tmp = if denom != 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t_tmp = (b * s_tmp + f) / e;
            if t_tmp < 0.0 {
                t_tmp = 0.0;
                s_tmp = (-c / a).clamp(0.0, 1.0);
            } else if t_tmp > 1.0 {
                t_tmp = 1.0;
                s_tmp = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s_tmp;
            t = t_tmp;
        }
    }
    let closest1 = p1 + d1 * s;
    let closest2 = p2 + d2 * t;
    (closest1 - closest2).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn cap(p0: [f64; 3], p1: [f64; 3], radius: f64) -> Capsule {
        Capsule { p0, p1, radius }
    }

    #[test]
    fn parallel_offset_segments() {
        let c1 = cap([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.03);
        let c2 = cap([0.0, 0.10, 0.0], [1.0, 0.10, 0.0], 0.02);
        let d = capsule_distance(&c1, &Pose::identity(), &c2, &Pose::identity());
        assert!((d - 0.05).abs() < 1e-12);
    }

    #[test]
    fn penetration_is_negative() {
        let c1 = cap([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.03);
        let c2 = cap([0.0, 0.04, 0.0], [1.0, 0.04, 0.0], 0.02);
        let d = capsule_distance(&c1, &Pose::identity(), &c2, &Pose::identity());
        assert!((d + 0.01).abs() < 1e-12);
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut rng = Rng::new(5);
        for _ in 0..50 {
            let mut p = || {
                [
                    rng.uniform_in(-1.0, 1.0),
                    rng.uniform_in(-1.0, 1.0),
                    rng.uniform_in(-1.0, 1.0),
                ]
            };
            let c1 = cap(p(), p(), 0.05);
            let c2 = cap(p(), p(), 0.07);
            let pose1 = Pose::from_axis_angle(&Vector3::new(p()[0], p()[1], p()[2]), 0.8);
            let pose2 = Pose::from_translation(0.1, -0.2, 0.3);
            let d12 = capsule_distance(&c1, &pose1, &c2, &pose2);
            let d21 = capsule_distance(&c2, &pose2, &c1, &pose1);
            assert_eq!(d12, d21);
        }
    }

    #[test]
    fn rigid_transform_invariance() {
        let c1 = cap([0.1, 0.0, 0.2], [0.5, 0.3, 0.2], 0.04);
        let c2 = cap([-0.2, 0.4, 0.0], [0.0, 0.8, 0.5], 0.06);
        let base = capsule_distance(&c1, &Pose::identity(), &c2, &Pose::identity());
        let rigid = Pose::from_axis_angle(&Vector3::new(1.0, 0.3, -0.2), 0.9)
            .compose(&Pose::from_translation(0.5, -1.0, 2.0));
        let moved = capsule_distance(&c1, &rigid, &c2, &rigid);
        assert!((base - moved).abs() < 1e-9);
    }

    // Dense-sampling oracle: the segment-segment distance must match the
    // minimum over a fine grid of point pairs along both centerlines.
    #[test]
    fn matches_dense_sampling() {
        let mut rng = Rng::new(17);
        for _ in 0..20 {
            let mut p = || {
                Vector3::new(
                    rng.uniform_in(-1.0, 1.0),
                    rng.uniform_in(-1.0, 1.0),
                    rng.uniform_in(-1.0, 1.0),
                )
            };
            let (p1, q1, p2, q2) = (p(), p(), p(), p());
            let exact = segment_segment_distance(&p1, &q1, &p2, &q2);
            let mut best = f64::INFINITY;
            let n = 100;
            for i in 0..=n {
                let a = p1 + (q1 - p1) * (i as f64 / n as f64);
                for j in 0..=n {
                    let b = p2 + (q2 - p2) * (j as f64 / n as f64);
                    best = best.min((a - b).norm());
                }
            }
            assert!(
                (exact - best).abs() < 1e-3,
                "exact {exact} vs sampled {best}"
            );
            assert!(exact <= best + 1e-12, "exact distance is a lower bound");
        }
    }
}
