//! Kinematic humanoid model: forward kinematics, center of mass, capsule
//! collision geometry, foot frames and sensing polygons. Everything the
//! pipeline calls a "modeled" reference comes from here.
//!
//! The robot is a kinematic tree rooted at the left sole, which is
//! anchored flat on the ground plane z = 0. Joint values are ordered by
//! link declaration order, left leg from the ankle up, then the right leg
//! from the hip down (q_0..q_11 for the default biped).

mod capsule;
mod file;
mod polygon;
mod pose;

pub use capsule::{capsule_distance, segment_segment_distance, Capsule};
pub use file::RobotFile;
pub use polygon::{
    contains_with_margin, convex_hull, convex_polygons_intersect, inside_margin,
    inward_half_planes, rectangle_corners, signed_area_doubled, PolygonError,
};
pub use pose::Pose;

use nalgebra::{DVector, Vector2, Vector3};

use crate::sampler::DoubleSupportConfig;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("joint vector has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model file: {0}")]
    File(String),
    #[error("model validation: {0}")]
    Validation(String),
    #[error(transparent)]
    Polygon(#[from] PolygonError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum JointKind {
    Fixed,
    Revolute { axis: Vector3<f64> },
}

#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    pub joint: JointKind,
    /// Fixed transform from the parent frame to this link's joint frame.
    pub origin: Pose,
    pub mass: f64,
    /// Center of mass in the link frame.
    pub com: Vector3<f64>,
    /// Index into the joint vector for revolute links.
    pub q_index: Option<usize>,
}

/// Which foot a quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];
}

/// Sensor geometry of one foot, in the sole frame (x forward, y left,
/// origin on the ground under the sole center).
#[derive(Debug, Clone)]
pub struct FootLayout {
    pub link: usize,
    /// Foot length l along x.
    pub length: f64,
    pub width: f64,
    /// The four load-cell mounting points.
    pub sensors: [Vector2<f64>; 4],
    /// Valid CoP measurement region, a convex polygon contained in the
    /// support rectangle.
    pub sensing_polygon: Vec<Vector2<f64>>,
}

impl FootLayout {
    /// Support rectangle corners in the sole frame, CCW.
    pub fn support_corners(&self) -> [Vector2<f64>; 4] {
        rectangle_corners(self.length / 2.0, self.width / 2.0, &Vector2::zeros(), 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct NamedCapsule {
    pub name: String,
    pub link: usize,
    pub capsule: Capsule,
}

/// The kinematic model plus everything the calibration pipeline needs to
/// know about the feet. Immutable after load; all operations are pure.
#[derive(Debug, Clone)]
pub struct RobotModel {
    pub name: String,
    pub links: Vec<Link>,
    pub q_min: DVector<f64>,
    pub q_max: DVector<f64>,
    pub capsules: Vec<NamedCapsule>,
    /// Index pairs into `capsules` checked for collision.
    pub collision_pairs: Vec<(usize, usize)>,
    pub left_foot: FootLayout,
    pub right_foot: FootLayout,
    pub total_mass: f64,
    pub gravity: f64,
}

impl RobotModel {
    /// Number of actuated joints.
    pub fn nq(&self) -> usize {
        self.q_min.len()
    }

    /// Robot weight in newtons.
    pub fn weight(&self) -> f64 {
        self.total_mass * self.gravity
    }

    pub fn foot(&self, side: Side) -> &FootLayout {
        match side {
            Side::Left => &self.left_foot,
            Side::Right => &self.right_foot,
        }
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    /// World pose of every link. The root (left sole) is the world
    /// anchor: flat on the ground plane at the origin.
    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<Vec<Pose>, ModelError> {
        if q.len() != self.nq() {
            return Err(ModelError::DimensionMismatch {
                expected: self.nq(),
                got: q.len(),
            });
        }
        let mut poses: Vec<Pose> = Vec::with_capacity(self.links.len());
        for link in &self.links {
            let local = match &link.joint {
                JointKind::Fixed => link.origin,
                JointKind::Revolute { axis } => {
                    let angle = q[link.q_index.expect("revolute link has a q index")];
                    link.origin.compose(&Pose::from_axis_angle(axis, angle))
                }
            };
            let pose = match link.parent {
                None => local,
                Some(p) => poses[p].compose(&local),
            };
            poses.push(pose);
        }
        Ok(poses)
    }

    /// Mass-weighted average of the per-link world CoM positions.
    pub fn modeled_com(&self, q: &DVector<f64>) -> Result<Vector3<f64>, ModelError> {
        let poses = self.forward_kinematics(q)?;
        Ok(self.com_from_poses(&poses))
    }

    pub(crate) fn com_from_poses(&self, poses: &[Pose]) -> Vector3<f64> {
        let mut weighted = Vector3::zeros();
        for (link, pose) in self.links.iter().zip(poses) {
            weighted += pose.transform_point(&link.com) * link.mass;
        }
        weighted / self.total_mass
    }

    /// Ground projection of the modeled CoM: the quasi-static CoP.
    pub fn modeled_cop(&self, q: &DVector<f64>) -> Result<Vector2<f64>, ModelError> {
        let com = self.modeled_com(q)?;
        Ok(com.xy())
    }

    pub(crate) fn cop_from_poses(&self, poses: &[Pose]) -> Vector2<f64> {
        self.com_from_poses(poses).xy()
    }

    /// Pose of the right sole expressed in the left-sole frame; the
    /// planner holds this equal to the stance transform for every state.
    pub fn foot_transform(&self, q: &DVector<f64>) -> Result<Pose, ModelError> {
        let poses = self.forward_kinematics(q)?;
        Ok(self.foot_transform_from_poses(&poses))
    }

    pub(crate) fn foot_transform_from_poses(&self, poses: &[Pose]) -> Pose {
        poses[self.left_foot.link]
            .inverse()
            .compose(&poses[self.right_foot.link])
    }

    /// World-frame sensor positions for a stance: the left foot's four
    /// cells followed by the right foot's four, in cell order.
    pub fn world_sensor_positions(&self, right_in_left: &Pose) -> [Vector2<f64>; 8] {
        let mut out = [Vector2::zeros(); 8];
        for (i, s) in self.left_foot.sensors.iter().enumerate() {
            out[i] = *s;
        }
        for (i, s) in self.right_foot.sensors.iter().enumerate() {
            let world = right_in_left.transform_point(&Vector3::new(s.x, s.y, 0.0));
            out[4 + i] = world.xy();
        }
        out
    }

    /// Convex hull of all eight world-frame sensor points of a stance.
    pub fn sensing_polygon(
        &self,
        ds: &DoubleSupportConfig,
    ) -> Result<Vec<Vector2<f64>>, ModelError> {
        let points = self.world_sensor_positions(&ds.right_in_left);
        Ok(convex_hull(&points)?)
    }

    /// Smallest signed capsule-pair distance over all collision pairs.
    pub fn min_pair_distance(&self, poses: &[Pose]) -> f64 {
        let mut min = f64::INFINITY;
        for &(a, b) in &self.collision_pairs {
            let ca = &self.capsules[a];
            let cb = &self.capsules[b];
            let d = capsule_distance(&ca.capsule, &poses[ca.link], &cb.capsule, &poses[cb.link]);
            min = min.min(d);
        }
        min
    }

    /// Per-pair signed distances, in `collision_pairs` order.
    pub fn pair_distances(&self, poses: &[Pose]) -> Vec<f64> {
        self.collision_pairs
            .iter()
            .map(|&(a, b)| {
                let ca = &self.capsules[a];
                let cb = &self.capsules[b];
                capsule_distance(&ca.capsule, &poses[ca.link], &cb.capsule, &poses[cb.link])
            })
            .collect()
    }

    /// The default NAO-like biped shipped with the crate.
    pub fn nao_like() -> RobotModel {
        RobotFile::parse(DEFAULT_MODEL_TOML)
            .and_then(RobotFile::into_model)
            .expect("embedded default model is valid")
    }
}

/// Canonical NAO-like model description; also available on disk as
/// `models/nao_like.toml`.
pub const DEFAULT_MODEL_TOML: &str = include_str!("../../models/nao_like.toml");

#[cfg(test)]
mod tests;
