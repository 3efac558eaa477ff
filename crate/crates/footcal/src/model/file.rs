//! Robot model file: a TOML key-value tree describing links, joints,
//! limits, capsules and foot sensor geometry. `models/nao_like.toml` is
//! the canonical example of the schema.

use nalgebra::{DVector, Vector2, Vector3};
use serde::Deserialize;

use super::{
    contains_with_margin, convex_hull, Capsule, FootLayout, JointKind, Link, ModelError,
    NamedCapsule, Pose, RobotModel,
};

pub const ROBOT_SCHEMA: &str = "footcal-robot/1";

/// On-disk representation; call [`RobotFile::into_model`] to validate and
/// build the runtime [`RobotModel`].
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotFile {
    pub schema: String,
    pub name: String,
    pub gravity: f64,
    pub total_mass: f64,
    pub links: Vec<LinkEntry>,
    pub capsules: Vec<CapsuleEntry>,
    pub collision: CollisionEntry,
    pub feet: FeetEntry,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEntry {
    pub name: String,
    #[serde(default)]
    pub parent: Option<String>,
    pub joint: String,
    #[serde(default)]
    pub axis: Option<[f64; 3]>,
    #[serde(default)]
    pub limits: Option<[f64; 2]>,
    #[serde(default = "zero3")]
    pub origin_xyz: [f64; 3],
    #[serde(default = "zero3")]
    pub origin_rpy: [f64; 3],
    pub mass: f64,
    #[serde(default = "zero3")]
    pub com: [f64; 3],
}

fn zero3() -> [f64; 3] {
    [0.0; 3]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsuleEntry {
    pub name: String,
    pub link: String,
    pub p0: [f64; 3],
    pub p1: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionEntry {
    pub pairs: Vec<[String; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeetEntry {
    pub left: FootEntry,
    pub right: FootEntry,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FootEntry {
    pub link: String,
    pub length: f64,
    pub width: f64,
    pub sensors: Vec<[f64; 2]>,
    pub sensing_polygon: Vec<[f64; 2]>,
}

impl RobotFile {
    pub fn parse(text: &str) -> Result<RobotFile, ModelError> {
        let file: RobotFile = toml::from_str(text).map_err(|e| ModelError::File(e.to_string()))?;
        if file.schema != ROBOT_SCHEMA {
            return Err(ModelError::File(format!(
                "unknown schema `{}`, expected `{ROBOT_SCHEMA}`",
                file.schema
            )));
        }
        Ok(file)
    }

    pub fn load(path: &std::path::Path) -> Result<RobotModel, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::File(format!("{}: {e}", path.display())))?;
        RobotFile::parse(&text)?.into_model()
    }

    pub fn into_model(self) -> Result<RobotModel, ModelError> {
        let invalid = |msg: String| Err(ModelError::Validation(msg));

        // Links: parents must precede children; exactly one root.
        let mut links = Vec::with_capacity(self.links.len());
        let mut q_min = Vec::new();
        let mut q_max = Vec::new();
        for entry in &self.links {
            let parent = match &entry.parent {
                None => None,
                Some(p) => {
                    let idx = links
                        .iter()
                        .position(|l: &Link| l.name == *p)
                        .ok_or_else(|| {
                            ModelError::Validation(format!(
                                "link `{}`: parent `{p}` not declared earlier",
                                entry.name
                            ))
                        })?;
                    Some(idx)
                }
            };
            let joint = match entry.joint.as_str() {
                "fixed" => JointKind::Fixed,
                "revolute" => {
                    let axis = entry.axis.ok_or_else(|| {
                        ModelError::Validation(format!(
                            "revolute link `{}` needs an axis",
                            entry.name
                        ))
                    })?;
                    let axis = Vector3::from(axis);
                    if axis.norm() < 1e-9 {
                        return invalid(format!("link `{}`: zero joint axis", entry.name));
                    }
                    JointKind::Revolute {
                        axis: axis.normalize(),
                    }
                }
                other => {
                    return invalid(format!(
                        "link `{}`: unknown joint kind `{other}`",
                        entry.name
                    ))
                }
            };
            let q_index = match &joint {
                JointKind::Fixed => None,
                JointKind::Revolute { .. } => {
                    let [lo, hi] = entry.limits.ok_or_else(|| {
                        ModelError::Validation(format!(
                            "revolute link `{}` needs limits",
                            entry.name
                        ))
                    })?;
                    if lo >= hi {
                        return invalid(format!(
                            "link `{}`: joint limits must satisfy min < max",
                            entry.name
                        ));
                    }
                    q_min.push(lo);
                    q_max.push(hi);
                    Some(q_min.len() - 1)
                }
            };
            if entry.mass < 0.0 {
                return invalid(format!("link `{}`: negative mass", entry.name));
            }
            let [roll, pitch, yaw] = entry.origin_rpy;
            let rotation = Pose::from_axis_angle(&Vector3::z(), yaw)
                .compose(&Pose::from_axis_angle(&Vector3::y(), pitch))
                .compose(&Pose::from_axis_angle(&Vector3::x(), roll));
            let origin = Pose {
                rotation: rotation.rotation,
                translation: Vector3::from(entry.origin_xyz),
            };
            links.push(Link {
                name: entry.name.clone(),
                parent,
                joint,
                origin,
                mass: entry.mass,
                com: Vector3::from(entry.com),
                q_index,
            });
        }
        let roots: Vec<_> = links.iter().filter(|l| l.parent.is_none()).collect();
        if roots.len() != 1 {
            return invalid(format!(
                "model must have exactly one root, found {}",
                roots.len()
            ));
        }

        let mass_sum: f64 = links.iter().map(|l| l.mass).sum();
        if (mass_sum - self.total_mass).abs() > 1e-9 {
            return invalid(format!(
                "total_mass {} does not match link mass sum {mass_sum}",
                self.total_mass
            ));
        }

        let capsules = self
            .capsules
            .iter()
            .map(|c| {
                if c.radius <= 0.0 {
                    return Err(ModelError::Validation(format!(
                        "capsule `{}`: radius must be positive",
                        c.name
                    )));
                }
                let link = links.iter().position(|l| l.name == c.link).ok_or_else(|| {
                    ModelError::Validation(format!(
                        "capsule `{}`: unknown link `{}`",
                        c.name, c.link
                    ))
                })?;
                Ok(NamedCapsule {
                    name: c.name.clone(),
                    link,
                    capsule: Capsule {
                        p0: c.p0,
                        p1: c.p1,
                        radius: c.radius,
                    },
                })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let collision_pairs = self
            .collision
            .pairs
            .iter()
            .map(|[a, b]| {
                let find = |name: &str| {
                    capsules.iter().position(|c| c.name == name).ok_or_else(|| {
                        ModelError::Validation(format!("collision pair: unknown capsule `{name}`"))
                    })
                };
                Ok::<(usize, usize), ModelError>((find(a)?, find(b)?))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let build_foot = |entry: &FootEntry| -> Result<FootLayout, ModelError> {
            let link = links
                .iter()
                .position(|l| l.name == entry.link)
                .ok_or_else(|| {
                    ModelError::Validation(format!("foot references unknown link `{}`", entry.link))
                })?;
            if entry.sensors.len() != 4 {
                return Err(ModelError::Validation(format!(
                    "foot `{}` must have exactly 4 sensors",
                    entry.link
                )));
            }
            let sensors: [Vector2<f64>; 4] =
                std::array::from_fn(|i| Vector2::from(entry.sensors[i]));
            // Convex quadrilateral: the hull of the four points keeps all
            // four as vertices.
            let hull = convex_hull(&sensors)?;
            if hull.len() != 4 {
                return Err(ModelError::Validation(format!(
                    "foot `{}`: sensor points must form a convex quadrilateral",
                    entry.link
                )));
            }
            if entry.sensing_polygon.len() < 3 {
                return Err(ModelError::Validation(format!(
                    "foot `{}`: sensing polygon needs at least 3 vertices",
                    entry.link
                )));
            }
            let sensing: Vec<Vector2<f64>> = entry
                .sensing_polygon
                .iter()
                .map(|p| Vector2::from(*p))
                .collect();
            let sensing = convex_hull(&sensing)?;
            let support = rectangle(entry.length, entry.width);
            for v in &sensing {
                if !contains_with_margin(&support, v, -1e-12) {
                    return Err(ModelError::Validation(format!(
                        "foot `{}`: sensing polygon vertex ({}, {}) outside the support rectangle",
                        entry.link, v.x, v.y
                    )));
                }
            }
            Ok(FootLayout {
                link,
                length: entry.length,
                width: entry.width,
                sensors,
                sensing_polygon: sensing,
            })
        };
        let left_foot = build_foot(&self.feet.left)?;
        let right_foot = build_foot(&self.feet.right)?;
        if links[left_foot.link].parent.is_some() {
            return invalid("the left sole must be the kinematic root".to_string());
        }

        Ok(RobotModel {
            name: self.name,
            links,
            q_min: DVector::from_vec(q_min),
            q_max: DVector::from_vec(q_max),
            capsules,
            collision_pairs,
            left_foot,
            right_foot,
            total_mass: self.total_mass,
            gravity: self.gravity,
        })
    }
}

fn rectangle(length: f64, width: f64) -> Vec<Vector2<f64>> {
    super::rectangle_corners(length / 2.0, width / 2.0, &Vector2::zeros(), 0.0).to_vec()
}
