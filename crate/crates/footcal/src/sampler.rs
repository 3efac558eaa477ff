//! Double-support configuration sampling: discretized random stances,
//! pairwise configuration-distance filtering and foot collision checks.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::model::{convex_polygons_intersect, rectangle_corners, Pose, RobotModel};
use crate::rng::Rng;

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("sampler config: {0}")]
    InvalidConfig(String),
    #[error("feet overlap at (dx={dx}, dy={dy}, dtheta={dtheta})")]
    FeetOverlap { dx: f64, dy: f64, dtheta: f64 },
    #[error(
        "sampling stalled after {rejections} consecutive rejections; \
         lower the distance threshold ({threshold}) or widen the ranges"
    )]
    Stall { rejections: usize, threshold: f64 },
}

/// One double-support stance: the right foot pose relative to the left.
///
/// `dy` is the lateral separation between the sole centers; the right
/// sole sits at y = -dy in the left-sole frame (y points left).
#[derive(Debug, Clone)]
pub struct DoubleSupportConfig {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
    /// Derived stance transform T_0: right sole in the left-sole frame.
    pub right_in_left: Pose,
    /// Derived world-frame sensor positions, left cells 1-4 then right
    /// cells 1-4.
    pub world_sensors: [Vector2<f64>; 8],
}

impl DoubleSupportConfig {
    pub fn new(
        dx: f64,
        dy: f64,
        dtheta: f64,
        model: &RobotModel,
    ) -> Result<DoubleSupportConfig, SamplerError> {
        let mut pose = Pose::rot_z(dtheta);
        pose.translation = Vector3::new(dx, -dy, 0.0);
        let ds = DoubleSupportConfig {
            dx,
            dy,
            dtheta,
            world_sensors: model.world_sensor_positions(&pose),
            right_in_left: pose,
        };
        if feet_collide(&ds, model) {
            return Err(SamplerError::FeetOverlap { dx, dy, dtheta });
        }
        Ok(ds)
    }

    /// Recover the (dx, dy, dtheta) parameters from a stance transform.
    pub fn params_from_pose(pose: &Pose) -> (f64, f64, f64) {
        (pose.translation.x, -pose.translation.y, pose.yaw())
    }
}

/// Sampling ranges, discretization and the pairwise distance filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub dx_range: [f64; 2],
    pub dy_range: [f64; 2],
    pub dtheta_range: [f64; 2],
    /// Grid nodes per axis (dx, dy, dtheta).
    pub resolution: [usize; 3],
    /// Cartesian distance weight, 1/m.
    pub w_d: f64,
    /// Orientation distance weight, 1/rad.
    pub w_o: f64,
    /// Minimum pairwise configuration distance between accepted stances.
    pub threshold: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            dx_range: [-0.04, 0.08],
            dy_range: [0.10, 0.17],
            dtheta_range: [-0.35, 0.35],
            resolution: [9, 8, 8],
            w_d: 1.0,
            w_o: 0.1,
            threshold: 0.04,
            count: 5,
            seed: 1,
        }
    }
}

impl SamplerConfig {
    fn validate(&self) -> Result<(), SamplerError> {
        let invalid = |msg: &str| Err(SamplerError::InvalidConfig(msg.to_string()));
        for (name, [lo, hi]) in [
            ("dx_range", self.dx_range),
            ("dy_range", self.dy_range),
            ("dtheta_range", self.dtheta_range),
        ] {
            if lo >= hi {
                return Err(SamplerError::InvalidConfig(format!(
                    "{name} must satisfy min < max"
                )));
            }
        }
        if self.resolution.iter().any(|&r| r < 2) {
            return invalid("resolution must be at least 2 per axis");
        }
        if self.threshold <= 0.0 {
            return invalid("threshold must be positive");
        }
        if self.w_d < 0.0 || self.w_o < 0.0 || (self.w_d == 0.0 && self.w_o == 0.0) {
            return invalid("distance weights must be non-negative and not both zero");
        }
        if self.count == 0 {
            return invalid("count must be at least 1");
        }
        Ok(())
    }
}

/// Weighted configuration distance between two stances: the Cartesian
/// distance of the relative foot offsets plus the weighted yaw gap.
pub fn config_distance(
    c1: &DoubleSupportConfig,
    c2: &DoubleSupportConfig,
    w_d: f64,
    w_o: f64,
) -> f64 {
    let ddx = c1.dx - c2.dx;
    let ddy = c1.dy - c2.dy;
    w_d * (ddx * ddx + ddy * ddy).sqrt() + w_o * (c1.dtheta - c2.dtheta).abs()
}

/// True when the two support rectangles intersect (shared boundary points
/// count as collision).
pub fn feet_collide(ds: &DoubleSupportConfig, model: &RobotModel) -> bool {
    let left = rectangle_corners(
        model.left_foot.length / 2.0,
        model.left_foot.width / 2.0,
        &Vector2::zeros(),
        0.0,
    );
    let right = rectangle_corners(
        model.right_foot.length / 2.0,
        model.right_foot.width / 2.0,
        &ds.right_in_left.translation.xy(),
        ds.right_in_left.yaw(),
    );
    convex_polygons_intersect(&left, &right)
}

/// Rejection-sample `count` stances on the discretization grid. Accepted
/// stances are collision-free and pairwise farther apart than the
/// threshold; the result is deterministic in the config seed.
pub fn sample_double_supports(
    cfg: &SamplerConfig,
    model: &RobotModel,
) -> Result<Vec<DoubleSupportConfig>, SamplerError> {
    cfg.validate()?;
    const MAX_CONSECUTIVE_REJECTIONS: usize = 10_000;

    let axis = |range: [f64; 2], res: usize, idx: usize| {
        range[0] + (range[1] - range[0]) * idx as f64 / (res - 1) as f64
    };
    let mut rng = Rng::new(cfg.seed);
    let mut accepted: Vec<DoubleSupportConfig> = Vec::with_capacity(cfg.count);
    let mut rejections = 0;
    while accepted.len() < cfg.count {
        if rejections >= MAX_CONSECUTIVE_REJECTIONS {
            return Err(SamplerError::Stall {
                rejections,
                threshold: cfg.threshold,
            });
        }
        let dx = axis(
            cfg.dx_range,
            cfg.resolution[0],
            rng.index(cfg.resolution[0]),
        );
        let dy = axis(
            cfg.dy_range,
            cfg.resolution[1],
            rng.index(cfg.resolution[1]),
        );
        let dtheta = axis(
            cfg.dtheta_range,
            cfg.resolution[2],
            rng.index(cfg.resolution[2]),
        );
        let candidate = match DoubleSupportConfig::new(dx, dy, dtheta, model) {
            Ok(ds) => ds,
            Err(_) => {
                rejections += 1;
                continue;
            }
        };
        let far_enough = accepted
            .iter()
            .all(|prev| config_distance(prev, &candidate, cfg.w_d, cfg.w_o) > cfg.threshold);
        if !far_enough {
            rejections += 1;
            continue;
        }
        accepted.push(candidate);
        rejections = 0;
    }
    Ok(accepted)
}
