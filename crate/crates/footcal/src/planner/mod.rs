//! Whole-body trajectory generation for one double support: CoP landmark
//! construction, direct-collocation segment optimization, and the
//! receding-horizon landmark-switching loop that sweeps the modeled CoP
//! counter-clockwise around the sensing polygon.

mod algorithm;
mod certify;
mod segment;
mod stance;

pub use algorithm::plan_trajectory;
pub use certify::{certify_trajectory, CertificationReport, StateResiduals};
pub use segment::{plan_segment, SegmentResult};
pub use stance::reach_stance;

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::model::{inward_half_planes, signed_area_doubled, ModelError, Pose, RobotModel};
use crate::numopt::{OptError, PenaltySchedule, Tolerances};
use crate::sampler::DoubleSupportConfig;

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error("planner config: {0}")]
    InvalidConfig(String),
    #[error("start state infeasible: {0}")]
    InfeasibleStart(String),
    #[error("stance unreachable: {0}")]
    StanceUnreachable(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] OptError),
}

/// Planner weights, horizons and feasibility margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// States per segment, including the fixed start state.
    pub horizon: usize,
    /// Diagonal CoP tracking weights (x, y).
    pub q_c: [f64; 2],
    /// Diagonal smoothness weight applied to every joint transition.
    pub q_u: f64,
    /// Minimum capsule-pair distance, m.
    pub d_min: f64,
    /// Landmark arrival radius, m.
    pub arrival_radius: f64,
    /// Total planning-step budget for one stance.
    pub max_steps: usize,
    /// Steps allowed on one landmark before the stall guard advances it.
    pub max_steps_per_landmark: usize,
    /// Landmark inset from the sensing polygon's front/rear edge, as a
    /// fraction of foot length.
    pub landmark_inset: f64,
    /// CoP stays this far inside the sensing polygon, m.
    pub cop_margin: f64,
    /// Per-joint transition bound, rad; imposes quasi-static slowness.
    pub u_max: f64,
    /// Foot-transform residual accepted by the certifier.
    pub tf_tol: f64,
    pub penalty: PenaltySchedule,
    pub tolerances: Tolerances,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 5,
            q_c: [1e4, 1e4],
            q_u: 1.0,
            d_min: 0.005,
            arrival_radius: 0.005,
            max_steps: 120,
            max_steps_per_landmark: 25,
            landmark_inset: 0.25,
            cop_margin: 0.002,
            u_max: 0.05,
            tf_tol: 1e-6,
            penalty: PenaltySchedule {
                initial_weight: 1e2,
                growth: 10.0,
                max_outer_iterations: 8,
            },
            tolerances: Tolerances {
                gradient_norm: 1e-6,
                step_norm: 1e-8,
                relative_cost_decrease: 1e-9,
                feasibility: 1e-7,
            },
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let invalid = |msg: &str| Err(PlannerError::InvalidConfig(msg.to_string()));
        if self.horizon < 2 {
            return invalid("horizon must be at least 2 states");
        }
        if self.q_c.iter().any(|&w| w < 0.0) || self.q_u < 0.0 {
            return invalid("weights must be non-negative");
        }
        if self.d_min <= 0.0 || self.arrival_radius <= 0.0 {
            return invalid("d_min and arrival_radius must be positive");
        }
        if self.u_max <= 0.0 {
            return invalid("u_max must be positive");
        }
        Ok(())
    }
}

/// The four CoP landmarks of a stance plus the edge midpoints of the
/// polygon they span, all in the world (left-sole) frame, ordered
/// counter-clockwise.
#[derive(Debug, Clone)]
pub struct LandmarkSet {
    pub landmarks: [Vector2<f64>; 4],
    pub midpoints: [Vector2<f64>; 4],
}

/// Landmarks sit on each foot's longitudinal centerline, inset from the
/// sensing polygon's front and rear edges by a fraction of the foot
/// length, ordered counter-clockwise starting at the left foot's front.
pub fn make_landmarks(
    model: &RobotModel,
    ds: &DoubleSupportConfig,
    inset_fraction: f64,
) -> LandmarkSet {
    let foot_points = |layout: &crate::model::FootLayout| {
        let front = layout
            .sensing_polygon
            .iter()
            .map(|p| p.x)
            .fold(f64::NEG_INFINITY, f64::max);
        let rear = layout
            .sensing_polygon
            .iter()
            .map(|p| p.x)
            .fold(f64::INFINITY, f64::min);
        let inset = inset_fraction * layout.length;
        (
            Vector2::new(front - inset, 0.0),
            Vector2::new(rear + inset, 0.0),
        )
    };
    let (lf, lr) = foot_points(&model.left_foot);
    let (rf_local, rr_local) = foot_points(&model.right_foot);
    let to_world = |p: Vector2<f64>| {
        ds.right_in_left
            .transform_point(&nalgebra::Vector3::new(p.x, p.y, 0.0))
            .xy()
    };
    let mut landmarks = [lf, lr, to_world(rr_local), to_world(rf_local)];
    if signed_area_doubled(&landmarks) < 0.0 {
        landmarks.reverse();
        landmarks.rotate_right(1); // keep the left-front landmark first
    }
    let midpoints = std::array::from_fn(|i| (landmarks[i] + landmarks[(i + 1) % 4]) / 2.0);
    LandmarkSet {
        landmarks,
        midpoints,
    }
}

/// Why the landmark index advanced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwitchReason {
    /// d[s] < r.
    WithinRadius,
    /// The distance to the landmark did not decrease (d[s-1] - d[s] <= 0);
    /// the landmark cannot be approached further.
    NonDecreasing,
    /// Safety valve: the rule did not fire within the per-landmark step
    /// budget.
    StallGuard,
}

/// Per-planning-step record of the landmark-switching loop.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub step: usize,
    /// Index into the target sequence being chased.
    pub target: usize,
    pub distance_before: f64,
    pub distance_after: f64,
    pub no_progress: bool,
}

/// One landmark switch and why it fired.
#[derive(Debug, Clone, Copy)]
pub struct LandmarkVisit {
    pub step: usize,
    pub target: usize,
    pub distance_before: f64,
    pub distance_after: f64,
    pub reason: SwitchReason,
}

/// A planned whole-body trajectory: states tied by transitions, the
/// modeled CoP per state, and the landmark log.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub transitions: Vec<DVector<f64>>,
    pub cops: Vec<Vector2<f64>>,
    /// Target index chased while producing each state.
    pub target_index: Vec<usize>,
    pub steps: Vec<StepRecord>,
    pub visits: Vec<LandmarkVisit>,
    /// Target sequence: the entry midpoint then the four landmarks CCW.
    pub targets: Vec<Vector2<f64>>,
    /// False when the planning-step budget ran out first.
    pub complete: bool,
}

/// Stance-local planning context shared by the segment solver and the
/// certifier.
pub(crate) struct StanceContext<'a> {
    pub model: &'a RobotModel,
    pub half_planes: Vec<(Vector2<f64>, f64)>,
    pub target_tf: Pose,
}

impl<'a> StanceContext<'a> {
    pub fn new(model: &'a RobotModel, ds: &'a DoubleSupportConfig) -> Result<Self, PlannerError> {
        let hull = model.sensing_polygon(ds)?;
        Ok(StanceContext {
            model,
            half_planes: inward_half_planes(&hull),
            target_tf: ds.right_in_left,
        })
    }

    /// Inward distance of a CoP from the hull boundary.
    pub fn cop_inside_margin(&self, cop: &Vector2<f64>) -> f64 {
        self.half_planes
            .iter()
            .map(|(n, d)| n.dot(cop) - d)
            .fold(f64::INFINITY, f64::min)
    }

    /// Six-component foot-transform residual (translation, rotation log)
    /// of a state against the stance transform.
    pub fn tf_residual(&self, poses: &[Pose]) -> [f64; 6] {
        let tf = self.model.foot_transform_from_poses(poses);
        let delta = self.target_tf.inverse().compose(&tf);
        let rot = delta.rotation_log();
        [
            tf.translation.x - self.target_tf.translation.x,
            tf.translation.y - self.target_tf.translation.y,
            tf.translation.z - self.target_tf.translation.z,
            rot.x,
            rot.y,
            rot.z,
        ]
    }
}

#[cfg(test)]
mod tests;
