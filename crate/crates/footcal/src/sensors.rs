//! Load-cell measurement model and the synthetic sensor simulator that
//! stands in for physical force-sensing shoes.
//!
//! Measurement side: each cell is an affine map from voltage to force;
//! the ground reaction force is the plain sum and the center of pressure
//! is the force-weighted average of the cell positions.
//!
//! Simulator side: given a joint configuration, the quasi-static load
//! distribution over the eight cells is the minimum-norm non-negative
//! solution of the force/moment balance, inverted through the true cell
//! parameters into voltages, with optional seeded noise, drift, and
//! quasi-static imperfection knobs.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::model::RobotModel;
use crate::numopt::{nlp_solve, EqualityConstraint, NlpProblem, PenaltySchedule, Tolerances};
use crate::rng::Rng;
use crate::sampler::DoubleSupportConfig;

/// Total measured force below this is too small for a meaningful CoP.
pub const FORCE_FLOOR: f64 = 1.0;

/// Nominal cell scale used for shared initial guesses and truth spreads.
pub const NOMINAL_SCALE: f64 = 60.0;
/// Nominal cell offset.
pub const NOMINAL_OFFSET: f64 = -2.0;

#[derive(Debug, thiserror::Error)]
pub enum SensorError {
    #[error("total force {total:.3} N is below the {FORCE_FLOOR} N floor; CoP undefined")]
    InsufficientLoad { total: f64 },
    #[error("cell scale must be non-zero, got {0}")]
    NonPositiveScale(f64),
    #[error("commanded CoP ({x:.4}, {y:.4}) admits no non-negative force distribution")]
    CopOutsideSensingRegion { x: f64, y: f64 },
    #[error("force distribution failed to reach balance (residual {residual:.3e})")]
    BalanceNotReached { residual: f64 },
    #[error("joint {index} = {value} outside model limits [{lo}, {hi}]")]
    JointOutOfRange {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Affine voltage-to-force map of one load cell: force = scale * S + offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadCellParams {
    /// N/V.
    pub scale: f64,
    /// N.
    pub offset: f64,
}

impl LoadCellParams {
    pub fn nominal() -> Self {
        LoadCellParams {
            scale: NOMINAL_SCALE,
            offset: NOMINAL_OFFSET,
        }
    }

    /// Flip an inverted-polarity cell so the scale is positive. Applied
    /// when parameter sets are loaded.
    pub fn normalized(self) -> Result<Self, SensorError> {
        if self.scale > 0.0 {
            Ok(self)
        } else if self.scale < 0.0 {
            Ok(LoadCellParams {
                scale: -self.scale,
                offset: -self.offset,
            })
        } else {
            Err(SensorError::NonPositiveScale(self.scale))
        }
    }

    /// Voltage a perfect cell would output for a given force.
    pub fn voltage_for(&self, force: f64) -> f64 {
        (force - self.offset) / self.scale
    }
}

/// Force output for a voltage sample.
pub fn cell_force(params: &LoadCellParams, voltage: f64) -> f64 {
    params.scale * voltage + params.offset
}

/// Total normal force: the sum of all cell forces.
pub fn measured_grf(forces: &[f64]) -> f64 {
    forces.iter().sum()
}

/// Force-weighted average of the cell positions. Fails below the force
/// floor, where the quotient is meaningless.
pub fn measured_cop(
    forces: &[f64],
    positions: &[Vector2<f64>],
) -> Result<Vector2<f64>, SensorError> {
    debug_assert_eq!(forces.len(), positions.len());
    let total = measured_grf(forces);
    if total <= FORCE_FLOOR {
        return Err(SensorError::InsufficientLoad { total });
    }
    let mut acc = Vector2::zeros();
    for (f, t) in forces.iter().zip(positions) {
        acc += t * *f;
    }
    Ok(acc / total)
}

/// One shoe: four cells and their mounting points in the sole frame.
#[derive(Debug, Clone)]
pub struct ShoeParams {
    pub cells: [LoadCellParams; 4],
    pub positions: [Vector2<f64>; 4],
}

/// One time-indexed sample of the sensor stream.
#[derive(Debug, Clone)]
pub struct SensorFrame {
    pub index: usize,
    /// Left cells 1-4 then right cells 1-4, volts.
    pub voltages: [f64; 8],
    pub q: DVector<f64>,
}

/// Synthetic sensor imperfections. All stochastic terms are driven by the
/// seed; zero amplitudes give the exact quasi-static closure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Per-sample white voltage noise, V.
    pub voltage_std: f64,
    /// Slow per-cell sinusoidal drift amplitude, V.
    pub drift_amplitude: f64,
    /// Drift period, frames.
    pub drift_period: f64,
    /// Quasi-static imperfection: sinusoidal GRF ripple amplitude, N.
    pub grf_ripple_amplitude: f64,
    pub grf_ripple_period: f64,
    /// Model error analogue: sinusoidal offset between the realized and
    /// the modeled CoP, m.
    pub cop_wobble_amplitude: f64,
    pub cop_wobble_period: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            voltage_std: 2e-3,
            drift_amplitude: 1e-3,
            drift_period: 127.0,
            grf_ripple_amplitude: 0.3,
            grf_ripple_period: 97.0,
            cop_wobble_amplitude: 0.002,
            cop_wobble_period: 71.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    /// Exact quasi-static simulation: no noise, no drift, no ripple.
    pub fn none() -> Self {
        NoiseModel {
            voltage_std: 0.0,
            drift_amplitude: 0.0,
            drift_period: 127.0,
            grf_ripple_amplitude: 0.0,
            grf_ripple_period: 97.0,
            cop_wobble_amplitude: 0.0,
            cop_wobble_period: 71.0,
            seed: 0,
        }
    }
}

/// Seeded noise stream for one dataset, advanced frame by frame.
#[derive(Debug, Clone)]
pub struct NoiseState {
    model: NoiseModel,
    rng: Rng,
    drift_phase: [f64; 8],
    ripple_phase: f64,
    wobble_phase: [f64; 2],
}

impl NoiseState {
    pub fn new(model: &NoiseModel, dataset_label: &str) -> Self {
        let mut rng = Rng::derive(model.seed, dataset_label);
        let mut phase = || rng.uniform_in(0.0, std::f64::consts::TAU);
        let drift_phase = std::array::from_fn(|_| phase());
        let ripple_phase = phase();
        let wobble_phase = [phase(), phase()];
        NoiseState {
            model: model.clone(),
            rng,
            drift_phase,
            ripple_phase,
            wobble_phase,
        }
    }

    fn ripple(&self, index: usize) -> f64 {
        let w = std::f64::consts::TAU / self.model.grf_ripple_period;
        self.model.grf_ripple_amplitude * (w * index as f64 + self.ripple_phase).sin()
    }

    fn wobble(&self, index: usize) -> Vector2<f64> {
        let w = std::f64::consts::TAU / self.model.cop_wobble_period;
        Vector2::new(
            self.model.cop_wobble_amplitude * (w * index as f64 + self.wobble_phase[0]).sin(),
            self.model.cop_wobble_amplitude * (w * index as f64 + self.wobble_phase[1]).sin(),
        )
    }

    fn drift(&self, cell: usize, index: usize) -> f64 {
        let w = std::f64::consts::TAU / self.model.drift_period;
        self.model.drift_amplitude * (w * index as f64 + self.drift_phase[cell]).sin()
    }

    fn voltage_noise(&mut self) -> f64 {
        if self.model.voltage_std == 0.0 {
            return 0.0;
        }
        self.model.voltage_std * self.rng.gaussian()
    }
}

/// Minimum-Euclidean-norm non-negative cell forces realizing the given
/// total force and CoP over the given positions.
///
/// The static problem (3 balance equations, n >= 4 supports) is
/// underdetermined; the minimum-norm rule makes it smooth, deterministic
/// and symmetric. A penalty NLP finds the active set, then an exact
/// equality-constrained polish drives the balance residual to machine
/// precision.
pub fn distribute_forces(
    positions: &[Vector2<f64>],
    total: f64,
    cop: &Vector2<f64>,
) -> Result<Vec<f64>, SensorError> {
    let n = positions.len();
    debug_assert!(n >= 3);
    let outside = || SensorError::CopOutsideSensingRegion { x: cop.x, y: cop.y };
    if total <= 0.0 {
        return Err(SensorError::BalanceNotReached { residual: total });
    }
    let hull = crate::model::convex_hull(positions).map_err(|_| outside())?;
    if !crate::model::contains_with_margin(&hull, cop, 0.0) {
        return Err(outside());
    }

    // Balance rows: total force and the two ground-plane moments.
    let a = DMatrix::from_fn(3, n, |r, c| match r {
        0 => 1.0,
        1 => positions[c].x,
        _ => positions[c].y,
    });
    let b = DVector::from_vec(vec![total, total * cop.x, total * cop.y]);

    let x0 = DVector::from_element(n, total / n as f64);
    let a_ref = a.clone();
    let b_ref = b.clone();
    let problem = NlpProblem::new(x0, |f: &DVector<f64>| f.clone())
        .with_equality(EqualityConstraint::new(
            "balance",
            move |f: &DVector<f64>| &a_ref * f - &b_ref,
        ))
        .with_bounds(DVector::zeros(n), DVector::from_element(n, f64::INFINITY))
        .with_penalty(PenaltySchedule {
            initial_weight: 1e4,
            growth: 10.0,
            max_outer_iterations: 8,
        })
        .with_tolerances(Tolerances {
            feasibility: 1e-8,
            ..Default::default()
        });
    // The NLP gets close and suggests which cells carry no load; the
    // closed-form polish below drives the balance residual to machine
    // precision.
    let nlp_active: Option<Vec<bool>> = nlp_solve(&problem)
        .ok()
        .map(|report| report.x.iter().map(|&f| f < 1e-9).collect());

    for initial_active in [nlp_active, Some(vec![false; n])].into_iter().flatten() {
        if let Some(forces) = min_norm_polish(&a, &b, initial_active) {
            let residual = (&a * DVector::from_vec(forces.clone()) - &b).amax();
            if residual <= 1e-9 {
                return Ok(forces);
            }
        }
    }
    Err(outside())
}

/// Equality-constrained minimum-norm solve with an active-set loop:
/// cells that turn negative are pinned to zero one at a time, most
/// negative first.
fn min_norm_polish(a: &DMatrix<f64>, b: &DVector<f64>, mut active: Vec<bool>) -> Option<Vec<f64>> {
    let n = active.len();
    for _ in 0..=n {
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        if free.is_empty() {
            return None;
        }
        let a_free = a.select_columns(free.iter());
        // Min-norm solution of A_free f = b via the normal equations of
        // the transpose; fall back to an SVD least-squares solve when the
        // free set no longer spans the three balance rows.
        let gram = &a_free * a_free.transpose();
        let f_free = match gram.cholesky() {
            Some(chol) => a_free.transpose() * chol.solve(b),
            None => a_free.clone().svd(true, true).solve(b, 1e-13).ok()?,
        };
        let worst = f_free
            .iter()
            .enumerate()
            .filter(|(_, &f)| f < -1e-12)
            .min_by(|x, y| x.1.partial_cmp(y.1).expect("finite forces"));
        if let Some((local, _)) = worst {
            active[free[local]] = true;
            continue;
        }
        let mut forces = vec![0.0; n];
        for (k, &i) in free.iter().enumerate() {
            forces[i] = f_free[k].max(0.0);
        }
        return Some(forces);
    }
    None
}

/// Voltages for one frame given a modeled CoP and nominal weight: the
/// realized force distribution balances the (possibly rippled) total at
/// the (possibly wobbled) CoP, is inverted through the true per-cell
/// parameters, and picks up drift and white noise.
pub fn simulate_voltages(
    ds: &DoubleSupportConfig,
    truth: &[LoadCellParams; 8],
    noise: &mut NoiseState,
    index: usize,
    cop_model: &Vector2<f64>,
    weight: f64,
) -> Result<[f64; 8], SensorError> {
    let cop_true = cop_model + noise.wobble(index);
    let total = weight + noise.ripple(index);
    let forces = distribute_forces(&ds.world_sensors, total, &cop_true)?;
    let mut voltages = [0.0; 8];
    for (i, v) in voltages.iter_mut().enumerate() {
        *v = truth[i].voltage_for(forces[i]) + noise.drift(i, index) + noise.voltage_noise();
    }
    Ok(voltages)
}

/// Simulate one sensor frame for a joint configuration.
pub fn simulate_frame(
    model: &RobotModel,
    q: &DVector<f64>,
    ds: &DoubleSupportConfig,
    truth: &[LoadCellParams; 8],
    noise: &mut NoiseState,
    index: usize,
) -> Result<SensorFrame, SensorError> {
    for i in 0..model.nq() {
        let slack = 1e-6;
        if q[i] < model.q_min[i] - slack || q[i] > model.q_max[i] + slack {
            return Err(SensorError::JointOutOfRange {
                index: i,
                value: q[i],
                lo: model.q_min[i],
                hi: model.q_max[i],
            });
        }
    }
    let cop_model = model.modeled_cop(q)?;
    let voltages = simulate_voltages(ds, truth, noise, index, &cop_model, model.weight())?;
    Ok(SensorFrame {
        index,
        voltages,
        q: q.clone(),
    })
}

/// Ground-truth cell parameters: a per-cell uniform spread around nominal
/// plus an opposite-signed per-shoe gain bias (each shoe has its own
/// electronics). The shoe bias is what makes a shared initial guess
/// genuinely inaccurate on GRF: per-cell spread alone averages out of the
/// total-force rows, while a left/right gain mismatch swings the measured
/// total as the weight shifts between feet.
pub fn heterogeneous_truth(rng: &mut Rng, spread: f64, shoe_bias: f64) -> [LoadCellParams; 8] {
    let shoe_sign = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
    std::array::from_fn(|i| {
        let bias = if i < 4 { shoe_sign } else { -shoe_sign } * shoe_bias;
        LoadCellParams {
            scale: NOMINAL_SCALE * (1.0 + bias + spread * rng.uniform_in(-1.0, 1.0)),
            offset: NOMINAL_OFFSET * (1.0 + spread * rng.uniform_in(-1.0, 1.0)),
        }
    })
}

/// Identical nominal parameters on every cell.
pub fn homogeneous_truth() -> [LoadCellParams; 8] {
    std::array::from_fn(|_| LoadCellParams::nominal())
}
