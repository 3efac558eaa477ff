//! Manual calibration pipeline: per-cell affine calibration, the
//! grid-weight CoP-correction protocol, correction-model fitting and MAE
//! metrics. This is the high-accuracy baseline the self-calibration is
//! judged against.
//!
//! The simulated protocol injects the systematic errors a physical shoe
//! exhibits: the measurement pipeline assumes the nominal sensor
//! positions and freshly calibrated cell parameters, while the simulated
//! forces act at perturbed true positions through perturbed true cells.

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::model::{contains_with_margin, convex_hull, RobotModel, Side};
use crate::numopt::{nls_solve, NlsProblem};
use crate::rng::Rng;
use crate::sensors::{
    cell_force, distribute_forces, measured_cop, LoadCellParams, NoiseModel, SensorError,
    ShoeParams,
};

#[derive(Debug, thiserror::Error)]
pub enum ManualCalError {
    #[error("dead cell: loaded voltage equals the no-load voltage ({0} V)")]
    DeadCell(f64),
    #[error("calibration weight must be positive, got {0} N")]
    NonPositiveWeight(f64),
    #[error("under-determined correction fit: {0}")]
    DataDeficiency(String),
    #[error("series length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty series")]
    EmptySeries,
    #[error("grid protocol: {0}")]
    InvalidProtocol(String),
    #[error("correction fit failed: {0}")]
    FitFailed(String),
    #[error(transparent)]
    Sensor(#[from] SensorError),
}

/// Fit one cell's affine parameters from its no-load voltage and the
/// voltage under a known force.
pub fn calibrate_cell(s0: f64, sg: f64, g: f64) -> Result<LoadCellParams, ManualCalError> {
    if g <= 0.0 {
        return Err(ManualCalError::NonPositiveWeight(g));
    }
    let span = sg - s0;
    if span.abs() < 1e-12 {
        return Err(ManualCalError::DeadCell(s0));
    }
    let sigma = span / g;
    Ok(LoadCellParams {
        scale: 1.0 / sigma,
        offset: -s0 / sigma,
    })
}

/// CoP correction coefficients for one shoe: a second-order polynomial of
/// the measured CoP plus first-order force terms, per axis. The zero
/// vector is the identity correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionParams {
    /// x-axis polynomial: a1*p0x^2 + a2*p0x + a3*p0y + a4.
    pub a: [f64; 4],
    /// x-axis force terms, one per cell.
    pub m: [f64; 4],
    /// y-axis polynomial: b1*p0y^2 + b2*p0y + b3*p0x + b4.
    pub b: [f64; 4],
    /// y-axis force terms.
    pub n: [f64; 4],
}

impl CorrectionParams {
    pub fn zero() -> Self {
        CorrectionParams {
            a: [0.0; 4],
            m: [0.0; 4],
            b: [0.0; 4],
            n: [0.0; 4],
        }
    }

    pub fn from_vector(zeta: &DVector<f64>) -> Self {
        debug_assert_eq!(zeta.len(), 16);
        let grab = |start: usize| std::array::from_fn(|i| zeta[start + i]);
        CorrectionParams {
            a: grab(0),
            m: grab(4),
            b: grab(8),
            n: grab(12),
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(16);
        v.extend_from_slice(&self.a);
        v.extend_from_slice(&self.m);
        v.extend_from_slice(&self.b);
        v.extend_from_slice(&self.n);
        DVector::from_vec(v)
    }
}

/// Corrected CoP: the measurement plus the correction term. The linear
/// cross terms are axis-swapped (a3 multiplies p0y, b3 multiplies p0x).
pub fn corrected_cop(
    p0: &Vector2<f64>,
    forces: &[f64; 4],
    params: &CorrectionParams,
) -> Vector2<f64> {
    let force_x: f64 = params.m.iter().zip(forces).map(|(m, f)| m * f).sum();
    let force_y: f64 = params.n.iter().zip(forces).map(|(n, f)| n * f).sum();
    let dx =
        params.a[0] * p0.x * p0.x + params.a[1] * p0.x + params.a[2] * p0.y + params.a[3] + force_x;
    let dy =
        params.b[0] * p0.y * p0.y + params.b[1] * p0.y + params.b[2] * p0.x + params.b[3] + force_y;
    Vector2::new(p0.x + dx, p0.y + dy)
}

/// One grid measurement: the measured CoP and the four cell forces.
#[derive(Debug, Clone, Copy)]
pub struct CopSample {
    pub measured: Vector2<f64>,
    pub forces: [f64; 4],
}

/// Fit the 16 correction coefficients by least squares against the known
/// true CoPs. The residual is linear in the coefficients, so the fit is
/// exact up to conditioning.
pub fn fit_correction(
    samples: &[CopSample],
    truths: &[Vector2<f64>],
) -> Result<CorrectionParams, ManualCalError> {
    if samples.len() != truths.len() {
        return Err(ManualCalError::LengthMismatch {
            left: samples.len(),
            right: truths.len(),
        });
    }
    if samples.len() < 16 {
        return Err(ManualCalError::DataDeficiency(format!(
            "{} samples for 16 coefficients; need at least 16",
            samples.len()
        )));
    }
    let mut distinct: Vec<Vector2<f64>> = Vec::new();
    for s in samples {
        if !distinct.iter().any(|p| (p - s.measured).norm() < 1e-9) {
            distinct.push(s.measured);
        }
    }
    if distinct.len() < 4 {
        return Err(ManualCalError::DataDeficiency(format!(
            "only {} distinct measurement positions; need at least 4",
            distinct.len()
        )));
    }

    // The residual is linear in the coefficients; start with negligible
    // damping so the first Gauss-Newton step is the exact solve.
    let problem = NlsProblem::new(DVector::zeros(16), |zeta: &DVector<f64>| {
        let params = CorrectionParams::from_vector(zeta);
        let mut r = Vec::with_capacity(2 * samples.len());
        for (s, t) in samples.iter().zip(truths) {
            let corrected = corrected_cop(&s.measured, &s.forces, &params);
            r.push(corrected.x - t.x);
            r.push(corrected.y - t.y);
        }
        DVector::from_vec(r)
    })
    .with_damping(crate::numopt::DampingSchedule {
        initial: 1e-12,
        ..Default::default()
    });
    let report = nls_solve(&problem).map_err(|e| ManualCalError::FitFailed(e.to_string()))?;

    // The fit must never do worse than no correction at all.
    let zero_cost: f64 = samples
        .iter()
        .zip(truths)
        .map(|(s, t)| (s.measured - t).norm_squared())
        .sum();
    if report.cost > zero_cost + 1e-12 {
        return Err(ManualCalError::FitFailed(format!(
            "fit cost {} above the zero-correction cost {zero_cost}",
            report.cost
        )));
    }
    Ok(CorrectionParams::from_vector(&report.x))
}

/// The grid-weight protocol: hole positions on the shoe's top plate and
/// the applied weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridProtocol {
    /// Hole positions in the sole frame, m.
    pub holes: Vec<[f64; 2]>,
    /// Applied masses, kg, strictly increasing.
    pub weights_kg: Vec<f64>,
    /// Voltage readings averaged per placement.
    pub readings_per_placement: usize,
    /// Readings averaged when calibrating each cell.
    pub calibration_readings: usize,
    /// Mass used for the per-cell calibration step, kg.
    pub calibration_mass_kg: f64,
}

impl Default for GridProtocol {
    fn default() -> Self {
        // Six-by-three hole array spanning the sensing polygon.
        let mut holes = Vec::with_capacity(18);
        for ix in 0..6 {
            for iy in 0..3 {
                let x = -0.06 + 0.12 * ix as f64 / 5.0;
                let y = -0.02 + 0.04 * iy as f64 / 2.0;
                holes.push([x, y]);
            }
        }
        GridProtocol {
            holes,
            weights_kg: vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
            readings_per_placement: 25,
            calibration_readings: 200,
            calibration_mass_kg: 2.0,
        }
    }
}

impl GridProtocol {
    pub fn validate(&self, model: &RobotModel, side: Side) -> Result<(), ManualCalError> {
        if self.holes.is_empty() || self.weights_kg.is_empty() {
            return Err(ManualCalError::InvalidProtocol(
                "holes and weights must be non-empty".into(),
            ));
        }
        if !self.weights_kg.windows(2).all(|w| w[0] < w[1]) {
            return Err(ManualCalError::InvalidProtocol(
                "weights must be strictly increasing".into(),
            ));
        }
        if self.readings_per_placement == 0 || self.calibration_readings == 0 {
            return Err(ManualCalError::InvalidProtocol(
                "reading counts must be positive".into(),
            ));
        }
        let polygon = &model.foot(side).sensing_polygon;
        for h in &self.holes {
            if !contains_with_margin(polygon, &Vector2::from(*h), 0.0) {
                return Err(ManualCalError::InvalidProtocol(format!(
                    "hole ({}, {}) outside the sensing polygon",
                    h[0], h[1]
                )));
            }
        }
        Ok(())
    }
}

/// A hole/weight pair that could not be simulated.
#[derive(Debug, Clone)]
pub struct SkippedPlacement {
    pub hole: Vector2<f64>,
    pub weight_kg: f64,
    pub reason: String,
}

/// Result of simulating the full grid protocol on one shoe.
#[derive(Debug, Clone)]
pub struct GridRun {
    pub samples: Vec<CopSample>,
    /// Commanded hole positions; the protocol's ground truth.
    pub truths: Vec<Vector2<f64>>,
    /// Applied weight per sample, N.
    pub applied: Vec<f64>,
    /// Cell parameters recovered by the simulated per-cell calibration;
    /// the measurement side of the protocol.
    pub assumed: ShoeParams,
    pub skipped: Vec<SkippedPlacement>,
}

/// Simulate the grid-weight protocol on one shoe.
///
/// Forces are generated at the true (perturbed) sensor positions through
/// the true cell parameters; measurements go through freshly calibrated
/// cells and the nominal positions, exactly like the physical procedure.
pub fn run_grid_protocol(
    model: &RobotModel,
    side: Side,
    truth: &ShoeParams,
    protocol: &GridProtocol,
    noise: &NoiseModel,
) -> Result<GridRun, ManualCalError> {
    protocol.validate(model, side)?;
    let label = match side {
        Side::Left => "manual-cal/left",
        Side::Right => "manual-cal/right",
    };
    let mut rng = Rng::derive(noise.seed, label);
    let read = |ideal: f64, rng: &mut Rng| ideal + noise.voltage_std * rng.gaussian();
    let averaged = |ideal: f64, count: usize, rng: &mut Rng| {
        let mut acc = 0.0;
        for _ in 0..count {
            acc += read(ideal, rng);
        }
        acc / count as f64
    };

    // Per-cell calibration (no load, then a known mass above each cell).
    let g_cal = protocol.calibration_mass_kg * model.gravity;
    let mut cells = [LoadCellParams::nominal(); 4];
    for (i, cell) in truth.cells.iter().enumerate() {
        let s0 = averaged(
            cell.voltage_for(0.0),
            protocol.calibration_readings,
            &mut rng,
        );
        let sg = averaged(
            cell.voltage_for(g_cal),
            protocol.calibration_readings,
            &mut rng,
        );
        cells[i] = calibrate_cell(s0, sg, g_cal)?;
    }
    let assumed = ShoeParams {
        cells,
        positions: model.foot(side).sensors,
    };

    let true_hull = convex_hull(&truth.positions)
        .map_err(|e| ManualCalError::InvalidProtocol(e.to_string()))?;
    let mut run = GridRun {
        samples: Vec::new(),
        truths: Vec::new(),
        applied: Vec::new(),
        assumed,
        skipped: Vec::new(),
    };
    for hole in &protocol.holes {
        let hole = Vector2::from(*hole);
        for &mass in &protocol.weights_kg {
            let weight = mass * model.gravity;
            if !contains_with_margin(&true_hull, &hole, 0.0) {
                run.skipped.push(SkippedPlacement {
                    hole,
                    weight_kg: mass,
                    reason: "outside the true sensor hull".into(),
                });
                continue;
            }
            let forces = match distribute_forces(&truth.positions, weight, &hole) {
                Ok(f) => f,
                Err(e) => {
                    run.skipped.push(SkippedPlacement {
                        hole,
                        weight_kg: mass,
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            let mut measured_forces = [0.0; 4];
            for i in 0..4 {
                let s = averaged(
                    truth.cells[i].voltage_for(forces[i]),
                    protocol.readings_per_placement,
                    &mut rng,
                );
                measured_forces[i] = cell_force(&run.assumed.cells[i], s);
            }
            let measured = measured_cop(&measured_forces, &run.assumed.positions)?;
            run.samples.push(CopSample {
                measured,
                forces: measured_forces,
            });
            run.truths.push(hole);
            run.applied.push(weight);
        }
    }
    Ok(run)
}

/// A perturbed "physical" shoe: true sensor positions jittered around the
/// nominal layout and true cell parameters spread around nominal.
pub fn perturbed_shoe(
    model: &RobotModel,
    side: Side,
    rng: &mut Rng,
    position_jitter: f64,
    param_spread: f64,
) -> ShoeParams {
    let nominal = model.foot(side).sensors;
    let positions = std::array::from_fn(|i| {
        nominal[i]
            + Vector2::new(
                rng.uniform_in(-position_jitter, position_jitter),
                rng.uniform_in(-position_jitter, position_jitter),
            )
    });
    let cells = std::array::from_fn(|_| LoadCellParams {
        scale: crate::sensors::NOMINAL_SCALE * (1.0 + param_spread * rng.uniform_in(-1.0, 1.0)),
        offset: crate::sensors::NOMINAL_OFFSET * (1.0 + param_spread * rng.uniform_in(-1.0, 1.0)),
    });
    ShoeParams { cells, positions }
}

/// Units carried by an MAE report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    #[serde(rename = "N")]
    Newtons,
    #[serde(rename = "mm")]
    Millimeters,
}

impl std::fmt::Display for Units {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Units::Newtons => write!(f, "N"),
            Units::Millimeters => write!(f, "mm"),
        }
    }
}

/// Mean absolute error with the spread of the absolute errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    pub units: Units,
}

fn mae_from_abs_errors(errors: &[f64], units: Units) -> Result<MaeReport, ManualCalError> {
    if errors.is_empty() {
        return Err(ManualCalError::EmptySeries);
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok(MaeReport {
        mean,
        std: var.sqrt(),
        count: errors.len(),
        units,
    })
}

/// Mean absolute GRF error, in newtons.
pub fn mae_grf(measured: &[f64], truth: &[f64]) -> Result<MaeReport, ManualCalError> {
    if measured.len() != truth.len() {
        return Err(ManualCalError::LengthMismatch {
            left: measured.len(),
            right: truth.len(),
        });
    }
    let errors: Vec<f64> = measured
        .iter()
        .zip(truth)
        .map(|(m, t)| (m - t).abs())
        .collect();
    mae_from_abs_errors(&errors, Units::Newtons)
}

/// Mean Euclidean CoP error, reported in millimeters.
pub fn mae_cop(
    measured: &[Vector2<f64>],
    truth: &[Vector2<f64>],
) -> Result<MaeReport, ManualCalError> {
    if measured.len() != truth.len() {
        return Err(ManualCalError::LengthMismatch {
            left: measured.len(),
            right: truth.len(),
        });
    }
    let errors: Vec<f64> = measured
        .iter()
        .zip(truth)
        .map(|(m, t)| (m - t).norm() * 1000.0)
        .collect();
    mae_from_abs_errors(&errors, Units::Millimeters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensors::measured_grf;

    #[test]
    fn calibrate_cell_matches_hand_arithmetic() {
        let p = calibrate_cell(0.02, 0.12, 9.81).unwrap();
        assert!((p.scale - 98.1).abs() < 1e-9);
        assert!((p.offset + 1.962).abs() < 1e-9);
        assert!(cell_force(&p, 0.02).abs() < 1e-12);
        assert!((cell_force(&p, 0.12) - 9.81).abs() < 1e-12);
    }

    #[test]
    fn dead_cell_is_an_error() {
        assert!(matches!(
            calibrate_cell(0.05, 0.05, 9.81),
            Err(ManualCalError::DeadCell(_))
        ));
    }

    #[test]
    fn zero_params_is_the_identity_correction() {
        let p0 = Vector2::new(0.013, -0.021);
        let f = [1.0, 2.0, 3.0, 4.0];
        let out = corrected_cop(&p0, &f, &CorrectionParams::zero());
        assert_eq!(out, p0);
    }

    #[test]
    fn pure_offset_correction() {
        let mut params = CorrectionParams::zero();
        params.a[3] = 0.001;
        let p0 = Vector2::new(0.01, 0.02);
        let out = corrected_cop(&p0, &[0.0; 4], &params);
        assert!((out - Vector2::new(0.011, 0.02)).norm() < 1e-15);
    }

    // Fit-to-known-generator oracle: build truths from a known coefficient
    // vector, then check the fit recovers it.
    #[test]
    fn fit_recovers_known_generator() {
        let mut generator = CorrectionParams::zero();
        generator.a = [0.4, -0.03, 0.02, 0.0012];
        generator.b = [-0.3, 0.05, -0.01, -0.0008];
        generator.m = [1e-5, -2e-5, 3e-5, -1.5e-5];
        generator.n = [-2e-5, 1e-5, -0.5e-5, 2.5e-5];
        let mut rng = Rng::new(3);
        let mut samples = Vec::new();
        let mut truths = Vec::new();
        for _ in 0..120 {
            let p0 = Vector2::new(rng.uniform_in(-0.06, 0.06), rng.uniform_in(-0.02, 0.02));
            let forces = std::array::from_fn(|_| rng.uniform_in(0.0, 15.0));
            samples.push(CopSample {
                measured: p0,
                forces,
            });
            truths.push(corrected_cop(&p0, &forces, &generator));
        }
        let fitted = fit_correction(&samples, &truths).unwrap();
        let gap = (fitted.to_vector() - generator.to_vector()).amax();
        assert!(gap < 1e-6, "coefficient gap {gap}");
    }

    #[test]
    fn unbiased_samples_fit_to_zero() {
        let mut rng = Rng::new(4);
        let mut samples = Vec::new();
        let mut truths = Vec::new();
        for _ in 0..60 {
            let p = Vector2::new(rng.uniform_in(-0.05, 0.05), rng.uniform_in(-0.02, 0.02));
            samples.push(CopSample {
                measured: p,
                forces: std::array::from_fn(|_| rng.uniform_in(1.0, 10.0)),
            });
            truths.push(p);
        }
        let fitted = fit_correction(&samples, &truths).unwrap();
        assert!(fitted.to_vector().amax() < 1e-9);
    }

    #[test]
    fn deficient_data_is_named() {
        let sample = CopSample {
            measured: Vector2::new(0.01, 0.0),
            forces: [1.0; 4],
        };
        let few = vec![sample; 10];
        let truths = vec![Vector2::zeros(); 10];
        match fit_correction(&few, &truths) {
            Err(ManualCalError::DataDeficiency(msg)) => assert!(msg.contains("10 samples")),
            other => panic!("unexpected {other:?}"),
        }
        let same_spot = vec![sample; 20];
        let truths = vec![Vector2::zeros(); 20];
        match fit_correction(&same_spot, &truths) {
            Err(ManualCalError::DataDeficiency(msg)) => assert!(msg.contains("distinct")),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn exact_shoe(model: &RobotModel) -> ShoeParams {
        ShoeParams {
            cells: std::array::from_fn(|_| LoadCellParams::nominal()),
            positions: model.left_foot.sensors,
        }
    }

    #[test]
    fn grid_protocol_yields_full_sample_count() {
        let model = RobotModel::nao_like();
        let truth = exact_shoe(&model);
        let run = run_grid_protocol(
            &model,
            Side::Left,
            &truth,
            &GridProtocol::default(),
            &NoiseModel::none(),
        )
        .unwrap();
        assert_eq!(run.samples.len(), 18 * 7);
        assert!(run.skipped.is_empty());
    }

    #[test]
    fn unbiased_noiseless_grid_measures_the_holes_exactly() {
        let model = RobotModel::nao_like();
        let truth = exact_shoe(&model);
        let run = run_grid_protocol(
            &model,
            Side::Left,
            &truth,
            &GridProtocol::default(),
            &NoiseModel::none(),
        )
        .unwrap();
        for (s, t) in run.samples.iter().zip(&run.truths) {
            assert!((s.measured - t).norm() < 1e-9);
        }
    }

    #[test]
    fn grid_samples_conserve_force() {
        let model = RobotModel::nao_like();
        let truth = exact_shoe(&model);
        let run = run_grid_protocol(
            &model,
            Side::Left,
            &truth,
            &GridProtocol::default(),
            &NoiseModel::none(),
        )
        .unwrap();
        for (s, w) in run.samples.iter().zip(&run.applied) {
            assert!((measured_grf(&s.forces) - w).abs() < 1e-9);
        }
    }

    #[test]
    fn skipped_holes_are_recorded() {
        let model = RobotModel::nao_like();
        // True positions squeezed inward so the outer holes fall outside
        // the true sensor hull.
        let truth = ShoeParams {
            cells: std::array::from_fn(|_| LoadCellParams::nominal()),
            positions: std::array::from_fn(|i| model.left_foot.sensors[i] * 0.5),
        };
        let run = run_grid_protocol(
            &model,
            Side::Left,
            &truth,
            &GridProtocol::default(),
            &NoiseModel::none(),
        )
        .unwrap();
        assert!(!run.skipped.is_empty());
        assert!(run.samples.len() + run.skipped.len() == 18 * 7);
    }

    #[test]
    fn hole_outside_sensing_polygon_rejected_upfront() {
        let model = RobotModel::nao_like();
        let mut protocol = GridProtocol::default();
        protocol.holes.push([0.2, 0.0]);
        assert!(matches!(
            protocol.validate(&model, Side::Left),
            Err(ManualCalError::InvalidProtocol(_))
        ));
    }

    /// Full Table-I-style run with the default bias injection; shared
    /// with the acceptance suite.
    pub(crate) fn biased_grid_maes() -> (MaeReport, MaeReport, MaeReport) {
        let model = RobotModel::nao_like();
        let mut rng = Rng::new(1001);
        let truth = perturbed_shoe(&model, Side::Left, &mut rng, 0.002, 0.3);
        let noise = NoiseModel {
            seed: 7,
            ..Default::default()
        };
        let run = run_grid_protocol(&model, Side::Left, &truth, &GridProtocol::default(), &noise)
            .unwrap();
        let params = fit_correction(&run.samples, &run.truths).unwrap();
        let raw: Vec<Vector2<f64>> = run.samples.iter().map(|s| s.measured).collect();
        let corrected: Vec<Vector2<f64>> = run
            .samples
            .iter()
            .map(|s| corrected_cop(&s.measured, &s.forces, &params))
            .collect();
        let grf: Vec<f64> = run
            .samples
            .iter()
            .map(|s| measured_grf(&s.forces))
            .collect();
        (
            mae_cop(&raw, &run.truths).unwrap(),
            mae_cop(&corrected, &run.truths).unwrap(),
            mae_grf(&grf, &run.applied).unwrap(),
        )
    }

    #[test]
    fn biased_grid_correction_improves_threefold() {
        let (raw, corrected, grf) = biased_grid_maes();
        assert!(
            raw.mean / corrected.mean >= 3.0,
            "improvement {}x (raw {} mm, corrected {} mm)",
            raw.mean / corrected.mean,
            raw.mean,
            corrected.mean
        );
        assert!(corrected.mean <= 2.0, "corrected {} mm", corrected.mean);
        assert!(grf.mean <= 0.1, "grf {} N", grf.mean);
    }

    #[test]
    fn held_out_weight_generalizes() {
        let model = RobotModel::nao_like();
        let mut rng = Rng::new(88);
        let truth = perturbed_shoe(&model, Side::Left, &mut rng, 0.002, 0.3);
        let noise = NoiseModel {
            seed: 11,
            ..Default::default()
        };
        let run = run_grid_protocol(&model, Side::Left, &truth, &GridProtocol::default(), &noise)
            .unwrap();
        // Hold out the 2.5 kg placements.
        let held_weight = 2.5 * model.gravity;
        let is_held = |w: f64| (w - held_weight).abs() < 1e-9;
        let mut train_s = Vec::new();
        let mut train_t = Vec::new();
        let mut test_s = Vec::new();
        let mut test_t = Vec::new();
        for ((s, t), w) in run.samples.iter().zip(&run.truths).zip(&run.applied) {
            if is_held(*w) {
                test_s.push(*s);
                test_t.push(*t);
            } else {
                train_s.push(*s);
                train_t.push(*t);
            }
        }
        let params = fit_correction(&train_s, &train_t).unwrap();
        let eval = |samples: &[CopSample], truths: &[Vector2<f64>]| {
            let corrected: Vec<Vector2<f64>> = samples
                .iter()
                .map(|s| corrected_cop(&s.measured, &s.forces, &params))
                .collect();
            mae_cop(&corrected, truths).unwrap().mean
        };
        let train_mae = eval(&train_s, &train_t);
        let test_mae = eval(&test_s, &test_t);
        assert!(
            test_mae <= 2.0 * train_mae,
            "test {test_mae} mm vs train {train_mae} mm"
        );
    }

    #[test]
    fn fitted_coefficients_are_a_local_minimum() {
        let model = RobotModel::nao_like();
        let mut rng = Rng::new(13);
        let truth = perturbed_shoe(&model, Side::Left, &mut rng, 0.002, 0.3);
        let run = run_grid_protocol(
            &model,
            Side::Left,
            &truth,
            &GridProtocol::default(),
            &NoiseModel::none(),
        )
        .unwrap();
        let params = fit_correction(&run.samples, &run.truths).unwrap();
        let cost = |p: &CorrectionParams| -> f64 {
            run.samples
                .iter()
                .zip(&run.truths)
                .map(|(s, t)| (corrected_cop(&s.measured, &s.forces, p) - t).norm_squared())
                .sum()
        };
        let base = cost(&params);
        let zeta = params.to_vector();
        for i in 0..16 {
            for sign in [-1.0, 1.0] {
                let mut perturbed = zeta.clone();
                perturbed[i] *= 1.0 + sign * 0.01;
                if perturbed[i] == zeta[i] {
                    continue; // zero coefficient; 1% of nothing
                }
                let c = cost(&CorrectionParams::from_vector(&perturbed));
                assert!(
                    c >= base - 1e-15,
                    "perturbing coefficient {i} by {sign}% lowered the cost"
                );
            }
        }
    }

    #[test]
    fn mae_basics() {
        let same = mae_grf(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(same.mean, 0.0);
        assert_eq!(same.units, Units::Newtons);

        let shifted = mae_grf(&[1.5, 2.5], &[1.0, 2.0]).unwrap();
        assert!((shifted.mean - 0.5).abs() < 1e-15);
        assert!(shifted.std.abs() < 1e-15);

        let offset345 = mae_cop(
            &[Vector2::new(0.003, 0.004), Vector2::new(0.103, 0.104)],
            &[Vector2::zeros(), Vector2::new(0.1, 0.1)],
        )
        .unwrap();
        assert!((offset345.mean - 5.0).abs() < 1e-12, "3-4-5 in mm");
        assert!(offset345.std.abs() < 1e-9);
        assert_eq!(offset345.units, Units::Millimeters);

        assert!(matches!(
            mae_grf(&[1.0], &[1.0, 2.0]),
            Err(ManualCalError::LengthMismatch { .. })
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // MAE axioms: non-negative, zero iff identical, symmetric.
            #[test]
            fn mae_axioms(series in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..40)) {
                let a: Vec<f64> = series.iter().map(|(x, _)| *x).collect();
                let b: Vec<f64> = series.iter().map(|(_, y)| *y).collect();
                let ab = mae_grf(&a, &b).unwrap();
                let ba = mae_grf(&b, &a).unwrap();
                prop_assert!(ab.mean >= 0.0);
                prop_assert!((ab.mean - ba.mean).abs() < 1e-12);
                let aa = mae_grf(&a, &a).unwrap();
                prop_assert_eq!(aa.mean, 0.0);
                if ab.mean == 0.0 {
                    for (x, y) in a.iter().zip(&b) {
                        prop_assert!((x - y).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
