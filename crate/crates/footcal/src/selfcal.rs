//! Self-calibration: shared-parameter initial guess by linear least
//! squares, regularized nonlinear identification of the eight per-cell
//! affine parameters against modeled CoP/GRF references, and the
//! GRF-weighted double-support CoP correction, with train/test
//! evaluation.

use nalgebra::{DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::manual_cal::{corrected_cop, mae_cop, mae_grf, CorrectionParams, MaeReport};
use crate::model::Pose;
use crate::numopt::{nls_solve, DampingSchedule, NlsProblem, Termination};
use crate::rng::fnv1a;
use crate::sampler::DoubleSupportConfig;
use crate::sensors::{cell_force, LoadCellParams, SensorFrame, FORCE_FLOOR};

#[derive(Debug, thiserror::Error)]
pub enum SelfCalError {
    #[error("dataset `{label}`: {problem}")]
    InvalidDataset { label: String, problem: String },
    #[error("degenerate regression data: {0}")]
    DegenerateData(String),
    #[error("identification failed: {0}")]
    IdentificationFailed(String),
    #[error("under-determined correction fit: {frames} frames for 32 coefficients")]
    UnderDetermined { frames: usize },
    #[error("train/test overlap: frame hash {hash:#018x} appears in both roles")]
    RoleOverlap { hash: u64 },
    #[error("no datasets with role {0:?}")]
    MissingRole(Role),
}

/// Dataset role in the train/test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Train,
    Test,
}

/// Frames of one planned double-support trajectory with their modeled
/// references.
#[derive(Debug, Clone)]
pub struct CalibrationDataset {
    pub label: String,
    pub ds: DoubleSupportConfig,
    pub frames: Vec<SensorFrame>,
    /// Modeled CoP per frame, world frame.
    pub cop_refs: Vec<Vector2<f64>>,
    /// Quasi-static GRF reference: the robot weight, N.
    pub grf_ref: f64,
    pub role: Role,
}

impl CalibrationDataset {
    pub const MIN_FRAMES: usize = 50;

    pub fn new(
        label: String,
        ds: DoubleSupportConfig,
        frames: Vec<SensorFrame>,
        cop_refs: Vec<Vector2<f64>>,
        grf_ref: f64,
        role: Role,
    ) -> Result<Self, SelfCalError> {
        let invalid = |problem: String| SelfCalError::InvalidDataset {
            label: label.clone(),
            problem,
        };
        if frames.len() < Self::MIN_FRAMES {
            return Err(invalid(format!(
                "{} frames; a dataset needs at least {}",
                frames.len(),
                Self::MIN_FRAMES
            )));
        }
        if frames.len() != cop_refs.len() {
            return Err(invalid(format!(
                "{} frames vs {} references",
                frames.len(),
                cop_refs.len()
            )));
        }
        if !grf_ref.is_finite()
            || cop_refs
                .iter()
                .any(|c| !c.x.is_finite() || !c.y.is_finite())
        {
            return Err(invalid("non-finite references".into()));
        }
        Ok(CalibrationDataset {
            label,
            ds,
            frames,
            cop_refs,
            grf_ref,
            role,
        })
    }

    /// Stable content hash of one frame, for train/test hygiene.
    pub fn frame_hash(&self, index: usize) -> u64 {
        let frame = &self.frames[index];
        let mut bytes = Vec::with_capacity(8 * 10);
        bytes.extend_from_slice(self.label.as_bytes());
        bytes.extend_from_slice(&(frame.index as u64).to_le_bytes());
        for v in &frame.voltages {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        fnv1a(&bytes)
    }
}

/// Cost weights of the identification fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfCalWeights {
    /// GRF residual weight, 1/N^2.
    pub w_n: f64,
    /// CoP residual weight, 1/m^2.
    pub w_c: f64,
    /// Regularization toward the initial guess, uniform over all 16
    /// parameters.
    pub w_zeta: f64,
}

impl Default for SelfCalWeights {
    fn default() -> Self {
        SelfCalWeights {
            w_n: 1.0,
            w_c: 1e4,
            w_zeta: 1e-4,
        }
    }
}

/// Pack eight cells as [scale_1, offset_1, .., scale_8, offset_8].
fn params_to_vector(params: &[LoadCellParams; 8]) -> DVector<f64> {
    let mut v = Vec::with_capacity(16);
    for p in params {
        v.push(p.scale);
        v.push(p.offset);
    }
    DVector::from_vec(v)
}

fn vector_to_params(zeta: &DVector<f64>) -> [LoadCellParams; 8] {
    std::array::from_fn(|i| LoadCellParams {
        scale: zeta[2 * i],
        offset: zeta[2 * i + 1],
    })
}

/// Per-frame measurement under a parameter set: total GRF and CoP.
fn measure(
    frame: &SensorFrame,
    positions: &[Vector2<f64>; 8],
    params: &[LoadCellParams; 8],
) -> (f64, Vector2<f64>) {
    let mut total = 0.0;
    let mut weighted = Vector2::zeros();
    for i in 0..8 {
        let f = cell_force(&params[i], frame.voltages[i]);
        total += f;
        weighted += positions[i] * f;
    }
    // The denominator is floored so the residual stays finite for wild
    // intermediate iterates; at any sane solution the total is far above
    // the floor.
    (total, weighted / total.max(FORCE_FLOOR))
}

/// CoP rows of the initial-guess regression are expressed in
/// millimeters. The two-parameter fit balances CoP-pattern rows against
/// total-force rows by raw magnitude, and the millimeter scale
/// reproduces the reported error regime: a shared guess that tracks the
/// CoP shape to a few centimeters while missing the total force by
/// newtons.
const COP_ROW_SCALE: f64 = 1000.0;

/// Shared-parameter initial guess (c0, d0) by closed-form linear least
/// squares on the stacked GRF/CoP rows of all training frames.
pub fn initial_guess(datasets: &[&CalibrationDataset]) -> Result<(f64, f64), SelfCalError> {
    let mut normal: Matrix2<f64> = Matrix2::zeros();
    let mut rhs: Vector2<f64> = Vector2::zeros();
    let mut rows = 0usize;
    for set in datasets {
        let positions = &set.ds.world_sensors;
        let sum_tx: f64 = positions.iter().map(|p| p.x * COP_ROW_SCALE).sum();
        let sum_ty: f64 = positions.iter().map(|p| p.y * COP_ROW_SCALE).sum();
        for (frame, cop_ref) in set.frames.iter().zip(&set.cop_refs) {
            let sum_s: f64 = frame.voltages.iter().sum();
            let sum_sx: f64 = frame
                .voltages
                .iter()
                .zip(positions)
                .map(|(s, p)| s * p.x * COP_ROW_SCALE)
                .sum();
            let sum_sy: f64 = frame
                .voltages
                .iter()
                .zip(positions)
                .map(|(s, p)| s * p.y * COP_ROW_SCALE)
                .sum();
            let g = set.grf_ref;
            for (a_row, b_row) in [
                ([sum_sx, sum_tx], cop_ref.x * COP_ROW_SCALE * g),
                ([sum_sy, sum_ty], cop_ref.y * COP_ROW_SCALE * g),
                ([sum_s, 8.0], g),
            ] {
                normal[(0, 0)] += a_row[0] * a_row[0];
                normal[(0, 1)] += a_row[0] * a_row[1];
                normal[(1, 1)] += a_row[1] * a_row[1];
                rhs.x += a_row[0] * b_row;
                rhs.y += a_row[1] * b_row;
                rows += 1;
            }
        }
    }
    if rows < 2 {
        return Err(SelfCalError::DegenerateData(format!(
            "{rows} regression rows; need at least 2"
        )));
    }
    normal[(1, 0)] = normal[(0, 1)];
    let det = normal.determinant();
    let scale = normal[(0, 0)].abs().max(normal[(1, 1)].abs()).max(1e-300);
    if det.abs() < 1e-12 * scale * scale {
        return Err(SelfCalError::DegenerateData(
            "voltage pattern is constant; the normal equations are singular".into(),
        ));
    }
    let solution = normal.try_inverse().expect("checked determinant") * rhs;
    Ok((solution.x, solution.y))
}

/// Identify the eight per-cell parameter pairs by regularized nonlinear
/// least squares against the modeled references.
pub fn identify_params(
    datasets: &[&CalibrationDataset],
    init: (f64, f64),
    weights: &SelfCalWeights,
) -> Result<[LoadCellParams; 8], SelfCalError> {
    identify_params_with_budget(datasets, init, weights, 300)
}

/// [`identify_params`] with an explicit solver iteration cap.
pub fn identify_params_with_budget(
    datasets: &[&CalibrationDataset],
    init: (f64, f64),
    weights: &SelfCalWeights,
    max_iterations: usize,
) -> Result<[LoadCellParams; 8], SelfCalError> {
    let zeta0 = params_to_vector(&std::array::from_fn(|_| LoadCellParams {
        scale: init.0,
        offset: init.1,
    }));
    let sqrt_wn = weights.w_n.sqrt();
    let sqrt_wc = weights.w_c.sqrt();
    let sqrt_wz = weights.w_zeta.sqrt();

    let total_frames: usize = datasets.iter().map(|d| d.frames.len()).sum();
    let zeta0_res = zeta0.clone();
    let residual = move |zeta: &DVector<f64>| {
        let params = vector_to_params(zeta);
        let mut r = Vec::with_capacity(3 * total_frames + 16);
        for set in datasets {
            for (frame, cop_ref) in set.frames.iter().zip(&set.cop_refs) {
                let (grf, cop) = measure(frame, &set.ds.world_sensors, &params);
                r.push(sqrt_wn * (grf - set.grf_ref));
                r.push(sqrt_wc * (cop.x - cop_ref.x));
                r.push(sqrt_wc * (cop.y - cop_ref.y));
            }
        }
        for i in 0..16 {
            r.push(sqrt_wz * (zeta[i] - zeta0_res[i]));
        }
        DVector::from_vec(r)
    };

    let problem = NlsProblem::new(zeta0, residual).with_max_iterations(max_iterations);
    let report =
        nls_solve(&problem).map_err(|e| SelfCalError::IdentificationFailed(e.to_string()))?;
    if report.termination == Termination::Stalled && report.iterations <= 1 {
        return Err(SelfCalError::IdentificationFailed(format!(
            "solver stalled at the initial guess (cost {:.3e})",
            report.cost
        )));
    }
    Ok(vector_to_params(&report.x))
}

/// Per-foot measurement of one frame: (grf, foot-frame CoP) for the left
/// and right shoe. A foot carrying no load reports a zero CoP with zero
/// weight so it drops out of weighted combinations.
fn per_foot_measurement(
    frame: &SensorFrame,
    foot_positions: [&[Vector2<f64>; 4]; 2],
    params: &[LoadCellParams; 8],
) -> [(f64, Vector2<f64>); 2] {
    std::array::from_fn(|side| {
        let offset = side * 4;
        let mut total = 0.0;
        let mut weighted = Vector2::zeros();
        for i in 0..4 {
            let f = cell_force(&params[offset + i], frame.voltages[offset + i]);
            total += f;
            weighted += foot_positions[side][i] * f;
        }
        if total.abs() < 1e-12 {
            (total, Vector2::zeros())
        } else {
            (total, weighted / total)
        }
    })
}

fn foot_forces(frame: &SensorFrame, params: &[LoadCellParams; 8], side: usize) -> [f64; 4] {
    std::array::from_fn(|i| cell_force(&params[side * 4 + i], frame.voltages[side * 4 + i]))
}

/// GRF-weighted corrected double-support CoP series: each
/// foot's CoP is corrected in its own sole frame, mapped to the world,
/// and the two are averaged by their measured normal forces. Frames below
/// the force floor are excluded (`None`).
pub fn corrected_double_cop(
    frames: &[SensorFrame],
    ds: &DoubleSupportConfig,
    model: &crate::model::RobotModel,
    params: &[LoadCellParams; 8],
    corr_left: &CorrectionParams,
    corr_right: &CorrectionParams,
) -> Vec<Option<Vector2<f64>>> {
    let left_local = &model.left_foot.sensors;
    let right_local = &model.right_foot.sensors;
    let poses: [Pose; 2] = [Pose::identity(), ds.right_in_left];
    frames
        .iter()
        .map(|frame| {
            let feet = per_foot_measurement(frame, [left_local, right_local], params);
            let total = feet[0].0 + feet[1].0;
            if total <= FORCE_FLOOR {
                return None;
            }
            let mut acc = Vector2::zeros();
            for (side, (weight, cop_local)) in feet.iter().enumerate() {
                if weight.abs() < 1e-12 {
                    continue;
                }
                let corr = if side == 0 { corr_left } else { corr_right };
                let corrected = corrected_cop(cop_local, &foot_forces(frame, params, side), corr);
                let world = poses[side]
                    .transform_point(&nalgebra::Vector3::new(corrected.x, corrected.y, 0.0))
                    .xy();
                acc += world * *weight;
            }
            Some(acc / total)
        })
        .collect()
}

/// Fit the 32 double-support correction coefficients (16 per foot) so the
/// corrected CoP matches the modeled references on the training frames.
pub fn fit_double_correction(
    datasets: &[&CalibrationDataset],
    model: &crate::model::RobotModel,
    params: &[LoadCellParams; 8],
) -> Result<(CorrectionParams, CorrectionParams), SelfCalError> {
    let total_frames: usize = datasets.iter().map(|d| d.frames.len()).sum();
    if total_frames < 32 {
        return Err(SelfCalError::UnderDetermined {
            frames: total_frames,
        });
    }
    // Mean-scaled data term plus a tiny ridge: per-foot force terms are
    // rank-deficient on one stance (three balance equations span the
    // force patterns), so the ridge pins the gauge directions to the
    // minimum-norm point and makes the fit invariant to uniform frame
    // duplication.
    let data_scale = 1.0 / (total_frames as f64).sqrt();
    let ridge = 1e-8f64.sqrt();
    let residual = move |zeta: &DVector<f64>| {
        let corr_l = CorrectionParams::from_vector(&zeta.rows(0, 16).into_owned());
        let corr_r = CorrectionParams::from_vector(&zeta.rows(16, 16).into_owned());
        let mut r = Vec::with_capacity(2 * total_frames + 32);
        for set in datasets {
            let series =
                corrected_double_cop(&set.frames, &set.ds, model, params, &corr_l, &corr_r);
            for (corrected, reference) in series.iter().zip(&set.cop_refs) {
                match corrected {
                    Some(c) => {
                        r.push(data_scale * (c.x - reference.x));
                        r.push(data_scale * (c.y - reference.y));
                    }
                    None => {
                        // Excluded frame: contributes nothing.
                        r.push(0.0);
                        r.push(0.0);
                    }
                }
            }
        }
        for i in 0..32 {
            r.push(ridge * zeta[i]);
        }
        DVector::from_vec(r)
    };
    // Linear in the coefficients; negligible initial damping makes the
    // first step the exact solve.
    let problem = NlsProblem::new(DVector::zeros(32), residual).with_damping(DampingSchedule {
        initial: 1e-12,
        ..Default::default()
    });
    let report =
        nls_solve(&problem).map_err(|e| SelfCalError::IdentificationFailed(e.to_string()))?;
    Ok((
        CorrectionParams::from_vector(&report.x.rows(0, 16).into_owned()),
        CorrectionParams::from_vector(&report.x.rows(16, 16).into_owned()),
    ))
}

/// Measurement variant evaluated in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Shared (c0, d0) on every cell.
    InitialGuess,
    /// Identified per-cell parameters.
    SelfCal,
    /// Identified parameters plus the double-support CoP correction.
    Corrected,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::InitialGuess, Variant::SelfCal, Variant::Corrected];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::InitialGuess => "init",
            Variant::SelfCal => "selfcal",
            Variant::Corrected => "corrected",
        }
    }
}

/// One evaluation row: a variant on a role.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaeRow {
    pub variant: Variant,
    pub role: Role,
    pub grf: MaeReport,
    pub cop: MaeReport,
}

/// Full self-calibration output.
#[derive(Debug, Clone)]
pub struct SelfCalResult {
    pub initial: (f64, f64),
    pub params: [LoadCellParams; 8],
    pub corr_left: CorrectionParams,
    pub corr_right: CorrectionParams,
    pub rows: Vec<MaeRow>,
}

/// Per-frame traces for plotting.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub dataset: String,
    pub role: Role,
    pub variant: Variant,
    pub frame: usize,
    pub cop_meas: Vector2<f64>,
    pub cop_model: Vector2<f64>,
    pub grf_meas: f64,
    pub grf_model: f64,
}

/// Evaluate all three variants on both roles. Fails when a frame hash
/// appears in both roles.
pub fn evaluate(
    datasets: &[&CalibrationDataset],
    model: &crate::model::RobotModel,
    initial: (f64, f64),
    params: &[LoadCellParams; 8],
    corr_left: &CorrectionParams,
    corr_right: &CorrectionParams,
) -> Result<(Vec<MaeRow>, Vec<TraceRecord>), SelfCalError> {
    let mut train_hashes = std::collections::BTreeSet::new();
    let mut test_hashes = std::collections::BTreeSet::new();
    for set in datasets {
        for i in 0..set.frames.len() {
            let hash = set.frame_hash(i);
            match set.role {
                Role::Train => train_hashes.insert(hash),
                Role::Test => test_hashes.insert(hash),
            };
        }
    }
    if let Some(&hash) = train_hashes.intersection(&test_hashes).next() {
        return Err(SelfCalError::RoleOverlap { hash });
    }

    let init_params: [LoadCellParams; 8] = std::array::from_fn(|_| LoadCellParams {
        scale: initial.0,
        offset: initial.1,
    });
    let zero = CorrectionParams::zero();

    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for role in [Role::Train, Role::Test] {
        let role_sets: Vec<&&CalibrationDataset> =
            datasets.iter().filter(|d| d.role == role).collect();
        if role_sets.is_empty() {
            continue;
        }
        for variant in Variant::ALL {
            let mut grf_meas = Vec::new();
            let mut grf_ref = Vec::new();
            let mut cop_meas = Vec::new();
            let mut cop_ref = Vec::new();
            for set in &role_sets {
                let (p, cl, cr): (&[LoadCellParams; 8], _, _) = match variant {
                    Variant::InitialGuess => (&init_params, &zero, &zero),
                    Variant::SelfCal => (params, &zero, &zero),
                    Variant::Corrected => (params, corr_left, corr_right),
                };
                let corrected = corrected_double_cop(&set.frames, &set.ds, model, p, cl, cr);
                for ((frame, cop), reference) in set.frames.iter().zip(corrected).zip(&set.cop_refs)
                {
                    let Some(cop) = cop else { continue };
                    let (grf, _) = measure(frame, &set.ds.world_sensors, p);
                    grf_meas.push(grf);
                    grf_ref.push(set.grf_ref);
                    cop_meas.push(cop);
                    cop_ref.push(*reference);
                    traces.push(TraceRecord {
                        dataset: set.label.clone(),
                        role,
                        variant,
                        frame: frame.index,
                        cop_meas: cop,
                        cop_model: *reference,
                        grf_meas: grf,
                        grf_model: set.grf_ref,
                    });
                }
            }
            if grf_meas.is_empty() {
                continue;
            }
            rows.push(MaeRow {
                variant,
                role,
                grf: mae_grf(&grf_meas, &grf_ref)
                    .map_err(|e| SelfCalError::DegenerateData(e.to_string()))?,
                cop: mae_cop(&cop_meas, &cop_ref)
                    .map_err(|e| SelfCalError::DegenerateData(e.to_string()))?,
            });
        }
    }
    Ok((rows, traces))
}

/// Convenience lookup in the evaluation rows.
pub fn find_row(rows: &[MaeRow], variant: Variant, role: Role) -> Option<&MaeRow> {
    rows.iter().find(|r| r.variant == variant && r.role == role)
}
