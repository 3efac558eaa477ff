//! Stage implementations. Every stage reads its prerequisites from the
//! output directory, writes its artifacts atomically, and records a
//! manifest entry with content hashes chaining back to the config.

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use super::artifacts::{
    fnv_hex, read_csv, read_toml, write_atomic, write_toml, CsvTable, Manifest, DATASET_SCHEMA,
    FEASIBILITY_SCHEMA, GRID_SCHEMA, MANUAL_SCHEMA, RESULT_SCHEMA, SAMPLES_SCHEMA,
    SELFCAL_PARAMS_SCHEMA, TRACES_SCHEMA, TRAJECTORY_SCHEMA,
};
use super::{log, LogLevel, PipelineConfig, PipelineError, Stage};
use crate::manual_cal::{
    corrected_cop, fit_correction, mae_cop, mae_grf, perturbed_shoe, run_grid_protocol,
    CorrectionParams, MaeReport,
};
use crate::model::{RobotModel, Side};
use crate::planner::{certify_trajectory, plan_trajectory, reach_stance};
use crate::rng::Rng;
use crate::sampler::{sample_double_supports, DoubleSupportConfig};
use crate::selfcal::{
    evaluate, fit_double_correction, identify_params_with_budget, initial_guess,
    CalibrationDataset, MaeRow, Role, TraceRecord,
};
use crate::sensors::{
    heterogeneous_truth, measured_grf, simulate_frame, LoadCellParams, NoiseState, SensorFrame,
};

/// Run one stage against the artifacts in the config's output directory.
pub fn run_stage(config: &PipelineConfig, stage: Stage) -> Result<(), PipelineError> {
    let model = config.model()?;
    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| PipelineError::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    let config_hash = fnv_hex(config.canonical_toml().as_bytes());
    log(
        LogLevel::Info,
        &format!("stage {} -> {}", stage.name(), out.display()),
    );
    match stage {
        Stage::Sample => stage_sample(config, &model, &config_hash),
        Stage::Plan => stage_plan(config, &model, &config_hash),
        Stage::Simulate => stage_simulate(config, &model, &config_hash),
        Stage::ManualCal => stage_manual_cal(config, &model, &config_hash),
        Stage::SelfCal => stage_self_cal(config, &model, &config_hash),
        Stage::Evaluate => stage_evaluate(config, &model, &config_hash),
        Stage::Report => {
            let text = super::report::render_report(config)?;
            print!("{text}");
            Ok(())
        }
    }
}

/// Run every stage listed in the config, in order.
pub fn run_all(config: &PipelineConfig) -> Result<(), PipelineError> {
    for stage in &config.stages {
        run_stage(config, *stage)?;
    }
    Ok(())
}

fn failed(stage: &str, problem: impl std::fmt::Display) -> PipelineError {
    PipelineError::StageFailed {
        stage: stage.to_string(),
        problem: problem.to_string(),
    }
}

fn samples_path(out: &Path) -> PathBuf {
    out.join("samples.csv")
}

fn trajectory_path(out: &Path, idx: usize) -> PathBuf {
    out.join(format!("trajectory_{idx}.csv"))
}

fn dataset_path(out: &Path, idx: usize) -> PathBuf {
    out.join(format!("dataset_{idx}.csv"))
}

// ---------------------------------------------------------------- sample

fn stage_sample(
    config: &PipelineConfig,
    model: &RobotModel,
    config_hash: &str,
) -> Result<(), PipelineError> {
    let samples =
        sample_double_supports(&config.sampler, model).map_err(|e| failed("sample", e))?;
    let mut table = CsvTable::new(
        SAMPLES_SCHEMA,
        vec!["idx".into(), "dx".into(), "dy".into(), "dtheta".into()],
    );
    for (i, s) in samples.iter().enumerate() {
        table.push_row(vec![i as f64, s.dx, s.dy, s.dtheta]);
    }
    let path = samples_path(&config.out_dir);
    table.write(&path)?;
    let mut manifest = Manifest::new("sample", config_hash);
    manifest.record_output(&path)?;
    manifest.write(&config.out_dir)
}

fn load_samples(
    config: &PipelineConfig,
    model: &RobotModel,
) -> Result<Vec<DoubleSupportConfig>, PipelineError> {
    let path = samples_path(&config.out_dir);
    let table = read_csv(&path, SAMPLES_SCHEMA)?;
    table
        .rows
        .iter()
        .map(|row| {
            DoubleSupportConfig::new(row[1], row[2], row[3], model).map_err(|e| {
                PipelineError::CorruptArtifact {
                    path: path.display().to_string(),
                    problem: e.to_string(),
                }
            })
        })
        .collect()
}

// ------------------------------------------------------------------ plan

#[derive(Debug, Serialize, Deserialize)]
pub struct FeasibilityFile {
    pub schema: String,
    pub stance: usize,
    pub complete: bool,
    pub certified: bool,
    pub states: usize,
    pub guard_switches: usize,
    pub min_cop_margin: f64,
    pub min_capsule_distance: f64,
    pub max_tf_residual: f64,
    pub violations: Vec<String>,
}

fn stage_plan(
    config: &PipelineConfig,
    model: &RobotModel,
    config_hash: &str,
) -> Result<(), PipelineError> {
    let samples = load_samples(config, model)?;
    let mut manifest = Manifest::new("plan", config_hash);
    manifest.record_input(&samples_path(&config.out_dir))?;

    for (idx, ds) in samples.iter().enumerate() {
        log(LogLevel::Debug, &format!("planning stance {idx}"));
        let q0 = reach_stance(model, ds, &config.planner).map_err(|e| failed("plan", e))?;
        let traj =
            plan_trajectory(model, ds, &q0, &config.planner).map_err(|e| failed("plan", e))?;
        let report =
            certify_trajectory(model, ds, &traj, &config.planner).map_err(|e| failed("plan", e))?;
        if !report.ok {
            return Err(failed(
                "plan",
                format!(
                    "stance {idx} failed certification: {}",
                    report.violations.join("; ")
                ),
            ));
        }

        let nq = model.nq();
        let mut columns = vec!["step".to_string()];
        columns.extend((0..nq).map(|k| format!("q_{k}")));
        columns.extend((0..nq).map(|k| format!("u_{k}")));
        columns.extend(["cop_x".into(), "cop_y".into(), "landmark_idx".into()]);
        let mut table = CsvTable::new(TRAJECTORY_SCHEMA, columns)
            .with_meta("dx", ds.dx)
            .with_meta("dy", ds.dy)
            .with_meta("dtheta", ds.dtheta)
            .with_meta("complete", traj.complete);
        for (i, q) in traj.states.iter().enumerate() {
            let mut row = Vec::with_capacity(2 * nq + 4);
            row.push(i as f64);
            row.extend(q.iter().copied());
            // Outgoing transition; zeros on the final state.
            match traj.transitions.get(i) {
                Some(u) => row.extend(u.iter().copied()),
                None => row.extend(std::iter::repeat_n(0.0, nq)),
            }
            row.push(traj.cops[i].x);
            row.push(traj.cops[i].y);
            row.push(traj.target_index[i] as f64);
            table.push_row(row);
        }
        let traj_path = trajectory_path(&config.out_dir, idx);
        table.write(&traj_path)?;
        manifest.record_output(&traj_path)?;

        let min_margin = report
            .per_state
            .iter()
            .map(|s| s.cop_inside_margin)
            .fold(f64::INFINITY, f64::min);
        let min_capsule = report
            .per_state
            .iter()
            .map(|s| s.min_capsule_distance)
            .fold(f64::INFINITY, f64::min);
        let max_tf = report
            .per_state
            .iter()
            .map(|s| s.tf_residual)
            .fold(0.0f64, f64::max);
        let feas = FeasibilityFile {
            schema: FEASIBILITY_SCHEMA.to_string(),
            stance: idx,
            complete: traj.complete,
            certified: report.ok,
            states: traj.states.len(),
            guard_switches: report.guard_switches,
            min_cop_margin: min_margin,
            min_capsule_distance: min_capsule,
            max_tf_residual: max_tf,
            violations: report.violations.clone(),
        };
        let feas_path = config.out_dir.join(format!("feasibility_{idx}.toml"));
        write_toml(&feas_path, &feas)?;
        manifest.record_output(&feas_path)?;
    }
    manifest.write(&config.out_dir)
}

// -------------------------------------------------------------- simulate

#[derive(Debug, Serialize, Deserialize)]
pub struct SimTruthFile {
    pub schema: String,
    pub cells: Vec<LoadCellParams>,
}

fn stage_simulate(
    config: &PipelineConfig,
    model: &RobotModel,
    config_hash: &str,
) -> Result<(), PipelineError> {
    let samples = load_samples(config, model)?;
    let mut manifest = Manifest::new("simulate", config_hash);
    manifest.record_input(&samples_path(&config.out_dir))?;

    let truth = heterogeneous_truth(
        &mut Rng::derive(config.seed, "truth"),
        config.simulate.truth_spread,
        config.simulate.truth_shoe_bias,
    );
    let truth_path = config.out_dir.join("sim_truth.toml");
    write_toml(
        &truth_path,
        &SimTruthFile {
            schema: "footcal-sim-truth/1".to_string(),
            cells: truth.to_vec(),
        },
    )?;
    manifest.record_output(&truth_path)?;

    let nq = model.nq();
    for (idx, ds) in samples.iter().enumerate() {
        let traj_path = trajectory_path(&config.out_dir, idx);
        let table = read_csv(&traj_path, TRAJECTORY_SCHEMA)?;
        manifest.record_input(&traj_path)?;
        let states: Vec<DVector<f64>> = table
            .rows
            .iter()
            .map(|row| DVector::from_iterator(nq, row[1..1 + nq].iter().copied()))
            .collect();
        if states.is_empty() {
            return Err(PipelineError::CorruptArtifact {
                path: traj_path.display().to_string(),
                problem: "empty trajectory".into(),
            });
        }

        // Frames: every state, optionally with interpolated sub-steps on
        // each transition.
        let per = config.simulate.frames_per_transition.max(1);
        let mut configs: Vec<DVector<f64>> = Vec::new();
        for pair in states.windows(2) {
            for k in 0..per {
                let t = k as f64 / per as f64;
                configs.push(&pair[0] + (&pair[1] - &pair[0]) * t);
            }
        }
        configs.push(states.last().expect("non-empty").clone());

        let mut noise = NoiseState::new(&config.noise, &format!("dataset_{idx}"));
        let mut columns = vec!["frame".to_string()];
        columns.extend((0..nq).map(|k| format!("q_{k}")));
        columns.extend((0..8).map(|k| format!("S_{k}")));
        columns.extend(["cop_x".into(), "cop_y".into(), "grf".into()]);
        let mut out_table = CsvTable::new(DATASET_SCHEMA, columns)
            .with_meta("dx", ds.dx)
            .with_meta("dy", ds.dy)
            .with_meta("dtheta", ds.dtheta)
            .with_meta("grf_ref", model.weight());
        for (frame_idx, q) in configs.iter().enumerate() {
            let frame = simulate_frame(model, q, ds, &truth, &mut noise, frame_idx)
                .map_err(|e| failed("simulate", e))?;
            let cop_ref = model.modeled_cop(q).map_err(|e| failed("simulate", e))?;
            let mut row = Vec::with_capacity(nq + 12);
            row.push(frame_idx as f64);
            row.extend(q.iter().copied());
            row.extend(frame.voltages.iter().copied());
            row.push(cop_ref.x);
            row.push(cop_ref.y);
            row.push(model.weight());
            out_table.push_row(row);
        }
        if out_table.rows.len() < CalibrationDataset::MIN_FRAMES {
            return Err(failed(
                "simulate",
                format!(
                    "dataset {idx} has {} frames, below the minimum {}; \
                     raise simulate.frames_per_transition",
                    out_table.rows.len(),
                    CalibrationDataset::MIN_FRAMES
                ),
            ));
        }
        let path = dataset_path(&config.out_dir, idx);
        out_table.write(&path)?;
        manifest.record_output(&path)?;
    }
    manifest.write(&config.out_dir)
}

fn load_dataset(
    config: &PipelineConfig,
    model: &RobotModel,
    idx: usize,
    role: Role,
) -> Result<CalibrationDataset, PipelineError> {
    let path = dataset_path(&config.out_dir, idx);
    let table = read_csv(&path, DATASET_SCHEMA)?;
    let corrupt = |problem: String| PipelineError::CorruptArtifact {
        path: path.display().to_string(),
        problem,
    };
    let nq = model.nq();
    let ds = DoubleSupportConfig::new(
        table.meta_f64("dx", &path)?,
        table.meta_f64("dy", &path)?,
        table.meta_f64("dtheta", &path)?,
        model,
    )
    .map_err(|e| corrupt(e.to_string()))?;
    let grf_ref = table.meta_f64("grf_ref", &path)?;
    let mut frames = Vec::with_capacity(table.rows.len());
    let mut refs = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        if row.len() != 1 + nq + 8 + 3 {
            return Err(corrupt(format!("row width {}", row.len())));
        }
        let q = DVector::from_iterator(nq, row[1..1 + nq].iter().copied());
        let voltages: [f64; 8] = std::array::from_fn(|k| row[1 + nq + k]);
        frames.push(SensorFrame {
            index: row[0] as usize,
            voltages,
            q,
        });
        refs.push(Vector2::new(row[1 + nq + 8], row[1 + nq + 9]));
    }
    CalibrationDataset::new(format!("dataset_{idx}"), ds, frames, refs, grf_ref, role)
        .map_err(|e| corrupt(e.to_string()))
}

// ------------------------------------------------------------ manual-cal

#[derive(Debug, Serialize, Deserialize)]
pub struct ManualShoeEntry {
    pub side: String,
    pub cells: Vec<LoadCellParams>,
    pub correction: CorrectionParams,
    pub raw_cop_mae: MaeReport,
    pub corrected_cop_mae: MaeReport,
    pub grf_mae: MaeReport,
    pub samples: usize,
    pub skipped: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManualCalFile {
    pub schema: String,
    pub shoes: Vec<ManualShoeEntry>,
}

fn stage_manual_cal(
    config: &PipelineConfig,
    model: &RobotModel,
    config_hash: &str,
) -> Result<(), PipelineError> {
    let mut manifest = Manifest::new("manual-cal", config_hash);
    let mut shoes = Vec::new();
    for side in Side::BOTH {
        let side_name = match side {
            Side::Left => "left",
            Side::Right => "right",
        };
        let mut rng = Rng::derive(config.seed, &format!("manual-truth/{side_name}"));
        let truth = perturbed_shoe(
            model,
            side,
            &mut rng,
            config.manual.position_jitter,
            config.manual.param_spread,
        );
        let run = run_grid_protocol(model, side, &truth, &config.manual.protocol, &config.noise)
            .map_err(|e| failed("manual-cal", e))?;
        let params =
            fit_correction(&run.samples, &run.truths).map_err(|e| failed("manual-cal", e))?;

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
        let entry = ManualShoeEntry {
            side: side_name.to_string(),
            cells: run.assumed.cells.to_vec(),
            correction: params,
            raw_cop_mae: mae_cop(&raw, &run.truths).map_err(|e| failed("manual-cal", e))?,
            corrected_cop_mae: mae_cop(&corrected, &run.truths)
                .map_err(|e| failed("manual-cal", e))?,
            grf_mae: mae_grf(&grf, &run.applied).map_err(|e| failed("manual-cal", e))?,
            samples: run.samples.len(),
            skipped: run.skipped.len(),
        };
        shoes.push(entry);

        let mut table = CsvTable::new(
            GRID_SCHEMA,
            vec![
                "hole_x".into(),
                "hole_y".into(),
                "weight_kg".into(),
                "f1".into(),
                "f2".into(),
                "f3".into(),
                "f4".into(),
                "cop_x".into(),
                "cop_y".into(),
            ],
        )
        .with_meta("side", side_name);
        for ((sample, truth_pos), applied) in run.samples.iter().zip(&run.truths).zip(&run.applied)
        {
            table.push_row(vec![
                truth_pos.x,
                truth_pos.y,
                applied / model.gravity,
                sample.forces[0],
                sample.forces[1],
                sample.forces[2],
                sample.forces[3],
                sample.measured.x,
                sample.measured.y,
            ]);
        }
        let grid_path = config.out_dir.join(format!("grid_{side_name}.csv"));
        table.write(&grid_path)?;
        manifest.record_output(&grid_path)?;
    }
    let manual_path = config.out_dir.join("manual_cal.toml");
    write_toml(
        &manual_path,
        &ManualCalFile {
            schema: MANUAL_SCHEMA.to_string(),
            shoes,
        },
    )?;
    manifest.record_output(&manual_path)?;
    manifest.write(&config.out_dir)
}

// -------------------------------------------------------------- self-cal

#[derive(Debug, Serialize, Deserialize)]
pub struct SelfCalParamsFile {
    pub schema: String,
    pub initial_scale: f64,
    pub initial_offset: f64,
    pub cells: Vec<LoadCellParams>,
    pub corr_left: CorrectionParams,
    pub corr_right: CorrectionParams,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

fn stage_self_cal(
    config: &PipelineConfig,
    model: &RobotModel,
    config_hash: &str,
) -> Result<(), PipelineError> {
    let samples = load_samples(config, model)?;
    let mut manifest = Manifest::new("self-cal", config_hash);

    // Random train/test split, seeded.
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    Rng::derive(config.seed, "split").shuffle(&mut indices);
    let train_indices: Vec<usize> = indices[..config.selfcal.train_count].to_vec();
    let test_indices: Vec<usize> = indices[config.selfcal.train_count..].to_vec();

    let mut datasets = Vec::new();
    for idx in 0..samples.len() {
        let role = if train_indices.contains(&idx) {
            Role::Train
        } else {
            Role::Test
        };
        manifest.record_input(&dataset_path(&config.out_dir, idx))?;
        datasets.push(load_dataset(config, model, idx, role)?);
    }
    let train: Vec<&CalibrationDataset> =
        datasets.iter().filter(|d| d.role == Role::Train).collect();

    let initial = initial_guess(&train).map_err(|e| failed("self-cal", e))?;
    let params = identify_params_with_budget(
        &train,
        initial,
        &config.selfcal.weights,
        config.selfcal.max_iterations,
    )
    .map_err(|e| failed("self-cal", e))?;
    let (corr_left, corr_right) =
        fit_double_correction(&train, model, &params).map_err(|e| failed("self-cal", e))?;

    let path = config.out_dir.join("selfcal_params.toml");
    write_toml(
        &path,
        &SelfCalParamsFile {
            schema: SELFCAL_PARAMS_SCHEMA.to_string(),
            initial_scale: initial.0,
            initial_offset: initial.1,
            cells: params.to_vec(),
            corr_left,
            corr_right,
            train_indices,
            test_indices,
        },
    )?;
    manifest.record_output(&path)?;
    manifest.write(&config.out_dir)
}

// -------------------------------------------------------------- evaluate

#[derive(Debug, Serialize, Deserialize)]
pub struct ResultFile {
    pub schema: String,
    pub seed: u64,
    pub initial_scale: f64,
    pub initial_offset: f64,
    pub cells: Vec<LoadCellParams>,
    pub corr_left: CorrectionParams,
    pub corr_right: CorrectionParams,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub rows: Vec<MaeRow>,
    /// Canonical echo of the config that produced this result.
    pub config_echo: String,
}

fn stage_evaluate(
    config: &PipelineConfig,
    model: &RobotModel,
    config_hash: &str,
) -> Result<(), PipelineError> {
    let params_path = config.out_dir.join("selfcal_params.toml");
    let fitted: SelfCalParamsFile = read_toml(&params_path, SELFCAL_PARAMS_SCHEMA)?;
    let mut manifest = Manifest::new("evaluate", config_hash);
    manifest.record_input(&params_path)?;

    let total = fitted.train_indices.len() + fitted.test_indices.len();
    let mut datasets = Vec::new();
    for idx in 0..total {
        let role = if fitted.train_indices.contains(&idx) {
            Role::Train
        } else {
            Role::Test
        };
        manifest.record_input(&dataset_path(&config.out_dir, idx))?;
        datasets.push(load_dataset(config, model, idx, role)?);
    }
    let refs: Vec<&CalibrationDataset> = datasets.iter().collect();
    let cells: [LoadCellParams; 8] =
        fitted
            .cells
            .clone()
            .try_into()
            .map_err(|_| PipelineError::CorruptArtifact {
                path: params_path.display().to_string(),
                problem: "expected exactly 8 cells".into(),
            })?;
    let (rows, traces) = evaluate(
        &refs,
        model,
        (fitted.initial_scale, fitted.initial_offset),
        &cells,
        &fitted.corr_left,
        &fitted.corr_right,
    )
    .map_err(|e| failed("evaluate", e))?;

    let result_path = config.out_dir.join("selfcal_result.toml");
    write_toml(
        &result_path,
        &ResultFile {
            schema: RESULT_SCHEMA.to_string(),
            seed: config.seed,
            initial_scale: fitted.initial_scale,
            initial_offset: fitted.initial_offset,
            cells: fitted.cells.clone(),
            corr_left: fitted.corr_left,
            corr_right: fitted.corr_right,
            train_indices: fitted.train_indices.clone(),
            test_indices: fitted.test_indices.clone(),
            rows,
            config_echo: config.canonical_toml(),
        },
    )?;
    manifest.record_output(&result_path)?;

    let traces_path = config.out_dir.join("traces.csv");
    write_traces(&traces_path, &traces)?;
    manifest.record_output(&traces_path)?;
    manifest.write(&config.out_dir)
}

/// Trace CSV with a string-valued variant column; write-only plot data.
fn write_traces(path: &Path, traces: &[TraceRecord]) -> Result<(), PipelineError> {
    let mut out = String::new();
    out.push_str(&format!("# schema={TRACES_SCHEMA}\n"));
    out.push_str(
        "dataset,role,variant,frame,cop_meas_x,cop_meas_y,cop_model_x,cop_model_y,grf_meas,grf_model\n",
    );
    for t in traces {
        let role = match t.role {
            Role::Train => "train",
            Role::Test => "test",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            t.dataset,
            role,
            t.variant.name(),
            t.frame,
            t.cop_meas.x,
            t.cop_meas.y,
            t.cop_model.x,
            t.cop_model.y,
            t.grf_meas,
            t.grf_model
        ));
    }
    write_atomic(path, out.as_bytes())
}
