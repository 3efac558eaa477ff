//! Pipeline configuration file: one TOML document driving every stage,
//! with per-stage sections and a single global seed from which all
//! stage-level seeds are derived.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{artifacts::CONFIG_SCHEMA, PipelineError};
use crate::manual_cal::GridProtocol;
use crate::model::{RobotFile, RobotModel};
use crate::planner::PlannerConfig;
use crate::rng::Rng;
use crate::sampler::SamplerConfig;
use crate::selfcal::SelfCalWeights;
use crate::sensors::NoiseModel;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "sample")]
    Sample,
    #[serde(rename = "plan")]
    Plan,
    #[serde(rename = "simulate")]
    Simulate,
    #[serde(rename = "manual-cal")]
    ManualCal,
    #[serde(rename = "self-cal")]
    SelfCal,
    #[serde(rename = "evaluate")]
    Evaluate,
    #[serde(rename = "report")]
    Report,
}

impl Stage {
    pub const PIPELINE: [Stage; 6] = [
        Stage::Sample,
        Stage::Plan,
        Stage::Simulate,
        Stage::ManualCal,
        Stage::SelfCal,
        Stage::Evaluate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Sample => "sample",
            Stage::Plan => "plan",
            Stage::Simulate => "simulate",
            Stage::ManualCal => "manual-cal",
            Stage::SelfCal => "self-cal",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    pub fn parse(name: &str) -> Option<Stage> {
        Stage::PIPELINE
            .into_iter()
            .chain([Stage::Report])
            .find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// Extra interpolated frames per planned transition (1 = one frame
    /// per trajectory state).
    pub frames_per_transition: usize,
    /// Uniform per-cell spread of the ground-truth parameters around
    /// nominal.
    pub truth_spread: f64,
    /// Opposite-signed per-shoe gain bias of the ground truth.
    pub truth_shoe_bias: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            frames_per_transition: 3,
            truth_spread: 0.3,
            truth_shoe_bias: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfCalSection {
    pub weights: SelfCalWeights,
    pub train_count: usize,
    pub test_count: usize,
    /// Iteration cap of the identification solve.
    pub max_iterations: usize,
}

impl Default for SelfCalSection {
    fn default() -> Self {
        SelfCalSection {
            weights: SelfCalWeights::default(),
            train_count: 3,
            test_count: 2,
            max_iterations: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManualSection {
    pub protocol: GridProtocol,
    /// True sensor positions jitter, m.
    pub position_jitter: f64,
    /// True cell-parameter spread around nominal.
    pub param_spread: f64,
}

impl Default for ManualSection {
    fn default() -> Self {
        ManualSection {
            protocol: GridProtocol::default(),
            position_jitter: 0.002,
            param_spread: 0.3,
        }
    }
}

/// The full pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema: String,
    /// Robot model path, or "builtin:nao_like" for the embedded default.
    /// Relative paths resolve against the config file's directory.
    pub model: String,
    pub out_dir: PathBuf,
    /// Global seed; every stage derives its own stream from it.
    pub seed: u64,
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub selfcal: SelfCalSection,
    #[serde(default)]
    pub manual: ManualSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema: CONFIG_SCHEMA.to_string(),
            model: "builtin:nao_like".to_string(),
            out_dir: PathBuf::from("out"),
            seed: 20240801,
            stages: Stage::PIPELINE.to_vec(),
            sampler: SamplerConfig::default(),
            planner: PlannerConfig::default(),
            noise: NoiseModel::default(),
            simulate: SimulateSection::default(),
            selfcal: SelfCalSection::default(),
            manual: ManualSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Parse and validate a config document. `base_dir` anchors relative
    /// paths (usually the config file's directory).
    pub fn parse(text: &str, base_dir: &Path) -> Result<PipelineConfig, PipelineError> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::BadConfig(e.to_string()))?;
        if cfg.schema != CONFIG_SCHEMA {
            return Err(PipelineError::BadConfig(format!(
                "unknown config schema `{}`, expected `{CONFIG_SCHEMA}`",
                cfg.schema
            )));
        }
        if !cfg.model.starts_with("builtin:") {
            let model_path = base_dir.join(&cfg.model);
            if !model_path.exists() {
                return Err(PipelineError::BadConfig(format!(
                    "model file `{}` does not exist",
                    model_path.display()
                )));
            }
            cfg.model = model_path.to_string_lossy().into_owned();
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base_dir.join(&cfg.out_dir);
        }
        if cfg.selfcal.train_count == 0 {
            return Err(PipelineError::BadConfig(
                "selfcal.train_count must be at least 1".into(),
            ));
        }
        if cfg.selfcal.train_count + cfg.selfcal.test_count != cfg.sampler.count {
            return Err(PipelineError::BadConfig(format!(
                "train_count {} + test_count {} must equal sampler.count {}",
                cfg.selfcal.train_count, cfg.selfcal.test_count, cfg.sampler.count
            )));
        }
        cfg.apply_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        PipelineConfig::parse(&text, base)
    }

    /// Re-derive all stage seeds from a global seed.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sampler.seed = Rng::derive(seed, "sampler").next_u64();
        self.noise.seed = Rng::derive(seed, "noise").next_u64();
    }

    /// Load the robot model referenced by this config.
    pub fn model(&self) -> Result<RobotModel, PipelineError> {
        if let Some(name) = self.model.strip_prefix("builtin:") {
            if name == "nao_like" {
                return Ok(RobotModel::nao_like());
            }
            return Err(PipelineError::BadConfig(format!(
                "unknown builtin model `{name}`"
            )));
        }
        RobotFile::load(Path::new(&self.model)).map_err(|e| PipelineError::BadConfig(e.to_string()))
    }

    /// Canonical serialization used for hashing and config echo. The
    /// output directory is normalized away: it locates artifacts but is
    /// not part of the experiment's identity.
    pub fn canonical_toml(&self) -> String {
        let mut normalized = self.clone();
        normalized.out_dir = PathBuf::from("out");
        toml::to_string(&normalized).expect("config serializes")
    }
}
