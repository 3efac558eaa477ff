//! Pipeline orchestration: configuration loading, stage execution,
//! artifact persistence with schema-versioned files and manifest hash
//! chains, and the report printer.
//!
//! Stages: sample -> plan -> simulate -> self-cal -> evaluate, plus the
//! independent manual-cal stage and the report viewer. Artifacts are
//! written atomically and reruns with the same config are byte-identical.

mod artifacts;
mod config;
mod report;
mod stages;

pub use artifacts::{
    fnv_hex, read_csv, read_toml, write_atomic, CsvTable, Manifest, ManifestEntry, CONFIG_SCHEMA,
    DATASET_SCHEMA, FEASIBILITY_SCHEMA, GRID_SCHEMA, MANIFEST_SCHEMA, MANUAL_SCHEMA, RESULT_SCHEMA,
    SAMPLES_SCHEMA, SELFCAL_PARAMS_SCHEMA, TRACES_SCHEMA, TRAJECTORY_SCHEMA,
};
pub use config::{ManualSection, PipelineConfig, SelfCalSection, SimulateSection, Stage};
pub use report::render_report;
pub use stages::{
    run_all, run_stage, FeasibilityFile, ManualCalFile, ManualShoeEntry, ResultFile,
    SelfCalParamsFile, SimTruthFile,
};

use std::sync::OnceLock;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("missing prerequisite artifact `{0}`; run the earlier stage first")]
    MissingPrerequisite(String),
    #[error("config: {0}")]
    BadConfig(String),
    #[error("corrupt artifact `{path}`: {problem}")]
    CorruptArtifact { path: String, problem: String },
    #[error("stage `{stage}` failed: {problem}")]
    StageFailed { stage: String, problem: String },
    #[error("io error on `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code contract: 0 success, 2 missing prerequisite,
    /// 3 bad config, 4 corrupt artifact, 5 stage/solver failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::MissingPrerequisite(_) => 2,
            PipelineError::BadConfig(_) => 3,
            PipelineError::CorruptArtifact { .. } => 4,
            PipelineError::StageFailed { .. } | PipelineError::Io { .. } => 5,
        }
    }
}

/// Log levels driven by the FOOTCAL_LOG environment variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LogLevel {
    Error,
    Info,
    Debug,
}

fn log_level() -> LogLevel {
    static LEVEL: OnceLock<LogLevel> = OnceLock::new();
    *LEVEL.get_or_init(|| match std::env::var("FOOTCAL_LOG").as_deref() {
        Ok("debug") => LogLevel::Debug,
        Ok("error") => LogLevel::Error,
        _ => LogLevel::Info,
    })
}

pub(crate) fn log(level: LogLevel, msg: &str) {
    if level <= log_level() {
        eprintln!("footcal: {msg}");
    }
}
