//! Artifact persistence: schema-versioned CSV and TOML files, atomic
//! writes, content hashes and the per-stage manifest chain.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::rng::fnv1a;

pub const CONFIG_SCHEMA: &str = "footcal-config/1";
pub const SAMPLES_SCHEMA: &str = "footcal-samples/1";
pub const TRAJECTORY_SCHEMA: &str = "footcal-trajectory/1";
pub const DATASET_SCHEMA: &str = "footcal-dataset/1";
pub const GRID_SCHEMA: &str = "footcal-grid/1";
pub const MANUAL_SCHEMA: &str = "footcal-manual-cal/1";
pub const SELFCAL_PARAMS_SCHEMA: &str = "footcal-selfcal-params/1";
pub const RESULT_SCHEMA: &str = "footcal-result/1";
pub const TRACES_SCHEMA: &str = "footcal-traces/1";
pub const MANIFEST_SCHEMA: &str = "footcal-manifest/1";
pub const FEASIBILITY_SCHEMA: &str = "footcal-feasibility/1";

/// Write bytes atomically: a temp file in the destination directory is
/// renamed over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let io_err = |e: std::io::Error| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)
}

/// Content hash of a byte stream, as a fixed-width hex literal.
pub fn fnv_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(fnv_hex(&bytes))
}

/// A numeric CSV table with a schema header and key-value metadata in
/// comment lines:
///
/// ```text
/// # schema=footcal-dataset/1
/// # dx=0.02
/// frame,q_0,...
/// 0,0.1,...
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub schema: String,
    pub meta: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(schema: &str, columns: Vec<String>) -> Self {
        CsvTable {
            schema: schema.to_string(),
            meta: BTreeMap::new(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl std::fmt::Display) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn meta_f64(&self, key: &str, path: &Path) -> Result<f64, PipelineError> {
        self.meta
            .get(key)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| PipelineError::CorruptArtifact {
                path: path.display().to_string(),
                problem: format!("missing or non-numeric metadata key `{key}`"),
            })
    }

    /// Serialize with round-trip-exact float formatting.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# schema={}\n", self.schema));
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                out.push_str(&format!("{v}"));
                first = false;
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        write_atomic(path, self.render().as_bytes())
    }
}

/// Read a CSV artifact, rejecting unknown schemas.
pub fn read_csv(path: &Path, expected_schema: &str) -> Result<CsvTable, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingPrerequisite(
            path.display().to_string(),
        ));
    }
    let corrupt = |problem: String| PipelineError::CorruptArtifact {
        path: path.display().to_string(),
        problem,
    };
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut schema = None;
    let mut meta = BTreeMap::new();
    let mut columns = Vec::new();
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') {
            let body = line.trim_start_matches('#').trim();
            if let Some(s) = body.strip_prefix("schema=") {
                schema = Some(s.to_string());
            } else if let Some((k, v)) = body.split_once('=') {
                meta.insert(k.to_string(), v.to_string());
            }
            continue;
        }
        if columns.is_empty() {
            columns = line.split(',').map(str::to_string).collect();
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| corrupt(format!("bad number: {e}")))?;
        if row.len() != columns.len() {
            return Err(corrupt(format!(
                "row has {} fields, header has {}",
                row.len(),
                columns.len()
            )));
        }
        rows.push(row);
    }
    let schema = schema.ok_or_else(|| corrupt("missing schema header".into()))?;
    if schema != expected_schema {
        return Err(corrupt(format!(
            "schema `{schema}`, expected `{expected_schema}`"
        )));
    }
    Ok(CsvTable {
        schema,
        meta,
        columns,
        rows,
    })
}

/// Read a TOML artifact with a `schema` field, rejecting unknown versions.
pub fn read_toml<T: serde::de::DeserializeOwned>(
    path: &Path,
    expected_schema: &str,
) -> Result<T, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingPrerequisite(
            path.display().to_string(),
        ));
    }
    let corrupt = |problem: String| PipelineError::CorruptArtifact {
        path: path.display().to_string(),
        problem,
    };
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    #[derive(Deserialize)]
    struct SchemaOnly {
        schema: String,
    }
    let header: SchemaOnly =
        toml::from_str(&text).map_err(|e| corrupt(format!("not a TOML document: {e}")))?;
    if header.schema != expected_schema {
        return Err(corrupt(format!(
            "schema `{}`, expected `{expected_schema}`",
            header.schema
        )));
    }
    toml::from_str(&text).map_err(|e| corrupt(e.to_string()))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = toml::to_string(value).map_err(|e| PipelineError::StageFailed {
        stage: "serialize".into(),
        problem: e.to_string(),
    })?;
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub hash: String,
}

/// Per-stage record of input and output artifact hashes; chained through
/// shared files, it links every result back to the config bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub stage: String,
    pub config_hash: String,
    pub inputs: Vec<ManifestEntry>,
    pub outputs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(stage: &str, config_hash: &str) -> Self {
        Manifest {
            schema: MANIFEST_SCHEMA.to_string(),
            stage: stage.to_string(),
            config_hash: config_hash.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<(), PipelineError> {
        self.inputs.push(ManifestEntry {
            name: file_name(path),
            hash: hash_file(path)?,
        });
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> Result<(), PipelineError> {
        self.outputs.push(ManifestEntry {
            name: file_name(path),
            hash: hash_file(path)?,
        });
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), PipelineError> {
        write_toml(&out_dir.join(format!("manifest_{}.toml", self.stage)), self)
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = std::env::temp_dir().join("footcal-artifact-test");
        let path = dir.join("t.csv");
        let mut table =
            CsvTable::new(DATASET_SCHEMA, vec!["a".into(), "b".into()]).with_meta("dx", 0.02498273);
        table.push_row(vec![0.1 + 0.2, -1.0 / 3.0]);
        table.push_row(vec![f64::MIN_POSITIVE, 1e300]);
        table.write(&path).unwrap();
        let back = read_csv(&path, DATASET_SCHEMA).unwrap();
        assert_eq!(back.rows, table.rows, "bit-exact float round trip");
        assert_eq!(back.meta_f64("dx", &path).unwrap(), 0.02498273);
    }

    #[test]
    fn unknown_schema_is_corrupt() {
        let dir = std::env::temp_dir().join("footcal-artifact-test");
        let path = dir.join("s.csv");
        let table = CsvTable::new("footcal-dataset/999", vec!["a".into()]);
        table.write(&path).unwrap();
        assert!(matches!(
            read_csv(&path, DATASET_SCHEMA),
            Err(PipelineError::CorruptArtifact { .. })
        ));
    }

    #[test]
    fn missing_file_is_a_missing_prerequisite() {
        let path = Path::new("/nonexistent/footcal/thing.csv");
        assert!(matches!(
            read_csv(path, DATASET_SCHEMA),
            Err(PipelineError::MissingPrerequisite(_))
        ));
    }
}
