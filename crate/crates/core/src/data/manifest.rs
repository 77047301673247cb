//! Run manifests and delimited metric tables.
//!
//! Every table file starts with a `schema_version,<n>` row, then the column
//! header, then one row per record. Floats are written in Rust's shortest
//! round-trip form so a table reads back to the exact values it was built from.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SnnError};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const TABLE_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub experiment: String,
    pub version: String,
    pub seed: u64,
    /// Effective configuration after merging file values and flags.
    pub config: serde_json::Value,
    /// Experiment-specific summary numbers.
    pub summary: serde_json::Value,
    /// Conditions noticed during the run, such as a zero-variance normalization.
    pub flags: Vec<String>,
    /// Table files written next to the manifest.
    pub tables: Vec<String>,
}

impl RunManifest {
    pub fn new(experiment: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            experiment: experiment.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            summary: serde_json::Value::Object(Default::default()),
            flags: Vec::new(),
            tables: Vec::new(),
        }
    }

    pub fn flag(&mut self, flag: impl Into<String>) {
        let flag = flag.into();
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MetricsTable {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(SnnError::LengthMismatch {
                context: "metrics row",
                expected: self.columns.len(),
                actual: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Parses a column as floats; `None` when missing or malformed.
    pub fn column_f64(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        self.rows.iter().map(|r| r[i].parse().ok()).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| io_error(path, e);
        let mut w = csv::WriterBuilder::new().flexible(true).from_path(path).map_err(io)?;
        w.write_record(["schema_version", &TABLE_SCHEMA_VERSION.to_string()]).map_err(io)?;
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row).map_err(io)?;
        }
        w.flush().map_err(|source| SnnError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(path)
            .map_err(|e| io_error(path, e))?;
        let mut records = r.records();
        let parse = |reason: String| SnnError::Parse {
            path: path.to_path_buf(),
            reason,
        };
        let version = records
            .next()
            .ok_or_else(|| parse("empty table".into()))?
            .map_err(|e| parse(e.to_string()))?;
        if version.get(0) != Some("schema_version") {
            return Err(parse("missing schema_version row".into()));
        }
        if version.get(1) != Some(TABLE_SCHEMA_VERSION.to_string().as_str()) {
            return Err(parse(format!("unsupported schema version {:?}", version.get(1))));
        }
        let header = records
            .next()
            .ok_or_else(|| parse("missing column header".into()))?
            .map_err(|e| parse(e.to_string()))?;
        let mut table = Self::new(&header.iter().collect::<Vec<_>>());
        for rec in records {
            let rec = rec.map_err(|e| parse(e.to_string()))?;
            table.push(rec.iter().map(str::to_string).collect()).map_err(|e| parse(e.to_string()))?;
        }
        Ok(table)
    }
}

fn io_error(path: &Path, e: csv::Error) -> SnnError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => SnnError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => SnnError::Parse {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    }
}

/// Writes the manifest and its tables into `dir`, creating it when needed.
pub fn write_metrics(dir: &Path, manifest: &RunManifest, tables: &[(&str, &MetricsTable)]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| SnnError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut manifest = manifest.clone();
    for (name, table) in tables {
        table.write(&dir.join(name))?;
        if !manifest.tables.iter().any(|t| t == name) {
            manifest.tables.push((*name).to_string());
        }
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| SnnError::Parse {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    fs::write(&path, text + "\n").map_err(|source| SnnError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Reads a manifest from its file or from the directory holding it.
pub fn read_manifest(path: &Path) -> Result<(RunManifest, PathBuf)> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|source| SnnError::Io {
        path: file.clone(),
        source,
    })?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| SnnError::Parse {
        path: file.clone(),
        reason: e.to_string(),
    })?;
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, dir))
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_run_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let t = MetricsTable::new(&["iteration", "loss"]);
        let path = dir.path().join("m.csv");
        t.write(&path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "schema_version,1\niteration,loss\n");
        assert_eq!(MetricsTable::read(&path).unwrap(), t);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = MetricsTable::new(&["iteration", "loss"]);
        for (i, v) in [0.1 + 0.2, 1e-300, -3.25].iter().enumerate() {
            t.push(vec![i.to_string(), fmt_f64(*v)]).unwrap();
        }
        let mut m = RunManifest::new("test", 5, serde_json::json!({"lr": 0.5}));
        m.flag("zero_variance");
        write_metrics(dir.path(), &m, &[("metrics.csv", &t)]).unwrap();
        let (back, d) = read_manifest(dir.path()).unwrap();
        assert_eq!(back.tables, vec!["metrics.csv".to_string()]);
        assert_eq!(back.seed, 5);
        let t2 = MetricsTable::read(&d.join("metrics.csv")).unwrap();
        assert_eq!(t2, t);
        assert_eq!(t2.column_f64("loss").unwrap()[0], 0.1 + 0.2);
    }

    #[test]
    fn errors_carry_paths() {
        let err = read_manifest(Path::new("/nonexistent/run")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/run"));
        assert!(MetricsTable::new(&["a"]).push(vec![]).is_err());
    }
}
