//! Output files, run manifests and the frozen schema tag.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use superclt::analyze::Verdict;
use superclt::simulate::SCHEME_VERSION;
use superclt::Scenario;

use crate::CliError;

/// Version of the column and key layout documented in `docs/schema.md`.
pub const SCHEMA_VERSION: &str = "superclt-output/1";

pub fn scenario_hash(scenario: &Scenario) -> String {
    let digest = Sha256::digest(scenario.to_toml_string().as_bytes());
    digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// CSV text with the schema comment line and a header row.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[String]) -> Csv {
        let mut text = format!("# schema: {SCHEMA_VERSION}\n");
        text.push_str(&header.join(","));
        text.push('\n');
        Csv { text }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Shortest round-trip decimal form; identical across runs and platforms.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:?}")
    }
}

pub fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output values serialize");
    s.push('\n');
    s
}

/// `{schema, test, inputs, statistics, thresholds, pass}` for one verdict.
pub fn verdict_document(verdict: &Verdict, inputs: Value) -> Value {
    let mut statistics = Map::new();
    let mut thresholds = Map::new();
    for c in &verdict.checks {
        statistics.insert(c.name.clone(), json!(c.value));
        thresholds.insert(
            c.name.clone(),
            json!({ "lower": c.lower, "upper": c.upper, "pass": c.pass }),
        );
    }
    json!({
        "schema": SCHEMA_VERSION,
        "test": verdict.test,
        "inputs": inputs,
        "statistics": statistics,
        "thresholds": thresholds,
        "pass": verdict.pass,
    })
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema: &'static str,
    pub subcommand: String,
    pub scenario_hash: Option<String>,
    pub flags: Vec<String>,
    pub master_seed: Option<u64>,
    pub artifact_version: &'static str,
    pub scheme_version: &'static str,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
}

/// Writes the outputs of one run into a directory, refusing to replace a
/// file whose content differs unless `overwrite` is set.
pub struct OutputDir {
    dir: PathBuf,
    overwrite: bool,
    written: Vec<String>,
    manifest: RunManifest,
}

impl OutputDir {
    pub fn create(
        dir: &Path,
        overwrite: bool,
        subcommand: &str,
        scenario_hash: Option<String>,
        master_seed: Option<u64>,
    ) -> Result<OutputDir, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            overwrite,
            written: Vec::new(),
            manifest: RunManifest {
                schema: SCHEMA_VERSION,
                subcommand: subcommand.into(),
                scenario_hash,
                flags: std::env::args().skip(1).collect(),
                master_seed,
                artifact_version: env!("CARGO_PKG_VERSION"),
                scheme_version: SCHEME_VERSION,
                started_unix: unix_now(),
                finished_unix: 0,
                outputs: Vec::new(),
            },
        })
    }

    pub fn write(&mut self, name: &str, content: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        if !self.overwrite {
            if let Ok(existing) = fs::read(&path) {
                if existing != content.as_bytes() {
                    return Err(CliError::Usage(format!(
                        "refusing to overwrite {} with a differing result (pass --overwrite)",
                        path.display()
                    )));
                }
            }
        }
        fs::write(&path, content)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(name.into());
        Ok(path)
    }

    /// Writes `<manifest_name>` listing every output so far. Timestamps make
    /// manifests differ between runs, so they are always replaced.
    pub fn finish(mut self, manifest_name: &str) -> Result<PathBuf, CliError> {
        self.manifest.finished_unix = unix_now();
        self.manifest.outputs = self.written.clone();
        let path = self.dir.join(manifest_name);
        fs::write(&path, to_json(&self.manifest))
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0, -2.5e-300, 1e22, 1.908206] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(f64::NAN), "nan");
    }

    #[test]
    fn refuses_differing_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path(), false, "x", None, None).unwrap();
        out.write("a.csv", "1\n").unwrap();
        out.write("a.csv", "1\n").unwrap();
        assert!(out.write("a.csv", "2\n").is_err());
        let mut forced = OutputDir::create(dir.path(), true, "x", None, None).unwrap();
        forced.write("a.csv", "2\n").unwrap();
    }
}
