//! Output directory with a content-hashed manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use parea_core::field::{BoundaryTrace, ScalarField, VectorField};
use parea_core::io::{self, Sidecar};
use parea_core::levelset::LevelSet;
use parea_core::scalar::Scalar;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

pub struct Output {
    dir: PathBuf,
    format: Format,
    artifacts: Vec<(String, String, usize)>,
    started: Instant,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Output {
    pub fn create(dir: &Path, format: Format) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf(), format, artifacts: Vec::new(), started: Instant::now() })
    }

    pub fn format(&self) -> Format {
        self.format
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.artifacts.retain(|(n, _, _)| n != name);
        self.artifacts.push((name.to_string(), sha256_hex(bytes), bytes.len()));
        Ok(())
    }

    pub fn json<S: Serialize>(&mut self, name: &str, value: &S) -> std::io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn csv_or_json(
        &mut self,
        name: &str,
        sidecar: Sidecar,
        csv: impl FnOnce(&mut Vec<u8>) -> parea_core::Result<()>,
        values: Value,
    ) -> std::io::Result<()> {
        match self.format {
            Format::Csv => {
                let mut buf = Vec::new();
                csv(&mut buf).map_err(std::io::Error::other)?;
                self.write(&format!("{name}.csv"), &buf)?;
                self.json(&format!("{name}.meta.json"), &sidecar)
            }
            Format::Json => {
                let mut doc = serde_json::to_value(&sidecar).map_err(std::io::Error::other)?;
                doc["values"] = values;
                self.json(&format!("{name}.json"), &doc)
            }
        }
    }

    pub fn scalar_field<T: Scalar>(&mut self, name: &str, role: &str, u: &ScalarField<T>) -> std::io::Result<()> {
        let side = Sidecar::new(u.grid(), role, &["value"]);
        let values = json!(u.values().iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>());
        self.csv_or_json(name, side, |b| io::write_scalar_csv(b, u), values)
    }

    pub fn vector_field<T: Scalar>(&mut self, name: &str, role: &str, b: &VectorField<T>) -> std::io::Result<()> {
        let side = Sidecar::new(b.grid(), role, &["value", "value2"]);
        let values = json!(b.values().iter().map(|v| [v[0].to_f64_lossy(), v[1].to_f64_lossy()]).collect::<Vec<_>>());
        self.csv_or_json(name, side, |w| io::write_vector_csv(w, b), values)
    }

    pub fn boundary<T: Scalar>(&mut self, name: &str, role: &str, f: &BoundaryTrace<T>) -> std::io::Result<()> {
        let side = Sidecar::new(f.grid(), role, &["side", "value"]);
        let values = json!(f.values().iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>());
        self.csv_or_json(name, side, |w| io::write_boundary_csv(w, f), values)
    }

    pub fn level_set<T: Scalar>(&mut self, name: &str, e: &LevelSet<T>) -> std::io::Result<()> {
        if self.format == Format::Csv {
            let mut buf = Vec::new();
            io::write_level_set_csv(&mut buf, e).map_err(std::io::Error::other)?;
            self.write(&format!("{name}.csv"), &buf)?;
        }
        self.json(&format!("{name}.json"), &io::LevelSetJson::new(e))
    }

    /// Writes `manifest.json`. Wall time appears only here, so every other
    /// artifact is reproducible byte for byte.
    pub fn finish(mut self, header: Value) -> std::io::Result<()> {
        self.artifacts.sort();
        let artifacts: Vec<Value> = self
            .artifacts
            .iter()
            .map(|(path, sha, bytes)| json!({ "path": path, "sha256": sha, "bytes": bytes }))
            .collect();
        let mut doc = header;
        doc["artifacts"] = Value::Array(artifacts);
        doc["wall_time_seconds"] = json!(self.started.elapsed().as_secs_f64());
        let mut bytes = serde_json::to_vec_pretty(&doc).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        fs::write(self.dir.join("manifest.json"), bytes)
    }
}
