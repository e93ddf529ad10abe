//! Output files. Every file opens with a manifest: JSON documents carry it
//! under `"manifest"`, CSV files in a leading `# manifest` comment line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use smap_core::GridSpec;

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    /// SHA-256 of the compact JSON form of `config`.
    pub config_hash: String,
    pub config: Value,
    pub grid: Option<GridSpec>,
}

impl Manifest {
    pub fn new(command: &'static str, config: &impl Serialize, grid: Option<GridSpec>) -> Self {
        let config = serde_json::to_value(config).expect("configurations serialize");
        let digest = Sha256::digest(config.to_string().as_bytes());
        let config_hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        Manifest { tool: "smap", version: env!("CARGO_PKG_VERSION"), command, config_hash, config, grid }
    }
}

pub struct OutDir {
    root: PathBuf,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(OutDir { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_json(&self, name: &str, manifest: &Manifest, body: impl Serialize) -> Result<(), CliError> {
        let path = self.path(name);
        let mut doc = serde_json::to_value(body).map_err(|e| io_err(&path, e))?;
        match &mut doc {
            Value::Object(map) => {
                map.insert("manifest".into(), serde_json::to_value(manifest).map_err(|e| io_err(&path, e))?);
            }
            _ => return Err(io_err(&path, "report body must be a JSON object")),
        }
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| io_err(&path, e))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    /// `comments` go after the manifest line, each prefixed with `# `.
    pub fn write_csv(&self, name: &str, manifest: &Manifest, comments: &[String], header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), CliError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut out = BufWriter::new(file);
        let line = serde_json::to_string(manifest).map_err(|e| io_err(&path, e))?;
        writeln!(out, "# manifest {line}").map_err(|e| io_err(&path, e))?;
        for c in comments {
            writeln!(out, "# {c}").map_err(|e| io_err(&path, e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header).map_err(|e| io_err(&path, e))?;
        for row in rows {
            w.write_record(row.iter().map(|x| number(*x))).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))
    }
}

/// Shortest round-trip text, in exponent form outside `[1e-4, 1e6)`.
fn number(x: f64) -> String {
    let m = x.abs();
    if m == 0.0 || (1e-4..1e6).contains(&m) || !m.is_finite() {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// Data rows of a CSV written by [`OutDir::write_csv`], with its comment lines.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let comments = text.lines().take_while(|l| l.starts_with('#')).map(|l| l[1..].trim().to_string()).collect();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    Ok((comments, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_only_on_config() {
        let a = Manifest::new("x", &serde_json::json!({"b": 1e-3}), None);
        let b = Manifest::new("y", &serde_json::json!({"b": 1e-3}), None);
        let c = Manifest::new("x", &serde_json::json!({"b": 2e-3}), None);
        assert_eq!(a.config_hash, b.config_hash);
        assert_ne!(a.config_hash, c.config_hash);
        assert_eq!(a.config_hash.len(), 64);
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("smap-out-{}", std::process::id()));
        let out = OutDir::create(&dir).unwrap();
        let m = Manifest::new("t", &serde_json::json!({}), None);
        out.write_csv("f.csv", &m, &["t=1".into()], &["x", "y"], vec![vec![0.1, 2.0], vec![1e-300, -3.5]]).unwrap();
        let (comments, rows) = read_csv(&out.path("f.csv")).unwrap();
        assert!(comments[0].starts_with("manifest {"));
        assert_eq!(comments[1], "t=1");
        assert_eq!(rows, vec![vec![0.1, 2.0], vec![1e-300, -3.5]]);
        assert_eq!((number(1e-300), number(0.25), number(-2.5e7)), ("1e-300".into(), "0.25".into(), "-2.5e7".into()));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
