//! Output directory handling. Every file is written in full in one call, so
//! reruns with the same inputs produce byte-identical directories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{OutputFormat, RunConfig};
use crate::CliError;

pub struct OutDir {
    pub path: PathBuf,
    pub format: OutputFormat,
    pub config_hash: String,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

impl OutDir {
    /// Creates the directory and echoes the resolved configuration into it.
    pub fn create(config: &RunConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(&config.out).map_err(|e| CliError::io(&config.out, e))?;
        let _ = std::fs::remove_file(config.out.join("error.json"));
        let out = Self {
            path: config.out.clone(),
            format: config.format,
            config_hash: config.hash(),
        };
        out.write_text("config.resolved.toml", &config.to_toml())?;
        out.write_text("config.sha256", &format!("{}\n", out.config_hash))?;
        Ok(out)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.file(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    /// JSON summary tagged with the command, config hash and seed; skipped under `--format csv`.
    pub fn write_json<T: Serialize>(
        &self,
        name: &str,
        command: &str,
        seed: u64,
        body: &T,
    ) -> Result<(), CliError> {
        if !self.format.json() {
            return Ok(());
        }
        let env = Envelope {
            command,
            config_hash: &self.config_hash,
            seed,
            body,
        };
        let mut text = serde_json::to_string_pretty(&env)
            .map_err(|e| CliError::new("serialize", e.to_string()))?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// CSV from a header and pre-formatted rows; skipped under `--format json`.
    pub fn write_csv(
        &self,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<(), CliError> {
        if !self.format.csv() {
            return Ok(());
        }
        let path = self.file(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
        w.write_record(header).map_err(|e| CliError::io(&path, e))?;
        for r in rows {
            w.write_record(r).map_err(|e| CliError::io(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))
    }

    /// Square matrix with asset labels on both axes.
    pub fn write_matrix(
        &self,
        name: &str,
        labels: &[String],
        m: &DMatrix<f64>,
    ) -> Result<(), CliError> {
        let mut header = vec!["asset"];
        header.extend(labels.iter().map(String::as_str));
        let rows: Vec<Vec<String>> = (0..m.nrows())
            .map(|i| {
                let mut r = vec![labels[i].clone()];
                r.extend((0..m.ncols()).map(|j| num(m[(i, j)])));
                r
            })
            .collect();
        self.write_csv(name, &header, &rows)
    }
}

/// Shortest round-trip representation; empty for NaN so CSV readers see a gap.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        let mut s = String::new();
        write!(s, "{x}").expect("writing to a String");
        s
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the machine-readable error record next to the other outputs.
pub fn write_error_record(dir: &Path, record: &serde_json::Value) {
    if std::fs::create_dir_all(dir).is_ok() {
        let text = serde_json::to_string_pretty(record).unwrap_or_default();
        let _ = std::fs::write(dir.join("error.json"), text + "\n");
    }
}
