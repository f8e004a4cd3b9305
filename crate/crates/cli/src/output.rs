use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

fn io(p: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", p.display()))
}

#[derive(Debug, Clone)]
pub struct OutDir {
    path: PathBuf,
}

impl OutDir {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self, CliError> {
        let path = path.into();
        fs::create_dir_all(&path).map_err(|e| io(&path, e))?;
        Ok(Self { path })
    }

    pub fn sub(&self, name: &str) -> Result<Self, CliError> {
        Self::create(self.path.join(name))
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_json(&self, name: &str, value: &Value) -> Result<(), CliError> {
        let p = self.file(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| io(&p, e))?;
        text.push('\n');
        fs::write(&p, text).map_err(|e| io(&p, e))
    }

    pub fn write_csv(&self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), CliError> {
        let p = self.file(name);
        let mut w = csv::Writer::from_path(&p).map_err(|e| io(&p, e))?;
        w.write_record(header).map_err(|e| io(&p, e))?;
        for row in rows {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| io(&p, e))?;
        }
        w.flush().map_err(|e| io(&p, e))
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.file(name);
        fs::write(&p, bytes).map_err(|e| io(&p, e))
    }
}

/// Non-finite numbers become strings so the document stays valid JSON.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

/// Run summary: declared parameters verbatim, effective parameters, targets and results.
pub fn summary(command: &str, cfg: &Config, resolved: Value, paper_refs: &[&str], results: Value) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "parameters": serde_json::to_value(cfg).unwrap_or(Value::Null),
        "resolved": resolved,
        "paper_refs": paper_refs,
        "results": results,
    })
}
