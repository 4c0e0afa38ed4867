//! Run manifests: everything needed to repeat a command.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crf_core::degrade::DegradationSpec;
use crf_core::solver::SolverConfig;

use crate::config;
use crate::error::{CliError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    Ok(sha256_hex(&bytes))
}

/// `{"path": ..., "sha256": ...}` for an existing file.
pub fn file_entry(path: &Path) -> Result<Value> {
    Ok(json!({
        "path": path.display().to_string(),
        "sha256": file_sha256(path)?,
    }))
}

pub fn degradation_json(spec: &DegradationSpec) -> Value {
    json!({
        "noise_sigma": spec.noise_sigma,
        "keep_probability": spec.keep_probability,
        "seed": spec.seed,
    })
}

pub fn config_json(cfg: &SolverConfig) -> Value {
    let mut map = Map::new();
    for (k, v) in config::to_pairs(cfg) {
        map.insert(k.to_string(), Value::String(v));
    }
    Value::Object(map)
}

/// PSNR as a JSON value; infinite values become the string `"inf"`.
pub fn psnr_json(p: f64) -> Value {
    if p.is_finite() {
        json!(p)
    } else {
        json!("inf")
    }
}

#[derive(Debug, Clone)]
pub struct Manifest {
    fields: Map<String, Value>,
}

impl Manifest {
    /// Starts a manifest with the command name and the full argument vector.
    pub fn new(command: &str, argv: &[String]) -> Self {
        let mut fields = Map::new();
        fields.insert("command".into(), json!(command));
        fields.insert("argv".into(), json!(argv));
        fields.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        Manifest { fields }
    }

    pub fn set(&mut self, key: &str, value: Value) -> &mut Self {
        self.fields.insert(key.to_string(), value);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Value::Object(self.fields.clone())).expect("manifest serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(CliError::io(path))
    }
}
