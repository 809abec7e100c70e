//! Run manifests: every JSON output carries the command, its parameters,
//! the SHA-256 of each input file and a hash over all of these.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub params: BTreeMap<String, Value>,
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub tool_version: &'static str,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            params: BTreeMap::new(),
            inputs: BTreeMap::new(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION"),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.params.insert(
            key.to_string(),
            serde_json::to_value(value).unwrap_or(Value::Null),
        );
        self
    }

    /// Records the hash of a file, or of every file below a directory.
    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        if path.is_dir() {
            let mut files = Vec::new();
            collect_files(path, &mut files)?;
            files.sort();
            let mut h = Sha256::new();
            for f in &files {
                let rel = f.strip_prefix(path).unwrap_or(f);
                h.update(rel.to_string_lossy().as_bytes());
                h.update(fs::read(f).with_context(|| format!("reading {}", f.display()))?);
            }
            self.inputs
                .insert(path.display().to_string(), hex::encode(h.finalize()));
        } else if path.exists() {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            self.inputs.insert(
                path.display().to_string(),
                hex::encode(Sha256::digest(bytes)),
            );
        } else {
            // Built-in fixtures are named rather than read from disk.
            self.inputs
                .insert(path.display().to_string(), "builtin".to_string());
        }
        Ok(self)
    }

    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("manifest serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// `{"manifest": {..., "hash": ...}, "result": ...}`.
    pub fn wrap(&self, result: &impl Serialize) -> Result<Value> {
        let mut m = serde_json::to_value(self)?;
        m["hash"] = Value::String(self.hash());
        Ok(serde_json::json!({ "manifest": m, "result": result }))
    }
}

fn collect_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}
