//! Run directories: exclusive lock, resolved-config record.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;

pub const RUN_FILE: &str = "run.json";
pub const LOCK_FILE: &str = ".clm.lock";
pub const RUN_SCHEMA_VERSION: u32 = 1;

/// Holds `<dir>/.clm.lock` for its lifetime.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    pub fn acquire(path: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
        let lock = path.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => Ok(Self { path: path.to_path_buf(), lock }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::usage(format!(
                "{} is in use by another run (remove {} if stale)",
                path.display(),
                lock.display()
            ))),
            Err(e) => Err(CliError::io(&lock, e)),
        }
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Writes `run.json` with the resolved configuration and the sha256 of
    /// every input file.
    pub fn record(&self, command: &str, resolved: &impl Serialize, inputs: &[(&str, &Path)]) -> Result<(), CliError> {
        let mut hashes = serde_json::Map::new();
        for (name, path) in inputs {
            let h = clm_core::hash::hash_file(path)?;
            hashes.insert((*name).to_string(), json!({ "path": path.display().to_string(), "sha256": h }));
        }
        let doc = json!({
            "schema_version": RUN_SCHEMA_VERSION,
            "command": command,
            "clm_version": env!("CARGO_PKG_VERSION"),
            "resolved": serde_json::to_value(resolved)?,
            "inputs": Value::Object(hashes),
        });
        write_json(&self.join(RUN_FILE), &doc)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock);
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
