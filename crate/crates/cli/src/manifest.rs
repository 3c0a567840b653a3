use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize)]
pub struct OutputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to re-run a command, written next to its outputs.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub command_line: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<OutputFile>,
    pub details: serde_json::Value,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn start(command: &str, argv: &[String]) -> Self {
        Self {
            command: command.to_string(),
            command_line: argv.to_vec(),
            config: BTreeMap::new(),
            seed: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now(),
            finished_unix: 0.0,
            outputs: Vec::new(),
            details: serde_json::Value::Null,
        }
    }

    pub fn add_output(&mut self, path: &Path) -> CliResult<()> {
        let sha256 = sha256_file(path)?;
        self.outputs.push(OutputFile {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    pub fn finish(mut self, dir: &Path) -> CliResult<()> {
        self.finished_unix = now();
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).map_err(|e| CliError::Data(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}
