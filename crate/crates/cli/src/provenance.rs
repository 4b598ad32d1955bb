//! Content hashes and the provenance block attached to every artifact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Git-style blob hash: SHA-256 over `blob <len>\0<content>`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    let digest = h.finalize();
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub command: String,
    pub config: Value,
    /// Input name → content hash. `resolved_config` hashes the canonical
    /// serialization of `config`.
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str, config: Value, mut inputs: BTreeMap<String, String>) -> Self {
        let canonical = serde_json::to_vec(&config).unwrap_or_default();
        inputs.insert("resolved_config".into(), blob_hash(&canonical));
        Self { tool: tool_name(), command: command.into(), config, inputs }
    }

    pub fn config_hash(&self) -> &str {
        &self.inputs["resolved_config"]
    }

    /// Records a file read by the command.
    pub fn add_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.insert(path.display().to_string(), blob_hash(bytes));
    }
}

pub fn tool_name() -> String {
    format!("qreg {}", env!("CARGO_PKG_VERSION"))
}

pub fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}
