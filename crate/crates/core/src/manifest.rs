//! Run manifests written next to every output file.
//!
//! A manifest records the command, its arguments, the effective
//! configuration, every seed used and a digest of each input, so a run can
//! be repeated exactly. Nothing time- or host-dependent is recorded.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::Result;

pub const SCHEMA: &str = "margin-probe/manifest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub tool_version: String,
    pub command: String,
    pub args: BTreeMap<String, String>,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args: BTreeMap::new(),
            config: config.clone(),
            seeds: BTreeMap::from([("master".to_string(), config.seed)]),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn arg(mut self, key: &str, value: impl ToString) -> Self {
        self.args.insert(key.to_string(), value.to_string());
        self
    }

    pub fn seed(mut self, key: &str, value: u64) -> Self {
        self.seeds.insert(key.to_string(), value);
        self
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        let data = fs::read(path)?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            bytes: data.len() as u64,
            sha256: hex(&Sha256::digest(&data)),
        });
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Writes `<output>.manifest.json` next to `output`.
    pub fn write_beside(&self, output: &Path) -> Result<PathBuf> {
        let path = manifest_path(output);
        fs::write(&path, self.to_json()?)?;
        Ok(path)
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
