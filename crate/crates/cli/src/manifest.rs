//! Run manifests: the resolved configuration of a command, written before
//! any computation so a run can be reproduced from its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub master_seed: u64,
    /// Fully resolved config, defaults included.
    pub config: serde_json::Value,
    pub inputs: Vec<InputFile>,
    pub output_dir: PathBuf,
}

impl RunManifest {
    pub fn new<T: Serialize>(
        command: &str,
        master_seed: u64,
        config: &T,
        inputs: Vec<InputFile>,
        output_dir: &Path,
    ) -> Result<Self, CliError> {
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            master_seed,
            config: serde_json::to_value(config).map_err(CliError::internal)?,
            inputs,
            output_dir: output_dir.to_path_buf(),
        })
    }

    pub fn load(path: &Path, command: &str) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("{} is not a manifest: {e}", path.display())))?;
        if m.command != command {
            return Err(CliError::usage(format!(
                "{} was written by `{}`, not `{command}`",
                path.display(),
                m.command
            )));
        }
        Ok(m)
    }

    /// Fails when a recorded input file has changed since the manifest was written.
    pub fn verify_inputs(&self) -> Result<(), CliError> {
        for input in &self.inputs {
            let now = hash_file(&input.path)?;
            if now.sha256 != input.sha256 {
                return Err(CliError::io(format!(
                    "{} changed since the manifest was written",
                    input.path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        crate::commands::write_json(&dir.join("manifest.json"), self)
    }
}

pub fn hash_file(path: &Path) -> Result<InputFile, CliError> {
    let bytes =
        fs::read(path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    Ok(InputFile {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}
