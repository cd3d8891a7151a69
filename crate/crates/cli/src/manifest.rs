//! Run manifests: a JSON snapshot of the resolved command, its seed, and
//! checksummed inputs/outputs. Replaying a manifest re-executes the command
//! and must reproduce every deterministic artifact byte-for-byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ArtifactRef {
    pub path: String,
    pub crc32: u32,
    /// False for measurement artifacts (wall-clock columns) that cannot be
    /// byte-reproduced; replay re-emits them without comparing bytes.
    pub deterministic: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: crate::commands::CommandSpec,
    pub seed: u64,
    pub inputs: Vec<ArtifactRef>,
    pub outputs: Vec<ArtifactRef>,
    pub created_unix: u64,
    pub duration_s: f64,
}

pub fn file_crc32(path: &Path) -> Result<u32> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(crc32fast::hash(&bytes))
}

pub fn artifact(path: &Path, deterministic: bool) -> Result<ArtifactRef> {
    Ok(ArtifactRef {
        path: path.display().to_string(),
        crc32: file_crc32(path)?,
        deterministic,
    })
}

impl RunManifest {
    pub fn new(
        command: crate::commands::CommandSpec,
        seed: u64,
        inputs: Vec<ArtifactRef>,
        outputs: Vec<ArtifactRef>,
        duration_s: f64,
    ) -> RunManifest {
        RunManifest {
            tool: "warpseg".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command,
            seed,
            inputs,
            outputs,
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            duration_s,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Internal(format!("manifest serialization: {e}")))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, json.as_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Data(format!("malformed manifest {}: {e}", path.display())))
    }
}

/// Conventional manifest location for a primary output file.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "out".into());
    name.push_str(".manifest.json");
    output.with_file_name(name)
}
