//! Provenance records written beside every output.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn digest(path: &Path) -> CliResult<FileDigest> {
    let data = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: format!("{:x}", Sha256::digest(&data)),
        bytes: data.len() as u64,
    })
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub config: serde_json::Value,
}

/// `<output>.manifest.json`
pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    primary.with_file_name(name)
}

pub fn write_manifest(command: &str, inputs: &[&Path], outputs: &[&Path], config: serde_json::Value) -> CliResult<PathBuf> {
    let m = Manifest {
        tool: "telesee",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        inputs: inputs.iter().map(|p| digest(p)).collect::<CliResult<_>>()?,
        outputs: outputs.iter().map(|p| digest(p)).collect::<CliResult<_>>()?,
        config,
    };
    let path = manifest_path(outputs.first().expect("at least one output"));
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}
