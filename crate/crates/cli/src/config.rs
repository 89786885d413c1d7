//! Run configuration files. Every field is optional; command-line flags win
//! over file values, which win over built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "TELESEE_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub schema: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub system: Option<String>,
    pub precision: Option<String>,
    pub model: ModelBlock,
    pub train: TrainBlock,
    pub eval: EvalBlock,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub n_layers: Option<usize>,
    pub ffn_dim: Option<usize>,
    pub max_src_len: Option<usize>,
    pub max_tgt_len: Option<usize>,
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainBlock {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub warmup: Option<u64>,
    pub min_count: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBlock {
    pub mode: Option<String>,
    pub name_weight: Option<f64>,
    pub pooling: Option<String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))
    }
}

/// Flag value, else config value.
pub fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| file.clone())
}

/// `--seed`, else the config file, else `TELESEE_SEED`.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Err(CliError::Usage(format!("a seed is required: pass --seed or set {SEED_ENV}"))),
    }
}

/// A path flag that must name an existing file.
pub fn existing(flag: &str, path: Option<PathBuf>) -> CliResult<PathBuf> {
    let p = path.ok_or_else(|| CliError::Usage(format!("missing required {flag}")))?;
    if !p.exists() {
        return Err(CliError::Usage(format!("{flag} {}: no such file", p.display())));
    }
    Ok(p)
}

pub fn required<T>(flag: &str, v: Option<T>) -> CliResult<T> {
    v.ok_or_else(|| CliError::Usage(format!("missing required {flag}")))
}
