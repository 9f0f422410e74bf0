//! Checkpoint layout: one directory per stage holding `model.safetensors`
//! plus `sidecar.json` with the config echo, content hashes and upstream
//! checkpoint hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle_nn::VarMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const BLOB_NAME: &str = "model.safetensors";
pub const SIDECAR_NAME: &str = "sidecar.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub stage: String,
    pub iteration: usize,
    pub seed: u64,
    /// Stage-specific config echo (model hyperparameters included).
    pub config: serde_json::Value,
    pub blob_sha256: String,
    /// stage name -> blob hash of the upstream checkpoints this was built on.
    pub upstream: BTreeMap<String, String>,
}

pub fn blob_path(dir: &Path) -> PathBuf {
    dir.join(BLOB_NAME)
}

pub fn blob_sha256(dir: &Path) -> Result<String> {
    let bytes = fs::read(blob_path(dir))
        .map_err(|_| Error::MissingArtifact(format!("checkpoint blob in {}", dir.display())))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

/// Saves the variables and a sidecar whose `blob_sha256` matches the blob.
pub fn save_checkpoint(
    dir: &Path,
    varmap: &VarMap,
    stage: &str,
    iteration: usize,
    seed: u64,
    config: serde_json::Value,
    upstream: BTreeMap<String, String>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    varmap.save(blob_path(dir))?;
    let sidecar = Sidecar {
        stage: stage.to_string(),
        iteration,
        seed,
        config,
        blob_sha256: blob_sha256(dir)?,
        upstream,
    };
    fs::write(dir.join(SIDECAR_NAME), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_sidecar(dir: &Path) -> Result<Sidecar> {
    let bytes = fs::read(dir.join(SIDECAR_NAME))
        .map_err(|_| Error::MissingArtifact(format!("checkpoint sidecar in {}", dir.display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Loads blob values into a pre-built model's variables, verifying the
/// sidecar hash first.
pub fn load_checkpoint(dir: &Path, varmap: &mut VarMap) -> Result<Sidecar> {
    let sidecar = read_sidecar(dir)?;
    let actual = blob_sha256(dir)?;
    if actual != sidecar.blob_sha256 {
        return Err(Error::Invalid(format!(
            "checkpoint blob hash mismatch in {}: sidecar {} vs blob {actual}",
            dir.display(),
            sidecar.blob_sha256
        )));
    }
    varmap.load(blob_path(dir))?;
    Ok(sidecar)
}
