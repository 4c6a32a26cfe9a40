use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub wall_seconds: f64,
}

/// Provenance of a CLI run. Timing lives here and nowhere else, so every
/// other artifact is reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config_sha256: Option<String>,
    pub overrides: Vec<String>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub artifacts: Vec<Artifact>,
    pub timing: Timing,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

impl RunManifest {
    /// Hashes each file in `paths` (all inside `dir`) into the inventory.
    pub fn inventory(dir: &Path, paths: &[PathBuf]) -> Result<Vec<Artifact>> {
        paths
            .iter()
            .map(|p| {
                let rel = p.strip_prefix(dir).unwrap_or(p).to_string_lossy().replace('\\', "/");
                Ok(Artifact {
                    path: rel,
                    sha256: sha256_file(p)?,
                    bytes: fs::metadata(p)?.len(),
                })
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?)
    }

    /// Checks that every listed artifact exists with its recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let p = dir.join(&a.path);
            if !p.exists() {
                return Err(Error::Invariant(format!("artifact {} is missing", a.path)));
            }
            if sha256_file(&p)? != a.sha256 {
                return Err(Error::Invariant(format!("artifact {} does not match its hash", a.path)));
            }
        }
        Ok(())
    }
}
