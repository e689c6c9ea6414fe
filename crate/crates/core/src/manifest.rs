//! Run manifests: what was run, on which inputs, producing which bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::write_atomic;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, label: impl Into<String>) -> Result<Self> {
        Ok(Self { path: label.into(), sha256: sha256_file(path)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Fully resolved configuration; re-running it reproduces the outputs.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub cwd: PathBuf,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the run directory.
    pub outputs: Vec<FileDigest>,
    pub started: String,
    pub wall_clock_secs: f64,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

pub fn save_manifest(m: &RunManifest, dir: &Path) -> Result<PathBuf> {
    let p = dir.join(MANIFEST_FILE);
    write_atomic(&p, serde_json::to_string_pretty(m)?.as_bytes())?;
    Ok(p)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<RunManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Files whose digests differ between two output lists, by relative path.
pub fn diff_outputs(expected: &[FileDigest], actual: &[FileDigest]) -> Vec<String> {
    let mut bad = Vec::new();
    for e in expected {
        match actual.iter().find(|a| a.path == e.path) {
            Some(a) if a.sha256 == e.sha256 => {}
            Some(_) => bad.push(format!("{} differs", e.path)),
            None => bad.push(format!("{} missing", e.path)),
        }
    }
    for a in actual {
        if !expected.iter().any(|e| e.path == a.path) {
            bad.push(format!("{} unexpected", a.path));
        }
    }
    bad
}
