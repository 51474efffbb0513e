//! Run manifest: config hash, timing and a hash of every produced file.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub scheme: String,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: Option<f64>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub files: Vec<FileEntry>,
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

fn collect(dir: &Path, root: &Path, out: &mut Vec<FileEntry>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect(&p, root, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("inside root").to_string_lossy().replace('\\', "/");
            if rel == MANIFEST_FILE {
                continue;
            }
            let (bytes, sha256) = sha256_file(&p)?;
            out.push(FileEntry { path: rel, bytes, sha256 });
        }
    }
    Ok(())
}

impl RunManifest {
    pub fn new(config_hash: String, seed: u64, scheme: String) -> Self {
        RunManifest {
            format: "ppmarl-run/1".into(),
            config_hash,
            seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
            scheme,
            started_at: now(),
            finished_at: None,
            status: RunStatus::Running,
            error: None,
            files: Vec::new(),
        }
    }

    /// Re-indexes the directory and writes the manifest.
    pub fn write(&mut self, run_dir: &Path) -> Result<()> {
        let mut files = Vec::new();
        collect(run_dir, run_dir, &mut files)?;
        self.files = files;
        let path = run_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks every listed hash and the embedded config hash.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for f in &self.files {
            let p = run_dir.join(&f.path);
            let (bytes, sha) = sha256_file(&p).map_err(|_| Error::Integrity(format!("{} is missing", f.path)))?;
            if bytes != f.bytes || sha != f.sha256 {
                return Err(Error::Integrity(format!("{} does not match the manifest", f.path)));
            }
        }
        let mut on_disk = Vec::new();
        collect(run_dir, run_dir, &mut on_disk)?;
        if let Some(extra) = on_disk.iter().find(|d| !self.files.iter().any(|f| f.path == d.path)) {
            return Err(Error::Integrity(format!("{} is not listed in the manifest", extra.path)));
        }
        let cfg = super::ExperimentConfig::load(&run_dir.join(CONFIG_FILE))?;
        if cfg.hash() != self.config_hash {
            return Err(Error::Integrity("embedded config does not match the manifest hash".into()));
        }
        Ok(())
    }
}
