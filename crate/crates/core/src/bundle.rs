//! Output directories with a hashed manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const BUNDLE_FORMAT: &str = "nulltext-bundle/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub command: String,
    pub files: Vec<FileEntry>,
    /// Informational only; not part of any hash.
    pub created_unix: u64,
}

impl Manifest {
    /// `(path, sha256)` pairs, the part of the manifest that must reproduce.
    pub fn hashes(&self) -> Vec<(String, String)> {
        self.files
            .iter()
            .map(|f| (f.path.clone(), f.sha256.clone()))
            .collect()
    }

    pub fn entry(&self, path: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The only thing that writes into a bundle directory. Files are recorded
/// in write order.
#[derive(Debug)]
pub struct BundleWriter {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl BundleWriter {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(BundleWriter {
            dir,
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if name == MANIFEST || self.files.iter().any(|f| f.path == name) {
            return Err(Error::Analysis(format!("bundle file `{name}` written twice")));
        }
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push(FileEntry {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Analysis(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Buffers whatever `fill` writes, then stores it as one file.
    pub fn write_with(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn finish(self, command: &str) -> Result<ArtifactBundle> {
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let manifest = Manifest {
            format: BUNDLE_FORMAT.into(),
            command: command.into(),
            files: self.files,
            created_unix,
        };
        let path = self.dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Analysis(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(ArtifactBundle {
            dir: self.dir,
            manifest,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactBundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl ArtifactBundle {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        if manifest.format != BUNDLE_FORMAT {
            return Err(Error::Parse {
                path: path.display().to_string(),
                reason: format!("format `{}` is not {BUNDLE_FORMAT}", manifest.format),
            });
        }
        Ok(ArtifactBundle { dir, manifest })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn read_to_string(&self, name: &str) -> Result<String> {
        let p = self.path(name);
        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    }

    /// Names of files whose contents no longer match the manifest.
    pub fn verify(&self) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for f in &self.manifest.files {
            let p = self.path(&f.path);
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            if sha256_hex(&bytes) != f.sha256 {
                bad.push(f.path.clone());
            }
        }
        Ok(bad)
    }
}
