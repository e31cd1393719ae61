//! Run manifest written beside every output as `<output>.manifest.json`.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    /// Effective configuration, one `key = value` per entry.
    pub config: Vec<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = fs::File::open(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Files under `path` (itself when it is a file), sorted.
fn files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_dir() {
        let mut out = Vec::new();
        for entry in fs::read_dir(path)? {
            out.extend(files(&entry?.path())?);
        }
        out.retain(|p| !p.to_string_lossy().ends_with(".manifest.json"));
        out.sort();
        Ok(out)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

pub struct ManifestBuilder {
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn start(command: &str, seed: u64, config: &str) -> Self {
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                seed,
                config: config.lines().map(str::to_string).collect(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix: now(),
                finished_unix: 0,
            },
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        for f in files(path)? {
            self.manifest.inputs.push(FileDigest {
                path: f.display().to_string(),
                sha256: sha256_file(&f)?,
            });
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        for f in files(path)? {
            self.manifest.outputs.push(FileDigest {
                path: f.display().to_string(),
                sha256: sha256_file(&f)?,
            });
        }
        Ok(())
    }

    /// Writes the manifest beside `primary` (inside it for directories).
    pub fn finish(mut self, primary: &Path) -> Result<PathBuf, CliError> {
        self.manifest.finished_unix = now();
        let path = if primary.is_dir() {
            primary.join("run.manifest.json")
        } else {
            let mut name = primary.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            primary.with_file_name(name)
        };
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::io(e.to_string()))?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}
