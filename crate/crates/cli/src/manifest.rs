//! Per-output-directory run manifests and content hashing.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use annoforge::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Thread count of the run; recorded for provenance, never affects outputs.
    pub workers: usize,
    /// Every option of the subcommand after defaults and config files were applied.
    pub config: serde_json::Value,
    /// Input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the manifest's directory → SHA-256.
    pub outputs: BTreeMap<String, String>,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::MissingArtifact(path.to_path_buf())
    } else {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
    }
}

fn hash_file_into(h: &mut Sha256, path: &Path) -> Result<(), Error> {
    let mut f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| io_err(path, e))?;
        if n == 0 {
            return Ok(());
        }
        h.update(&buf[..n]);
    }
}

/// SHA-256 of a file, or of a directory's files (sorted relative paths and
/// contents, skipping any manifest).
pub fn hash_path(path: &Path) -> Result<String, Error> {
    let meta = fs::metadata(path).map_err(|e| io_err(path, e))?;
    let mut h = Sha256::new();
    if meta.is_file() {
        hash_file_into(&mut h, path)?;
    } else {
        let mut files = Vec::new();
        for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
            let entry = entry.map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e.into(),
            })?;
            if entry.file_type().is_file() && entry.file_name() != MANIFEST_FILE {
                files.push(entry.into_path());
            }
        }
        for f in files {
            let rel = f.strip_prefix(path).expect("walk stays under its root");
            let rel = rel.to_string_lossy().replace('\\', "/");
            h.update((rel.len() as u64).to_le_bytes());
            h.update(rel.as_bytes());
            h.update(
                fs::metadata(&f)
                    .map_err(|e| io_err(&f, e))?
                    .len()
                    .to_le_bytes(),
            );
            hash_file_into(&mut h, &f)?;
        }
    }
    Ok(hex::encode(h.finalize()))
}

impl RunManifest {
    pub fn save(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).map_err(Error::from)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(())
    }

    /// The recorded options as a `--config` file: scalars verbatim, lists joined
    /// with commas, unset options left out. Feeding it back to the same
    /// subcommand repeats the run.
    pub fn replay_config(&self) -> String {
        let mut text = String::new();
        let Some(map) = self.config.as_object() else {
            return text;
        };
        for (key, value) in map {
            let rendered = match value {
                serde_json::Value::Null => continue,
                serde_json::Value::Array(items) if items.is_empty() => continue,
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|v| v.as_str().map_or_else(|| v.to_string(), str::to_string))
                    .collect::<Vec<_>>()
                    .join(","),
                other => other.to_string(),
            };
            text.push_str(&format!("{key}={rendered}\n"));
        }
        text
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        Ok(
            serde_json::from_slice(&bytes).map_err(|e| Error::MalformedShard {
                path,
                reason: e.to_string(),
            })?,
        )
    }
}

/// Re-hashes every input and output a manifest lists.
pub fn verify_manifest(dir: &Path) -> CliResult<RunManifest> {
    let m = RunManifest::load(dir)?;
    let checks = m
        .inputs
        .iter()
        .map(|(p, h)| (Path::new(p).to_path_buf(), h))
        .chain(m.outputs.iter().map(|(p, h)| (dir.join(p), h)));
    for (path, expected) in checks {
        let found = hash_path(&path)?;
        if &found != expected {
            return Err(Error::MalformedShard {
                path,
                reason: format!("hash {found} does not match manifest {expected}"),
            }
            .into());
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_hash_ignores_manifest_and_sees_renames() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("a.txt"), "x").unwrap();
        let h1 = hash_path(d.path()).unwrap();
        fs::write(d.path().join(MANIFEST_FILE), "{}").unwrap();
        assert_eq!(hash_path(d.path()).unwrap(), h1);
        fs::rename(d.path().join("a.txt"), d.path().join("b.txt")).unwrap();
        assert_ne!(hash_path(d.path()).unwrap(), h1);
    }
}
