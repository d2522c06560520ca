//! `manifest.json`: what produced a run directory and what it holds.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mln_core::formats::{read_json, write_json};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::CliResult;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandRecord {
    pub command: String,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactEntry {
    /// Relative to the run directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub library_version: String,
    /// Hash of the config used by the most recent command.
    pub config_hash: Option<String>,
    pub created_unix: u64,
    pub updated_unix: u64,
    pub commands: Vec<CommandRecord>,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn entry(dir: &Path, path: &str) -> CliResult<ArtifactEntry> {
    let bytes = std::fs::read(dir.join(path))?;
    Ok(ArtifactEntry {
        path: path.to_string(),
        bytes: bytes.len() as u64,
        sha256: hex(&Sha256::digest(&bytes)),
    })
}

impl Manifest {
    fn new() -> Self {
        let now = now_unix();
        Self {
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: None,
            created_unix: now,
            updated_unix: now,
            commands: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    /// The manifest in `dir`, or a fresh one when there is none or it
    /// cannot be parsed.
    pub fn load_or_new(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST);
        Ok(if path.exists() {
            read_json(&path).unwrap_or_else(|_| Self::new())
        } else {
            Self::new()
        })
    }

    pub fn record(
        &mut self,
        command: &str,
        config_hash: Option<String>,
        seed: Option<u64>,
        started: u64,
        files: Vec<String>,
    ) {
        let now = now_unix();
        self.commands.push(CommandRecord {
            command: command.to_string(),
            config_hash: config_hash.clone(),
            seed,
            started_unix: started,
            finished_unix: now,
        });
        if config_hash.is_some() {
            self.config_hash = config_hash;
        }
        self.updated_unix = now;
        for f in files {
            if !self.artifacts.iter().any(|a| a.path == f) {
                self.artifacts.push(ArtifactEntry {
                    path: f,
                    bytes: 0,
                    sha256: String::new(),
                });
            }
        }
    }

    /// Re-hashes every listed file, drops the ones that no longer exist and
    /// writes the manifest atomically.
    pub fn save(&mut self, dir: &Path) -> CliResult<PathBuf> {
        let listed: Vec<String> = self.artifacts.iter().map(|a| a.path.clone()).collect();
        self.artifacts = listed
            .iter()
            .filter(|p| dir.join(p).is_file())
            .map(|p| entry(dir, p))
            .collect::<CliResult<_>>()?;
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let path = dir.join(MANIFEST);
        write_json(&path, self)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_only_existing_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"abc").unwrap();
        let mut m = Manifest::load_or_new(dir.path()).unwrap();
        m.record(
            "generate",
            Some("h".into()),
            Some(1),
            0,
            vec!["a.txt".into(), "gone.txt".into()],
        );
        m.save(dir.path()).unwrap();
        let back: Manifest = read_json(&dir.path().join(MANIFEST)).unwrap();
        assert_eq!(back.artifacts.len(), 1);
        assert_eq!(back.artifacts[0].bytes, 3);
        assert_eq!(
            back.artifacts[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(back.commands.len(), 1);
    }
}
