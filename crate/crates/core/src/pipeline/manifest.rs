use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunConfig;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// What a command ran with: enough to repeat it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: Vec<String>,
    pub crate_version: String,
    pub seeds: Vec<u64>,
    pub config: RunConfig,
    pub inputs: Vec<InputDigest>,
    /// Digest over all input digests, in path order.
    pub input_hash: String,
    pub outputs: Vec<String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Blob-style content hash: sha256 over `"blob <len>\0" + content`.
pub fn hash_bytes(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else if path.exists() {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Digests of every file under `paths` (directories recursively), sorted by
/// path, plus a combined digest.
pub fn hash_inputs(paths: &[PathBuf]) -> Result<(Vec<InputDigest>, String)> {
    let mut files = Vec::new();
    for p in paths {
        collect_files(p, &mut files)?;
    }
    files.sort();
    files.dedup();
    let mut digests = Vec::with_capacity(files.len());
    let mut combined = Sha256::new();
    for f in files {
        let d = InputDigest {
            path: f.display().to_string(),
            sha256: hash_bytes(&fs::read(&f)?),
        };
        combined.update(d.path.as_bytes());
        combined.update([0]);
        combined.update(d.sha256.as_bytes());
        digests.push(d);
    }
    Ok((digests, hex(&combined.finalize())))
}

impl RunManifest {
    pub fn new(command: &str, arguments: Vec<String>, config: &RunConfig, inputs: &[PathBuf]) -> Result<Self> {
        let (inputs, input_hash) = hash_inputs(inputs)?;
        Ok(Self {
            command: command.to_string(),
            arguments,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: config.seeds.clone(),
            config: config.clone(),
            inputs,
            input_hash,
            outputs: Vec::new(),
        })
    }

    /// Writes `manifest_<command>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("manifest_{}.json", self.command.replace('-', "_")));
        fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }
}
