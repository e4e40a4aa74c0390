//! `manifest.json`: what was run and what it produced.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the resolved configuration's JSON.
    pub config_hash: String,
    /// Output path (relative to the output directory) → SHA-256.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash(cfg: &RunConfig) -> String {
    sha256_hex(&serde_json::to_vec(cfg).expect("config serializes"))
}

/// Hashes every file under `out` except the manifest itself and writes it.
pub fn write_manifest(out: &Path, command: &str, cfg: &RunConfig) -> anyhow::Result<Manifest> {
    let mut outputs = BTreeMap::new();
    collect(out, out, &mut outputs)?;
    let m = Manifest {
        command: command.to_owned(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
        seed: cfg.seed,
        config_hash: config_hash(cfg),
        outputs,
    };
    fs::write(out.join("manifest.json"), serde_json::to_vec_pretty(&m)?)?;
    Ok(m)
}

fn collect(root: &Path, dir: &Path, acc: &mut BTreeMap<String, String>) -> anyhow::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect(root, &path, acc)?;
        } else {
            let rel = path
                .strip_prefix(root)?
                .to_string_lossy()
                .replace('\\', "/");
            if rel != "manifest.json" {
                acc.insert(rel, sha256_hex(&fs::read(&path)?));
            }
        }
    }
    Ok(())
}
