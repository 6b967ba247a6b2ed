//! Provenance for every output file: a `<file>.meta.json` sidecar with the
//! producing stage, its resolved configuration and hash, and the hashes of
//! the artifacts it was built from.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{config_hash, render, sha256_hex};
use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub stage: String,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    /// Upstream artifact role -> its config hash.
    #[serde(default)]
    pub lineage: BTreeMap<String, String>,
}

impl Meta {
    /// The hash covers the resolved settings and the upstream hashes.
    pub fn new(stage: &str, config: BTreeMap<String, String>, lineage: BTreeMap<String, String>) -> Self {
        let mut hashed = config.clone();
        for (k, v) in &lineage {
            hashed.insert(format!("lineage.{k}"), v.clone());
        }
        Meta { stage: stage.to_string(), config_hash: config_hash(&hashed), config, lineage }
    }
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// `<file>.<suffix>` next to an artifact.
pub fn companion(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(format!(".{suffix}"));
    PathBuf::from(s)
}

pub fn write_meta(path: &Path, meta: &Meta) -> Result<(), CliError> {
    let io = |e| CliError::Io { path: sidecar(path), source: e };
    std::fs::write(sidecar(path), serde_json::to_string_pretty(meta).expect("meta serializes") + "\n").map_err(io)?;
    std::fs::write(companion(path, "config"), render(&meta.config)).map_err(|e| CliError::Io { path: companion(path, "config"), source: e })
}

pub fn read_meta(path: &Path) -> Result<Meta, CliError> {
    let side = sidecar(path);
    let text = std::fs::read_to_string(&side).map_err(|e| CliError::Meta { path: side.clone(), reason: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| CliError::Meta { path: side, reason: e.to_string() })
}

/// Hash of an input file that has no sidecar (raw data, external samples).
pub fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    Ok(sha256_hex(&bytes)[..16].to_string())
}

/// The sidecar hash when present, else the content hash.
pub fn input_hash(path: &Path) -> Result<String, CliError> {
    match read_meta(path) {
        Ok(m) => Ok(m.config_hash),
        Err(_) => file_hash(path),
    }
}

/// True when `path` exists and was produced by exactly this configuration.
pub fn is_current(path: &Path, meta: &Meta) -> bool {
    path.exists() && read_meta(path).is_ok_and(|m| m.config_hash == meta.config_hash)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lineage_changes_the_hash() {
        let cfg: BTreeMap<String, String> = [("a".to_string(), "1".to_string())].into();
        let a = Meta::new("x", cfg.clone(), BTreeMap::new());
        let b = Meta::new("x", cfg, [("base".to_string(), "abc".to_string())].into());
        assert_ne!(a.config_hash, b.config_hash);
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("base.json");
        std::fs::write(&out, "{}").unwrap();
        let meta = Meta::new("fit-base", [("seed".to_string(), "0".to_string())].into(), BTreeMap::new());
        write_meta(&out, &meta).unwrap();
        assert_eq!(read_meta(&out).unwrap(), meta);
        assert!(is_current(&out, &meta));
        assert_eq!(input_hash(&out).unwrap(), meta.config_hash);
        assert!(companion(&out, "config").exists());
    }
}
