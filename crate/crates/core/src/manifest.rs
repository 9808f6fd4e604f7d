//! Run manifests written beside every output shard.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    let mut bytes = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(hasher.finalize()),
        bytes,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub counters: BTreeMap<String, u64>,
    /// Output shard -> domain -> record count.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub shard_domains: BTreeMap<String, BTreeMap<String, u64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigestMismatch {
    pub path: String,
    pub expected: String,
    pub actual: Option<String>,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        let config_hash = sha256_hex(args.join("\u{1f}").as_bytes());
        Self {
            command: command.to_owned(),
            args,
            config_hash,
            ..Default::default()
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn count(&mut self, key: &str, n: u64) {
        *self.counters.entry(key.to_owned()).or_default() += n;
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let raw = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, raw + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Re-hash every listed output. Relative paths that do not resolve from the
    /// working directory are looked up next to `manifest_dir`.
    pub fn verify(&self, manifest_dir: &Path) -> Vec<DigestMismatch> {
        self.outputs
            .iter()
            .filter_map(|d| {
                let direct = PathBuf::from(&d.path);
                let path = if direct.exists() {
                    direct
                } else {
                    manifest_dir.join(direct.file_name().unwrap_or_default())
                };
                let actual = digest_file(&path).ok().map(|a| a.sha256);
                (actual.as_deref() != Some(d.sha256.as_str())).then(|| DigestMismatch {
                    path: d.path.clone(),
                    expected: d.sha256.clone(),
                    actual,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_verifies_and_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out.bin");
        std::fs::write(&out, b"payload").unwrap();
        let mut m = RunManifest::new("pack", vec!["--length".into(), "8".into()]);
        m.add_output(&out).unwrap();
        m.count("sequences", 3);
        let mpath = manifest_path(&out);
        assert!(mpath.ends_with("out.bin.manifest.json"));
        m.write(&mpath).unwrap();
        let back = RunManifest::read(&mpath).unwrap();
        assert_eq!(back, m);
        assert!(back.verify(dir.path()).is_empty());
        std::fs::write(&out, b"tampered").unwrap();
        assert_eq!(back.verify(dir.path()).len(), 1);
    }
}
