use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every command's outputs.
///
/// `hash` covers the tool version, command, resolved config hash, input
/// digests and output file names. Paths are recorded but not hashed, so
/// the same run in another directory has the same hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_path: Option<String>,
    pub config_hash: String,
    pub inputs: BTreeMap<String, InputFile>,
    pub outputs: Vec<String>,
    pub hash: String,
}

#[derive(Serialize)]
struct Identity<'a> {
    tool_version: &'a str,
    command: &'a str,
    config_hash: &'a str,
    inputs: BTreeMap<&'a str, &'a str>,
    outputs: &'a [String],
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = File::open(path)
        .map_err(|e| CliError::Usage(format!("cannot open `{}`: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f
            .read(&mut buf)
            .map_err(|e| CliError::Runtime(format!("cannot read `{}`: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub struct ManifestBuilder {
    command: String,
    config_path: Option<String>,
    config_hash: String,
    inputs: BTreeMap<String, InputFile>,
}

impl ManifestBuilder {
    pub fn new<C: Serialize>(command: &str, config_path: Option<&Path>, resolved: &C) -> Self {
        let config = serde_json::to_vec(resolved).expect("config serializes");
        Self {
            command: command.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            config_hash: sha256_bytes(&config),
            inputs: BTreeMap::new(),
        }
    }

    pub fn input(mut self, role: &str, path: &Path) -> Result<Self, CliError> {
        let sha256 = sha256_file(path)?;
        self.inputs.insert(
            role.to_string(),
            InputFile {
                path: path.display().to_string(),
                sha256,
            },
        );
        Ok(self)
    }

    pub fn finish(self, outputs: &[&str]) -> RunManifest {
        let tool_version = crate::version().to_string();
        let outputs: Vec<String> = outputs.iter().map(|s| s.to_string()).collect();
        let identity = Identity {
            tool_version: &tool_version,
            command: &self.command,
            config_hash: &self.config_hash,
            inputs: self.inputs.iter().map(|(k, v)| (k.as_str(), v.sha256.as_str())).collect(),
            outputs: &outputs,
        };
        let hash = sha256_bytes(&serde_json::to_vec(&identity).expect("identity serializes"));
        RunManifest {
            tool_version,
            command: self.command,
            config_path: self.config_path,
            config_hash: self.config_hash,
            inputs: self.inputs,
            outputs,
            hash,
        }
    }
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_json()).map_err(|e| CliError::write(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn hash_ignores_paths_but_not_contents() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
        std::fs::write(&a, "same").unwrap();
        std::fs::write(&b, "same").unwrap();
        let m = |p: &Path| ManifestBuilder::new("train", None, &1).input("docs", p).unwrap().finish(&["report.json"]);
        assert_eq!(m(&a).hash, m(&b).hash);
        assert_ne!(m(&a).inputs["docs"].path, m(&b).inputs["docs"].path);
        std::fs::write(&b, "different").unwrap();
        assert_ne!(m(&a).hash, m(&b).hash);
        let other = ManifestBuilder::new("train", None, &2).input("docs", &a).unwrap().finish(&["report.json"]);
        assert_ne!(other.hash, m(&a).hash);
    }
}
