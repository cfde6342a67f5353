//! Run manifests: the resolved parameters of a run, sufficient to replay it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Every flag value after defaults, config file and command line.
    pub parameters: BTreeMap<String, String>,
    pub master_seed: Option<u64>,
    pub version: String,
    /// SHA-256 of the subcommand and its parameters.
    pub config_digest: String,
    /// Output flag to file path.
    pub outputs: BTreeMap<String, String>,
}

pub fn digest(subcommand: &str, parameters: &BTreeMap<String, String>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(subcommand.as_bytes());
    hasher.update(b"\n");
    for (key, value) in parameters {
        hasher.update(format!("{key}={value}\n").as_bytes());
    }
    hasher.finalize().iter().map(|byte| format!("{byte:02x}")).collect()
}

impl RunManifest {
    pub fn new(subcommand: &str, parameters: BTreeMap<String, String>, outputs: BTreeMap<String, String>) -> Self {
        let master_seed = parameters.get("seed").and_then(|s| s.parse().ok());
        Self {
            subcommand: subcommand.to_string(),
            config_digest: digest(subcommand, &parameters),
            parameters,
            master_seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad manifest {}: {e}", path.display())))?;
        if digest(&manifest.subcommand, &manifest.parameters) != manifest.config_digest {
            return Err(CliError::Usage(format!("manifest {} does not match its digest", path.display())));
        }
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_depends_on_every_parameter() {
        let mut params = BTreeMap::from([("b".to_string(), "2".to_string()), ("n".to_string(), "5".to_string())]);
        let a = digest("sample", &params);
        assert_eq!(a.len(), 64);
        assert_eq!(a, digest("sample", &params.clone()));
        assert_ne!(a, digest("moments", &params));
        params.insert("n".into(), "6".into());
        assert_ne!(a, digest("sample", &params));
    }

    #[test]
    fn tampered_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let params = BTreeMap::from([("seed".to_string(), "7".to_string())]);
        let mut manifest = RunManifest::new("sample", params, BTreeMap::new());
        assert_eq!(manifest.master_seed, Some(7));
        manifest.write(&path).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), manifest);
        manifest.parameters.insert("seed".into(), "8".into());
        manifest.write(&path).unwrap();
        assert!(RunManifest::read(&path).is_err());
    }
}
