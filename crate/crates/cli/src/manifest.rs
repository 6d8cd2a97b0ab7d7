//! Run manifests: a JSON sidecar written by every command, carrying the
//! config snapshot, dataset checksum, seeds, wall time, diagnostics summary,
//! and artifact paths. Downstream commands verify the dataset checksum
//! before reusing a fit's draws.

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use pstrat_core::model::BlockLayout;

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct DiagnosticsSummary {
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
    pub total_divergences: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Snapshot of the effective configuration after flag/config merging.
    pub config: serde_json::Value,
    pub dataset: Option<DatasetRef>,
    pub seed: u64,
    pub wall_time_ms: u128,
    pub chains: usize,
    pub retained: usize,
    pub layout: Option<BlockLayout>,
    pub accept_rates: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub divergences: Vec<usize>,
    pub warnings: Vec<String>,
    pub diagnostics: Option<DiagnosticsSummary>,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config,
            dataset: None,
            seed,
            wall_time_ms: 0,
            chains: 0,
            retained: 0,
            layout: None,
            accept_rates: Vec::new(),
            step_sizes: Vec::new(),
            divergences: Vec::new(),
            warnings: Vec::new(),
            diagnostics: None,
            artifacts: Vec::new(),
        }
    }

    pub fn path_for(artifact: &Path) -> PathBuf {
        let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(MANIFEST_SUFFIX);
        artifact.with_file_name(name)
    }

    pub fn write(&self, artifact: &Path) -> Result<PathBuf> {
        let path = Self::path_for(artifact);
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json)
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(path)
    }

    pub fn read(artifact: &Path) -> Result<RunManifest> {
        let path = Self::path_for(artifact);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Recomputes the referenced dataset's checksum and compares.
    pub fn verify_dataset(&self, data_path: &Path) -> Result<()> {
        let recorded = self
            .dataset
            .as_ref()
            .ok_or_else(|| anyhow!("manifest carries no dataset reference"))?;
        let actual = sha256_file(data_path)?;
        if actual != recorded.sha256 {
            return Err(anyhow!(
                "dataset checksum mismatch: manifest has {}, {} has {}",
                recorded.sha256,
                data_path.display(),
                actual
            ));
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        use std::fmt::Write;
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_verification() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("d.csv");
        std::fs::write(&data, "id,w\n1,0\n").unwrap();
        let mut m = RunManifest::new("fit", serde_json::json!({}), 7);
        m.dataset = Some(DatasetRef {
            path: data.display().to_string(),
            sha256: sha256_file(&data).unwrap(),
        });
        assert!(m.verify_dataset(&data).is_ok());
        std::fs::write(&data, "id,w\n1,1\n").unwrap();
        assert!(m.verify_dataset(&data).is_err());
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let artifact = dir.path().join("draws.csv");
        std::fs::write(&artifact, "x").unwrap();
        let mut m = RunManifest::new("fit", serde_json::json!({"iters": 10}), 3);
        m.chains = 2;
        m.retained = 5;
        m.accept_rates = vec![0.9, 0.8];
        let path = m.write(&artifact).unwrap();
        assert!(path.ends_with("draws.csv.manifest.json"));
        let back = RunManifest::read(&artifact).unwrap();
        assert_eq!(back.command, "fit");
        assert_eq!(back.chains, 2);
        assert_eq!(back.accept_rates, vec![0.9, 0.8]);
    }

    #[test]
    fn known_sha256_value() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("x");
        std::fs::write(&f, "abc").unwrap();
        assert_eq!(
            sha256_file(&f).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
