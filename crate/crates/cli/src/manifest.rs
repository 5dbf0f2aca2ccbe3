//! Run manifests: everything needed to reproduce a finished run.

use std::path::Path;

use anyhow::{Context, Result};

/// Written next to the CSV outputs at the end of every run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    /// Version of the binary that produced the run.
    pub artifact_version: String,
    pub seed: u64,
    /// Unix timestamps (seconds).
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Paths of every file the run wrote, relative to the output dir.
    pub outputs: Vec<String>,
    /// Full TOML snapshot of the effective config (after overrides).
    pub config_toml: String,
}

impl RunManifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("cannot serialize manifest")
    }

    pub fn from_toml(text: &str) -> Result<RunManifest> {
        toml::from_str(text).context("invalid manifest")
    }

    /// Check that every referenced output exists under `dir`.
    pub fn verify_outputs(&self, dir: &Path) -> Result<()> {
        for rel in &self.outputs {
            let p = dir.join(rel);
            if !p.exists() {
                anyhow::bail!("manifest references missing output {}", p.display());
            }
        }
        Ok(())
    }
}

pub fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config_str, serialize_config};
    use nomafl_core::sim::ExperimentConfig;

    #[test]
    fn manifest_round_trips_with_config_snapshot() {
        let config = ExperimentConfig { seed: 31, ..ExperimentConfig::default() };
        let manifest = RunManifest {
            artifact_version: "0.1.0".into(),
            seed: config.seed,
            started_unix: 100,
            finished_unix: 110,
            outputs: vec!["rounds.csv".into()],
            config_toml: serialize_config(&config).unwrap(),
        };
        let text = manifest.to_toml().unwrap();
        let back = RunManifest::from_toml(&text).unwrap();
        assert_eq!(manifest, back);
        // the embedded snapshot parses back to the exact config
        assert_eq!(parse_config_str(&back.config_toml).unwrap(), config);
    }
}
