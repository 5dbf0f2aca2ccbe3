//! Experiment configuration files.
//!
//! Configs are TOML with one table per subsystem; every key defaults
//! to the standard simulation parameters (1 MHz bandwidth, -174 dBm/Hz
//! noise, path-loss exponent 3.76, 10 dBm power cap, 500 m cell,
//! mu = 1e7 cycles/sample, 1 GHz CPUs, 1 Mbit models, lambda = 0.01),
//! so an empty file describes the default synthetic-data experiment.
//! Unknown keys are rejected.

use std::path::Path;

use anyhow::{bail, Context, Result};
use nomafl_core::sim::ExperimentConfig;

/// Parse a config from TOML text; the empty string yields the defaults.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        toml::from_str(text).context("invalid experiment config")?;
    config.validate().map_err(|e| anyhow::anyhow!(e))?;
    Ok(config)
}

/// Read and parse a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config_str(&text).with_context(|| format!("in config {}", path.display()))
}

/// Serialize a config to TOML. `parse_config_str` of the output
/// reproduces the config exactly.
pub fn serialize_config(config: &ExperimentConfig) -> Result<String> {
    toml::to_string_pretty(config).context("cannot serialize config")
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scheme: Option<String>,
    pub rounds: Option<usize>,
    pub data_mode: Option<String>,
    pub ann_enabled: Option<bool>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) -> Result<()> {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(scheme) = &self.scheme {
            config.scheme = parse_kebab(scheme, "scheme")?;
        }
        if let Some(rounds) = self.rounds {
            config.rounds = rounds;
        }
        if let Some(mode) = &self.data_mode {
            config.data_mode = parse_kebab(mode, "data mode")?;
        }
        if let Some(ann) = self.ann_enabled {
            config.ann_enabled = ann;
        }
        config.validate().map_err(|e| anyhow::anyhow!(e))?;
        Ok(())
    }
}

/// Parse a kebab-case enum value via its serde representation.
fn parse_kebab<T: serde::de::DeserializeOwned>(value: &str, what: &str) -> Result<T> {
    match toml::from_str::<ValueHolder<T>>(&format!("value = \"{value}\"")) {
        Ok(holder) => Ok(holder.value),
        Err(_) => bail!("unknown {what}: {value}"),
    }
}

#[derive(serde::Deserialize)]
struct ValueHolder<T> {
    value: T,
}
