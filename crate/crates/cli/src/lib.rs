//! Config parsing, CSV export, run manifests and the self-test suite
//! behind the `nomafl` binary.

pub mod config;
pub mod csvout;
pub mod manifest;
pub mod selftest;

use std::path::PathBuf;

/// Environment variable naming the dataset directory (overridden by
/// `--data-dir`, overriding the config file).
pub const DATA_DIR_ENV: &str = "NOMAFL_DATA_DIR";

/// Resolve the dataset directory: CLI flag, then environment, then the
/// config file value.
pub fn resolve_data_dir(flag: Option<PathBuf>, from_config: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .or(from_config)
}
