//! Experiment configuration: TOML or JSON files, command-line overrides and
//! the content hash embedded in every output.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Reads a config file into a JSON value; `.json` files are parsed as JSON,
/// everything else as TOML.
pub fn read_config_value(path: &Path) -> Result<Value, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    } else {
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(table).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Deserializes a typed config, checking the optional `experiment` tag.
pub fn parse_config<T: DeserializeOwned + Default>(value: Option<Value>, experiment: &str) -> Result<T, CliError> {
    let Some(mut value) = value else {
        return Ok(T::default());
    };
    if let Some(obj) = value.as_object_mut() {
        if let Some(tag) = obj.remove("experiment") {
            if tag.as_str() != Some(experiment) {
                return Err(CliError::Config(format!(
                    "config is for experiment {tag}, not \"{experiment}\""
                )));
            }
        }
    }
    serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
}

/// Command-line flags that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Runtime fields carried by every experiment config. `workers` and `out`
/// decide how fast and where results are produced, never their content, so
/// configs skip them when serializing and they stay out of the hash.
pub trait RuntimeFields {
    fn seed_mut(&mut self) -> &mut u64;
    fn workers_mut(&mut self) -> &mut usize;
    fn out_mut(&mut self) -> &mut Option<PathBuf>;
}

impl Overrides {
    pub fn apply<C: RuntimeFields>(&self, cfg: &mut C) -> Result<(), CliError> {
        if let Some(s) = self.seed {
            *cfg.seed_mut() = s;
        }
        if let Some(w) = self.workers {
            *cfg.workers_mut() = w;
        }
        if let Some(o) = &self.out {
            *cfg.out_mut() = Some(o.clone());
        }
        if *cfg.workers_mut() == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Implements [`RuntimeFields`] for a struct with `seed`, `workers` and `out`.
#[macro_export]
macro_rules! runtime_fields {
    ($t:ty) => {
        impl $crate::config::RuntimeFields for $t {
            fn seed_mut(&mut self) -> &mut u64 {
                &mut self.seed
            }
            fn workers_mut(&mut self) -> &mut usize {
                &mut self.workers
            }
            fn out_mut(&mut self) -> &mut Option<std::path::PathBuf> {
                &mut self.out
            }
        }
    };
}

pub fn default_workers() -> usize {
    1
}

pub fn default_seed() -> u64 {
    1
}

/// SHA-256 of the canonical JSON form of a resolved config, as lowercase hex.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_string(cfg).expect("configs serialize");
    Sha256::digest(json.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            let mut grid: Vec<f64> = (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect();
            grid[0] = lo;
            grid[n - 1] = hi;
            grid
        }
    }
}

/// Zero followed by `n − 1` log-spaced points up to `hi`, starting at
/// `hi / 2^{n−2}`.
pub fn zero_and_log_grid(hi: f64, n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut grid = vec![0.0];
    if n > 1 {
        grid.extend(log_grid(hi / 2f64.powi(n as i32 - 2), hi, n - 1));
    }
    grid
}
