//! Run configuration: hyperparameters for ensemble construction.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FingerprintStrategy {
    /// Concatenated one-hot encodings of the validation answers.
    AnswerPattern,
    /// Mean of per-response sentence embeddings read from an embedding file.
    ExternalEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOrder {
    FilterThenCluster,
    ClusterThenFilter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub quantile_q: f64,
    /// AccuracyFactor: weights are `exp(gamma * alpha)` before normalization.
    pub gamma: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub fingerprint_strategy: FingerprintStrategy,
    pub filter_order: FilterOrder,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            quantile_q: 0.05,
            gamma: 5.0,
            dbscan_eps: 0.0001,
            dbscan_min_pts: 2,
            fingerprint_strategy: FingerprintStrategy::AnswerPattern,
            filter_order: FilterOrder::FilterThenCluster,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.quantile_q) {
            return Err(Error::Config(format!(
                "quantile_q must lie in [0, 1], got {}",
                self.quantile_q
            )));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if !(self.dbscan_eps > 0.0) || !self.dbscan_eps.is_finite() {
            return Err(Error::Config(format!(
                "dbscan_eps must be finite and > 0, got {}",
                self.dbscan_eps
            )));
        }
        if self.dbscan_min_pts < 1 {
            return Err(Error::Config("dbscan_min_pts must be >= 1".into()));
        }
        Ok(())
    }
}

/// A partial set of overrides. Used for CLI flags and for the user-defined
/// `efficient` preset slot of a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    pub quantile_q: Option<f64>,
    pub gamma: Option<f64>,
    pub dbscan_eps: Option<f64>,
    pub dbscan_min_pts: Option<usize>,
    pub fingerprint_strategy: Option<FingerprintStrategy>,
    pub filter_order: Option<FilterOrder>,
    pub seed: Option<u64>,
}

impl ConfigPatch {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.quantile_q {
            cfg.quantile_q = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.dbscan_eps {
            cfg.dbscan_eps = v;
        }
        if let Some(v) = self.dbscan_min_pts {
            cfg.dbscan_min_pts = v;
        }
        if let Some(v) = self.fingerprint_strategy {
            cfg.fingerprint_strategy = v;
        }
        if let Some(v) = self.filter_order {
            cfg.filter_order = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
    }
}

/// On-disk config: the run fields at top level plus an optional
/// `[efficient]` table holding a user-defined preset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub run: ConfigPatch,
    pub efficient: Option<ConfigPatch>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Open {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |e: toml::de::Error| Error::Config(e.to_string());
        let mut table: toml::Table = toml::from_str(text).map_err(bad)?;
        let efficient = match table.remove("efficient") {
            Some(v) => Some(ConfigPatch::deserialize(v).map_err(bad)?),
            None => None,
        };
        let run = ConfigPatch::deserialize(toml::Value::Table(table)).map_err(bad)?;
        Ok(ConfigFile { run, efficient })
    }

    pub fn run_config(&self) -> RunConfig {
        let mut cfg = RunConfig::default();
        self.run.apply(&mut cfg);
        cfg
    }
}
