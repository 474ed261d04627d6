//! Run configuration: one TOML file per run, with the seed embedded so every
//! command is deterministic given its config. Scalar fields can be
//! overridden from the command line.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use subforest::error::{Error, Result};
use subforest::experiments::{RegimeSchedule, SchedulePoint, ScheduleRule, TheoremRegime};

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub gen: Option<GenConfig>,
    pub forest: Option<ForestConfig>,
    pub fit: Option<FitConfig>,
    pub predict: Option<PredictConfig>,
    pub experiment: Option<ExperimentConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub model: PathBuf,
    pub n: usize,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    pub mtry: Option<usize>,
    /// a_n; defaults to the full sample.
    pub subsample: Option<usize>,
    /// t_n; defaults to the subsample size (fully grown).
    pub leaves: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub dataset: PathBuf,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub forest: PathBuf,
    pub queries: PathBuf,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: PathBuf,
    pub n_grid: Vec<usize>,
    /// "shallow" (t_n ≪ a_n = n), "fully_grown" (t_n = a_n ≪ n) or "explicit".
    pub schedule: String,
    pub explicit: Option<Vec<ExplicitPoint>>,
    /// Regime an explicit schedule claims: "shallow" or "fully_grown".
    pub explicit_regime: Option<String>,
    pub trees: usize,
    pub mtry: Option<usize>,
    pub replicates: usize,
    /// Query points for the MSE estimate (consistency).
    pub n_test: Option<usize>,
    /// Query points per replicate (sparsity, cutdist, cellvar).
    pub n_query: Option<usize>,
    /// Path depth examined (sparsity, cutdist).
    pub k: Option<usize>,
    /// Thresholds for the within-cell variation probabilities (cellvar).
    pub xi_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitPoint {
    pub n: usize,
    pub a: usize,
    pub t: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

impl ExperimentConfig {
    pub fn schedule(&self) -> Result<RegimeSchedule> {
        let rule = match self.schedule.as_str() {
            "shallow" => ScheduleRule::ShallowTrees,
            "fully_grown" => ScheduleRule::FullyGrown,
            "explicit" => {
                let points = self
                    .explicit
                    .as_ref()
                    .ok_or_else(|| {
                        Error::config("experiment.explicit: required for an explicit schedule")
                    })?
                    .iter()
                    .map(|pt| SchedulePoint { n: pt.n, a_n: pt.a, t_n: pt.t })
                    .collect();
                let regime = match self.explicit_regime.as_deref() {
                    Some("shallow") => TheoremRegime::ShallowTrees,
                    Some("fully_grown") => TheoremRegime::FullyGrown,
                    other => {
                        return Err(Error::Config(format!(
                            "experiment.explicit_regime: expected \"shallow\" or \"fully_grown\", got {other:?}"
                        )))
                    }
                };
                ScheduleRule::Explicit { points, regime }
            }
            other => {
                return Err(Error::Config(format!(
                    "experiment.schedule: expected \"shallow\", \"fully_grown\" or \"explicit\", got \"{other}\""
                )))
            }
        };
        Ok(RegimeSchedule { n_grid: self.n_grid.clone(), rule })
    }
}
