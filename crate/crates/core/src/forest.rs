//! Forests: M independent trees over without-replacement subsamples,
//! averaged predictions, and the connection-weight diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::rng::{self, TREE_STREAM_BASE};
use crate::tree::{self, GrownTree};

/// Full configuration of one forest fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    /// Number of trees, M.
    pub trees: usize,
    /// Directions drawn per split.
    pub mtry: usize,
    /// Subsample size per tree.
    pub a_n: usize,
    /// Leaf budget per tree.
    pub t_n: usize,
    /// Master seed; tree j reads its own stream of it.
    pub seed: u64,
}

impl ForestParams {
    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::config("trees: must be at least 1"));
        }
        if self.mtry == 0 || self.mtry > p {
            return Err(Error::Config(format!("mtry: must lie in 1..={p}, got {}", self.mtry)));
        }
        if self.a_n == 0 || self.a_n > n {
            return Err(Error::Config(format!("a_n: must lie in 1..={n}, got {}", self.a_n)));
        }
        if self.t_n == 0 || self.t_n > self.a_n {
            return Err(Error::Config(format!(
                "t_n: must lie in 1..={}, got {}",
                self.a_n, self.t_n
            )));
        }
        Ok(())
    }
}

/// Monte Carlo estimate of the connection weights `W_ni(x)` over the fitted
/// trees: the per-tree kernel is `1[X_i in x's leaf] / leaf size`, which
/// reduces to the plain co-leaf indicator when leaves are singletons and
/// keeps the weights summing to one in every regime.
#[derive(Debug, Clone)]
pub struct ConnectionWeights {
    /// One weight per training row.
    pub weights: Vec<f64>,
}

impl ConnectionWeights {
    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    pub params: ForestParams,
    pub n: usize,
    pub p: usize,
    trees: Vec<GrownTree>,
}

/// Fit M trees. Tree j derives its randomness from stream
/// `TREE_STREAM_BASE + j` of the master seed, so the fit is reproducible
/// regardless of how trees are scheduled across threads.
pub fn fit(dataset: &Dataset, params: ForestParams) -> Result<Forest> {
    params.validate(dataset.n(), dataset.p())?;
    let trees: Vec<GrownTree> = (0..params.trees)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng::stream(params.seed, TREE_STREAM_BASE + j as u64);
            let mut subsample =
                rand::seq::index::sample(&mut rng, dataset.n(), params.a_n).into_vec();
            subsample.sort_unstable();
            tree::grow(dataset, subsample, params.t_n, params.mtry, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(Forest { params, n: dataset.n(), p: dataset.p(), trees })
}

impl Forest {
    pub fn trees(&self) -> &[GrownTree] {
        &self.trees
    }

    fn check_query(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.p || x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain(format!("query point must lie in [0,1]^{}", self.p)));
        }
        Ok(())
    }

    /// Plain average of the individual tree predictions.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_query(x)?;
        let sum: f64 = self.trees.iter().map(|t| t.predict(x).expect("validated query")).sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// Estimate the connection weights of `x` against every training row.
    pub fn connection_weights(&self, x: &[f64]) -> Result<ConnectionWeights> {
        self.check_query(x)?;
        let mut weights = vec![0.0f64; self.n];
        for tree in &self.trees {
            let leaf = tree.leaf(x).expect("validated query");
            let share = 1.0 / leaf.points.len() as f64;
            for &row in &leaf.points {
                weights[row] += share;
            }
        }
        let m = self.trees.len() as f64;
        for w in &mut weights {
            *w /= m;
        }
        Ok(ConnectionWeights { weights })
    }

    /// Serialize to versioned JSON; the round trip is value-exact.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let doc = ForestFile { format: FORMAT_NAME.to_string(), version: FORMAT_VERSION, forest: self };
        let bytes = serde_json::to_vec(&doc)
            .map_err(|e| Error::Validation(format!("forest encode: {e}")))?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let doc: ForestFileOwned = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Parse { line: 0, message: format!("forest file: {e}") })?;
        if doc.format != FORMAT_NAME || doc.version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported forest file {}/{} (expected {}/{})",
                doc.format, doc.version, FORMAT_NAME, FORMAT_VERSION
            )));
        }
        Ok(doc.forest)
    }
}

const FORMAT_NAME: &str = "subforest-forest";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct ForestFile<'a> {
    format: String,
    version: u32,
    forest: &'a Forest,
}

#[derive(Deserialize)]
struct ForestFileOwned {
    format: String,
    version: u32,
    forest: Forest,
}
