//! Subsampled regression random forests, built around the exact CART split
//! protocol: without-replacement subsampling per tree, breadth-first growth
//! to a fixed leaf budget, variance-reduction splits with midpoint
//! tie-breaking, and prediction by averaging leaf means across trees.
//!
//! Alongside the estimator the crate ships the population-level analysis
//! tools for known additive models (theoretical split criterion and trees,
//! cut-sequence distances, exact within-cell variation), a deterministic
//! synthetic data generator, connection-weight diagnostics, and the
//! experiment drivers that turn all of it into reproducible metric files.

pub mod dataset;
pub mod error;
pub mod experiments;
pub mod forest;
pub mod geom;
pub mod io_util;
pub mod model;
pub mod oracle;
pub mod quad;
pub mod rng;
pub mod splitter;
pub mod tree;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use forest::{Forest, ForestParams};
pub use geom::Cell;
pub use model::{AdditiveModel, Component};
pub use splitter::{Cut, SplitEvaluation};
pub use tree::GrownTree;
