//! Axis-aligned cells of `[0,1]^p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splitter::Cut;

/// A hyper-rectangular cell with per-coordinate `[lower, upper)` bounds.
///
/// Intervals are closed on the left and open on the right, except that the
/// global upper face of `[0,1]^p` is closed, so the leaves of a tree tile
/// the whole cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Cell {
    /// The root cell `[0,1]^p`.
    pub fn unit(p: usize) -> Self {
        Cell { lower: vec![0.0; p], upper: vec![1.0; p] }
    }

    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::domain("cell bounds must have equal, nonzero dimension"));
        }
        let cell = Cell { lower, upper };
        cell.validate()?;
        Ok(cell)
    }

    pub fn validate(&self) -> Result<()> {
        for j in 0..self.dim() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
                return Err(Error::Domain(format!(
                    "cell has empty interval on coordinate {j}: [{lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|j| self.upper[j] - self.lower[j]).product()
    }

    /// Membership under the left-closed / right-open convention, with the
    /// global face `x_j = 1` belonging to cells whose upper bound is 1.
    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        (0..self.dim()).all(|j| {
            x[j] >= self.lower[j]
                && (x[j] < self.upper[j] || (self.upper[j] == 1.0 && x[j] == 1.0))
        })
    }

    /// True when `cut` lies strictly inside this cell's interval along the
    /// cut direction.
    pub fn admits(&self, cut: &Cut) -> bool {
        cut.direction < self.dim()
            && cut.position > self.lower[cut.direction]
            && cut.position < self.upper[cut.direction]
    }

    /// Split into `(left, right)` children along `cut`.
    pub fn split(&self, cut: &Cut) -> Result<(Cell, Cell)> {
        if !self.admits(cut) {
            return Err(Error::Domain(format!(
                "cut ({}, {}) is not strictly inside the cell",
                cut.direction, cut.position
            )));
        }
        let mut left = self.clone();
        let mut right = self.clone();
        left.upper[cut.direction] = cut.position;
        right.lower[cut.direction] = cut.position;
        Ok((left, right))
    }
}
