//! The CART split criterion and best-cut search.
//!
//! For a cell with points `(X_i, Y_i)` and a cut `(j, z)`, the criterion is
//! the drop in normalized within-cell sum of squares,
//!
//! ```text
//! L(j, z) = (1/N) Σ (Y_i - Ȳ)^2
//!         - (1/N) Σ (Y_i - Ȳ_L 1[X_i^j < z] - Ȳ_R 1[X_i^j >= z])^2
//! ```
//!
//! with the convention 0/0 = 0 for an empty side's mean. Points strictly
//! below the position go left, the rest go right. The best cut maximizes
//! `L` over the candidate directions; its position is always the midpoint of
//! the two consecutive distinct data coordinates that straddle the optimal
//! gap, which removes position ties. Remaining ties break by smallest
//! direction, then smallest position, so results are reproducible.
//!
//! Ties are detected with a tolerance scaled by the cell's response
//! variance rather than exact float equality: distinct cuts that induce the
//! same partition (a point extreme in several coordinates, say) have
//! mathematically equal criteria whose float images differ by summation
//! order, and exact comparison would make the winner an artifact of the
//! evaluation route.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// A cut `(direction, position)`: coordinate index (zero-based) and a
/// threshold strictly inside the current cell on that coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub direction: usize,
    pub position: f64,
}

/// Outcome of scoring one cut on one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitEvaluation {
    pub cut: Cut,
    /// Variance-reduction value; nonnegative by the variance decomposition.
    pub criterion_value: f64,
    pub left_count: usize,
    pub right_count: usize,
}

/// Borrowed view of the points inside a cell.
#[derive(Debug, Clone, Copy)]
pub struct CellPoints<'a> {
    pub dataset: &'a Dataset,
    pub indices: &'a [usize],
}

impl<'a> CellPoints<'a> {
    pub fn new(dataset: &'a Dataset, indices: &'a [usize]) -> Self {
        CellPoints { dataset, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn coord(&self, k: usize, direction: usize) -> f64 {
        self.dataset.row(self.indices[k])[direction]
    }

    fn response(&self, k: usize) -> f64 {
        self.dataset.response(self.indices[k])
    }
}

/// Score one cut, computed exactly in the two-sum form above: means first,
/// then centered sums of squares (the expanded form cancels catastrophically).
pub fn evaluate_cut(points: &CellPoints<'_>, cut: &Cut) -> Result<SplitEvaluation> {
    let n = points.len();
    if n == 0 {
        return Err(Error::domain("evaluate_cut: empty cell"));
    }
    if cut.direction >= points.dataset.p() {
        return Err(Error::Domain(format!(
            "evaluate_cut: direction {} out of range for p = {}",
            cut.direction,
            points.dataset.p()
        )));
    }
    if !cut.position.is_finite() {
        return Err(Error::domain("evaluate_cut: non-finite cut position"));
    }
    for k in 0..n {
        if !points.response(k).is_finite() {
            return Err(Error::domain("evaluate_cut: non-finite response"));
        }
    }

    let (mut sum, mut sum_l, mut sum_r) = (0.0f64, 0.0f64, 0.0f64);
    let mut n_l = 0usize;
    for k in 0..n {
        let y = points.response(k);
        sum += y;
        if points.coord(k, cut.direction) < cut.position {
            sum_l += y;
            n_l += 1;
        } else {
            sum_r += y;
        }
    }
    let n_r = n - n_l;
    let mean = sum / n as f64;
    let mean_l = if n_l == 0 { 0.0 } else { sum_l / n_l as f64 };
    let mean_r = if n_r == 0 { 0.0 } else { sum_r / n_r as f64 };

    let (mut ss_parent, mut ss_children) = (0.0f64, 0.0f64);
    for k in 0..n {
        let y = points.response(k);
        let d = y - mean;
        ss_parent += d * d;
        let side_mean =
            if points.coord(k, cut.direction) < cut.position { mean_l } else { mean_r };
        let e = y - side_mean;
        ss_children += e * e;
    }

    // Nonnegative by the variance decomposition; rounding can leave a
    // sub-ulp negative residue.
    let value = ((ss_parent - ss_children) / n as f64).max(0.0);
    Ok(SplitEvaluation { cut: *cut, criterion_value: value, left_count: n_l, right_count: n_r })
}

/// Relative criterion tolerance (against the cell's response variance)
/// under which candidate cuts count as tied.
pub const TIE_REL_TOL: f64 = 1e-9;

/// Maximize the criterion over the candidate directions.
///
/// The criterion is piecewise constant in the position between data
/// coordinates, so only midpoints of consecutive distinct sorted coordinates
/// need scoring; this finds the argmax in O(N log N) per direction via
/// prefix sums over centered responses (means first, then centered sums).
/// Candidates within `TIE_REL_TOL` of the maximum, scaled by the cell
/// variance, form the tie set; the smallest direction and then the smallest
/// position wins. Returns `None` when no candidate direction has two
/// distinct coordinate values.
pub fn best_cut(points: &CellPoints<'_>, directions: &[usize]) -> Result<Option<SplitEvaluation>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::domain("best_cut: empty cell"));
    }
    if directions.is_empty() {
        return Err(Error::domain("best_cut: no candidate directions"));
    }
    let p = points.dataset.p();
    if let Some(&d) = directions.iter().find(|&&d| d >= p) {
        return Err(Error::Domain(format!("best_cut: direction {d} out of range for p = {p}")));
    }

    let n_f = n as f64;
    let mean = (0..n).map(|k| points.response(k)).sum::<f64>() / n_f;
    let variance = (0..n)
        .map(|k| {
            let c = points.response(k) - mean;
            c * c
        })
        .sum::<f64>()
        / n_f;

    let mut dirs: Vec<usize> = directions.to_vec();
    dirs.sort_unstable();
    dirs.dedup();

    let mut candidates: Vec<(f64, usize, f64)> = Vec::new(); // value, dir, position
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &dir in &dirs {
        pairs.clear();
        for k in 0..n {
            pairs.push((points.coord(k, dir), points.response(k) - mean));
        }
        pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).expect("finite coordinates"));

        let total: f64 = pairs.iter().map(|&(_, c)| c).sum();
        let mut prefix = 0.0f64;
        for k in 1..n {
            prefix += pairs[k - 1].1;
            let (x_lo, x_hi) = (pairs[k - 1].0, pairs[k].0);
            if x_lo >= x_hi {
                continue; // duplicate coordinate, zero-width gap
            }
            let z = 0.5 * (x_lo + x_hi);
            if z <= x_lo || z >= x_hi {
                continue; // adjacent floats: the midpoint collapsed onto a data value
            }
            let left = prefix;
            let right = total - prefix;
            let nl = k as f64;
            let nr = (n - k) as f64;
            // Between-groups form of the criterion over centered responses.
            let value = (left * left / nl + right * right / nr) / n_f;
            candidates.push((value, dir, z));
        }
    }

    let Some(max_value) =
        candidates.iter().map(|&(v, _, _)| v).fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.max(v)))
        })
    else {
        return Ok(None);
    };

    let tol = TIE_REL_TOL * variance;
    let (_, dir, z) = candidates
        .into_iter()
        .filter(|&(v, _, _)| v >= max_value - tol)
        .min_by(|a, b| (a.1, a.2).partial_cmp(&(b.1, b.2)).expect("finite positions"))
        .expect("tie set contains the maximum");

    // Report the winner scored through the canonical two-sum route so the
    // returned value is exactly what evaluate_cut produces.
    let cut = Cut { direction: dir, position: z };
    evaluate_cut(points, &cut).map(Some)
}

/// Uniform `mtry`-subset of `{0..p-1}` without replacement, redrawn
/// independently at every call. Returned sorted ascending.
pub fn draw_mtry<R: RngCore>(p: usize, mtry: usize, rng: &mut R) -> Result<Vec<usize>> {
    if mtry == 0 || mtry > p {
        return Err(Error::Config(format!("mtry must lie in 1..={p}, got {mtry}")));
    }
    let mut picked = rand::seq::index::sample(rng, p, mtry).into_vec();
    picked.sort_unstable();
    Ok(picked)
}
