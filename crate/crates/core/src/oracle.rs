//! Population-level split analysis for known additive models.
//!
//! The theoretical criterion replaces sample variances with conditional
//! variances under the model,
//!
//! ```text
//! L*(j, z) = V[Y | X in A]
//!          - P[X_j <  z | A] V[Y | X_j <  z, A]
//!          - P[X_j >= z | A] V[Y | X_j >= z, A].
//! ```
//!
//! Under a uniform X and an additive m, every coordinate other than `j`
//! contributes the same variance to all three terms, and so does the noise;
//! both cancel, leaving a one-dimensional computation against component `j`
//! alone. Its integrals come from the component catalog (closed forms, with
//! adaptive quadrature behind the generic entries).

use crate::error::{Error, Result};
use crate::geom::Cell;
use crate::model::AdditiveModel;
use crate::splitter::Cut;

/// An ordered run of cuts refining the root cell.
pub type CutSequence = Vec<Cut>;

/// Value tolerance for collecting tied optima, and the degeneracy floor.
const TIE_TOL: f64 = 1e-8;
const DEGENERATE_TOL: f64 = 1e-12;
/// Absolute position tolerance of the golden-section refinement.
const POSITION_TOL: f64 = 1e-8;
const GRID: usize = 1024;

fn check_model_cell(model: &AdditiveModel, cell: &Cell) -> Result<()> {
    cell.validate()?;
    if cell.dim() != model.p {
        return Err(Error::Domain(format!(
            "cell dimension {} does not match model p = {}",
            cell.dim(),
            model.p
        )));
    }
    if cell.volume() <= 0.0 {
        return Err(Error::domain("cell has zero volume"));
    }
    Ok(())
}

/// Conditional variance of component `j` over `[u, v]`.
fn component_variance(model: &AdditiveModel, j: usize, u: f64, v: f64) -> f64 {
    let w = v - u;
    if w <= 0.0 {
        return 0.0;
    }
    let mean = model.component(j).integral(u, v) / w;
    let mean_sq = model.component(j).integral_sq(u, v) / w;
    (mean_sq - mean * mean).max(0.0)
}

/// The theoretical split criterion `L*(j, z)` on `cell`.
pub fn theoretical_criterion(model: &AdditiveModel, cell: &Cell, cut: &Cut) -> Result<f64> {
    check_model_cell(model, cell)?;
    if !cell.admits(cut) {
        return Err(Error::Domain(format!(
            "cut ({}, {}) is not admissible in the cell",
            cut.direction, cut.position
        )));
    }
    let j = cut.direction;
    let (a, b) = (cell.lower[j], cell.upper[j]);
    let z = cut.position;
    let p_left = (z - a) / (b - a);
    let p_right = 1.0 - p_left;
    Ok(component_variance(model, j, a, b)
        - p_left * component_variance(model, j, a, z)
        - p_right * component_variance(model, j, z, b))
}

/// Result of maximizing `L*` over a cell.
#[derive(Debug, Clone)]
pub struct TheoreticalSplit {
    /// Canonical best cut (smallest direction, then smallest position,
    /// among the tied optima).
    pub cut: Cut,
    pub value: f64,
    /// All cuts whose criterion lies within `1e-8` of the maximum; the
    /// optimum need not be unique.
    pub optima: Vec<Cut>,
    /// Set when `L*` is flat on the cell (all candidate directions
    /// uninformative); the canonical cut is then the deterministic
    /// fallback: smallest direction, cell midpoint.
    pub degenerate: bool,
}

/// Maximize `L*` over the candidate directions: dense-grid bracketing, then
/// golden-section refinement of each local maximum to absolute position
/// tolerance `1e-8`.
pub fn best_theoretical_cut(
    model: &AdditiveModel,
    cell: &Cell,
    directions: &[usize],
) -> Result<TheoreticalSplit> {
    check_model_cell(model, cell)?;
    if directions.is_empty() {
        return Err(Error::domain("best_theoretical_cut: no candidate directions"));
    }
    if let Some(&d) = directions.iter().find(|&&d| d >= model.p) {
        return Err(Error::Domain(format!(
            "best_theoretical_cut: direction {d} out of range for p = {}",
            model.p
        )));
    }
    let mut dirs: Vec<usize> = directions.to_vec();
    dirs.sort_unstable();
    dirs.dedup();

    let mut candidates: Vec<(Cut, f64)> = Vec::new();
    for &j in &dirs {
        let (a, b) = (cell.lower[j], cell.upper[j]);
        let var_parent = component_variance(model, j, a, b);
        let g = |z: f64| {
            let p_left = (z - a) / (b - a);
            var_parent
                - p_left * component_variance(model, j, a, z)
                - (1.0 - p_left) * component_variance(model, j, z, b)
        };

        let step = (b - a) / GRID as f64;
        let grid_val: Vec<f64> = (0..=GRID)
            .map(|i| if i == 0 || i == GRID { 0.0 } else { g(a + step * i as f64) })
            .collect();
        for i in 1..GRID {
            // local maximum on the grid (plateaus count on their left edge)
            if grid_val[i] >= grid_val[i - 1] && grid_val[i] >= grid_val[i + 1] {
                let lo = a + step * (i - 1) as f64;
                let hi = a + step * (i + 1) as f64;
                let (z, v) = golden_argmax(&g, lo, hi, POSITION_TOL);
                if z > a && z < b {
                    candidates.push((Cut { direction: j, position: z }, v));
                }
            }
        }
    }

    let global = candidates.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    if candidates.is_empty() || global <= DEGENERATE_TOL {
        let j = dirs[0];
        let midpoint = 0.5 * (cell.lower[j] + cell.upper[j]);
        let cut = Cut { direction: j, position: midpoint };
        return Ok(TheoreticalSplit { cut, value: 0.0, optima: vec![cut], degenerate: true });
    }

    let mut optima: Vec<Cut> = Vec::new();
    let mut kept: Vec<(Cut, f64)> =
        candidates.into_iter().filter(|&(_, v)| v >= global - TIE_TOL).collect();
    kept.sort_by(|l, r| {
        (l.0.direction, l.0.position)
            .partial_cmp(&(r.0.direction, r.0.position))
            .expect("finite positions")
    });
    for (cut, _) in kept {
        let duplicate = optima
            .iter()
            .any(|o| o.direction == cut.direction && (o.position - cut.position).abs() <= POSITION_TOL);
        if !duplicate {
            optima.push(cut);
        }
    }
    Ok(TheoreticalSplit { cut: optima[0], value: global, optima, degenerate: false })
}

fn golden_argmax<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, xtol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > xtol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    let z = 0.5 * (lo + hi);
    (z, f(z))
}

/// Theoretical tree stopped at level `k`: every node splits with the full
/// direction set and no data, so the only randomness-free object remains.
/// Tied optima fan out into parallel branches, which is what makes the set
/// of optimal cut sequences per query point available.
#[derive(Debug, Clone)]
pub struct TheoreticalTree {
    pub k: usize,
    /// True when any node's criterion was flat.
    pub degenerate: bool,
    root: TheoNode,
}

#[derive(Debug, Clone)]
struct TheoNode {
    branches: Vec<TheoBranch>,
}

#[derive(Debug, Clone)]
struct TheoBranch {
    cut: Cut,
    left: Box<TheoNode>,
    right: Box<TheoNode>,
}

const NODE_BUDGET: usize = 100_000;

/// Build the theoretical tree of depth `k` for the model.
pub fn theoretical_tree(model: &AdditiveModel, k: usize) -> Result<TheoreticalTree> {
    if k == 0 {
        return Err(Error::config("theoretical_tree: k must be at least 1"));
    }
    let dirs: Vec<usize> = (0..model.p).collect();
    let mut degenerate = false;
    let mut budget = NODE_BUDGET;
    let root = build_theo(model, &Cell::unit(model.p), k, &dirs, &mut degenerate, &mut budget)?;
    Ok(TheoreticalTree { k, degenerate, root })
}

fn build_theo(
    model: &AdditiveModel,
    cell: &Cell,
    depth_left: usize,
    dirs: &[usize],
    degenerate: &mut bool,
    budget: &mut usize,
) -> Result<TheoNode> {
    if *budget == 0 {
        return Err(Error::Assertion(
            "theoretical tree exceeded its node budget (too many tied optima)".into(),
        ));
    }
    *budget -= 1;
    if depth_left == 0 {
        return Ok(TheoNode { branches: Vec::new() });
    }
    let split = best_theoretical_cut(model, cell, dirs)?;
    if split.degenerate {
        *degenerate = true;
    }
    let mut branches = Vec::with_capacity(split.optima.len());
    for cut in &split.optima {
        let (left_cell, right_cell) = cell.split(cut)?;
        let left = build_theo(model, &left_cell, depth_left - 1, dirs, degenerate, budget)?;
        let right = build_theo(model, &right_cell, depth_left - 1, dirs, degenerate, budget)?;
        branches.push(TheoBranch { cut: *cut, left: Box::new(left), right: Box::new(right) });
    }
    Ok(TheoNode { branches })
}

impl TheoreticalTree {
    /// All optimal k-tuples of cuts that build the depth-k cell containing `x`.
    pub fn sequences_for(&self, x: &[f64]) -> Vec<CutSequence> {
        let mut out = Vec::new();
        let mut prefix = Vec::with_capacity(self.k);
        collect_sequences(&self.root, x, &mut prefix, &mut out);
        out
    }

    /// The canonical sequence (first branch at every node).
    pub fn canonical_cuts_for(&self, x: &[f64]) -> CutSequence {
        let mut cuts = Vec::with_capacity(self.k);
        let mut node = &self.root;
        while let Some(branch) = node.branches.first() {
            cuts.push(branch.cut);
            node = if x[branch.cut.direction] < branch.cut.position {
                &branch.left
            } else {
                &branch.right
            };
        }
        cuts
    }
}

fn collect_sequences(
    node: &TheoNode,
    x: &[f64],
    prefix: &mut Vec<Cut>,
    out: &mut Vec<CutSequence>,
) {
    if node.branches.is_empty() {
        out.push(prefix.clone());
        return;
    }
    for branch in &node.branches {
        prefix.push(branch.cut);
        let child = if x[branch.cut.direction] < branch.cut.position {
            &branch.left
        } else {
            &branch.right
        };
        collect_sequences(child, x, prefix, out);
        prefix.pop();
    }
}

/// Sup-norm distance from one empirical cut sequence to the nearest of the
/// theoretical sequences: direction indices and positions are compared on
/// the same scale, so any direction mismatch dominates.
pub fn cut_distance(empirical: &CutSequence, theoretical: &[CutSequence]) -> Result<f64> {
    if theoretical.is_empty() {
        return Err(Error::domain("cut_distance: empty theoretical set"));
    }
    let k = empirical.len();
    if theoretical.iter().any(|t| t.len() != k) {
        return Err(Error::domain("cut_distance: sequences must have equal length"));
    }
    let mut best = f64::INFINITY;
    for seq in theoretical {
        let sup = empirical
            .iter()
            .zip(seq.iter())
            .map(|(e, t)| {
                let dir_gap = (e.direction as f64 - t.direction as f64).abs();
                let pos_gap = (e.position - t.position).abs();
                dir_gap.max(pos_gap)
            })
            .fold(0.0f64, f64::max);
        best = best.min(sup);
    }
    Ok(best)
}

/// Exact variation of `m` within the cell:
/// `Δ(m, A) = Σ_j (max - min of m_j over A's j-interval)` by additivity.
pub fn cell_variation(model: &AdditiveModel, cell: &Cell) -> Result<f64> {
    check_model_cell(model, cell)?;
    let mut total = 0.0;
    for j in 0..model.p {
        let (lo, hi) = model.component(j).range(cell.lower[j], cell.upper[j]);
        total += hi - lo;
    }
    Ok(total)
}
