//! A single randomized CART tree.
//!
//! Growth follows the breadth-first protocol literally: level lists are FIFO
//! queues, the first cell of the current level is processed next, a
//! single-point cell passes through to the next level unchanged, and any
//! other cell draws a fresh mtry-subset of directions, takes the best CART
//! cut, and appends its two children (left then right) to the next level.
//! Growth stops once the partition holds `t_n` cells.
//!
//! Two situations the protocol leaves open are resolved as follows: a
//! multi-point cell with no admissible cut along the drawn directions passes
//! through like a single-point cell without incrementing the node count, and
//! growth terminates early if a full level pass produces no split (otherwise
//! duplicated rows could spin the loop forever).

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geom::Cell;
use crate::splitter::{self, CellPoints, Cut};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeNode {
    pub cell: Cell,
    pub depth: usize,
    /// Present on internal nodes only.
    pub cut: Option<Cut>,
    /// Indices into `nodes` of the (left, right) children.
    pub children: Option<(usize, usize)>,
    /// Dataset row indices inside the cell.
    pub points: Vec<usize>,
    /// Mean response of `points`; 0 for an (impossible post-growth) empty leaf.
    pub leaf_mean: f64,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// A grown tree: an arena of nodes with node 0 as the root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrownTree {
    nodes: Vec<TreeNode>,
    pub leaf_count: usize,
    pub subsample: Vec<usize>,
}

/// Grow a tree on the given subsample rows.
///
/// Deterministic: the rng is consumed only by the per-split mtry draws, in
/// breadth-first visit order, so identical inputs reproduce the tree
/// bit-for-bit.
pub fn grow(
    dataset: &Dataset,
    subsample: Vec<usize>,
    t_n: usize,
    mtry: usize,
    rng: &mut impl RngCore,
) -> Result<GrownTree> {
    let a_n = subsample.len();
    if a_n == 0 {
        return Err(Error::config("grow: empty subsample"));
    }
    if t_n == 0 || t_n > a_n {
        return Err(Error::Config(format!("grow: t_n must lie in 1..={a_n}, got {t_n}")));
    }
    let p = dataset.p();
    if mtry == 0 || mtry > p {
        return Err(Error::Config(format!("grow: mtry must lie in 1..={p}, got {mtry}")));
    }
    {
        let mut seen = subsample.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != a_n || *seen.last().unwrap() >= dataset.n() {
            return Err(Error::config("grow: subsample indices must be distinct and in range"));
        }
    }

    let mut nodes = vec![TreeNode {
        cell: Cell::unit(p),
        depth: 0,
        cut: None,
        children: None,
        points: subsample.clone(),
        leaf_mean: 0.0,
    }];

    let mut current: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    current.push_back(0);
    let mut next: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut n_nodes = 1usize;
    let mut splits_this_level = 0usize;

    while n_nodes < t_n {
        let idx = match current.pop_front() {
            None => {
                if splits_this_level == 0 {
                    break; // nothing left to split anywhere
                }
                std::mem::swap(&mut current, &mut next);
                splits_this_level = 0;
                continue;
            }
            Some(idx) => idx,
        };

        if nodes[idx].points.len() == 1 {
            next.push_back(idx);
            continue;
        }

        let directions = splitter::draw_mtry(p, mtry, rng)?;
        let chosen = {
            let pts = CellPoints::new(dataset, &nodes[idx].points);
            splitter::best_cut(&pts, &directions)?
        };
        let Some(se) = chosen else {
            // No admissible cut along the drawn directions; pass through.
            next.push_back(idx);
            continue;
        };

        let cut = se.cut;
        let (left_cell, right_cell) = nodes[idx].cell.split(&cut)?;
        let (mut left_pts, mut right_pts) = (Vec::new(), Vec::new());
        for &row in &nodes[idx].points {
            if dataset.row(row)[cut.direction] < cut.position {
                left_pts.push(row);
            } else {
                right_pts.push(row);
            }
        }
        debug_assert_eq!(left_pts.len(), se.left_count);
        debug_assert_eq!(right_pts.len(), se.right_count);
        debug_assert!(!left_pts.is_empty() && !right_pts.is_empty());

        let depth = nodes[idx].depth + 1;
        let left_idx = nodes.len();
        nodes.push(TreeNode {
            cell: left_cell,
            depth,
            cut: None,
            children: None,
            points: left_pts,
            leaf_mean: 0.0,
        });
        let right_idx = nodes.len();
        nodes.push(TreeNode {
            cell: right_cell,
            depth,
            cut: None,
            children: None,
            points: right_pts,
            leaf_mean: 0.0,
        });
        nodes[idx].cut = Some(cut);
        nodes[idx].children = Some((left_idx, right_idx));
        next.push_back(left_idx);
        next.push_back(right_idx);
        n_nodes += 1;
        splits_this_level += 1;
    }

    let mut leaf_count = 0usize;
    for node in nodes.iter_mut() {
        if node.is_leaf() {
            leaf_count += 1;
            debug_assert!(!node.points.is_empty(), "grown leaves always hold a point");
            node.leaf_mean = if node.points.is_empty() {
                0.0
            } else {
                node.points.iter().map(|&i| dataset.response(i)).sum::<f64>()
                    / node.points.len() as f64
            };
        }
    }
    debug_assert_eq!(leaf_count, n_nodes);

    Ok(GrownTree { nodes, leaf_count, subsample })
}

impl GrownTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn p(&self) -> usize {
        self.nodes[0].cell.dim()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    fn check_query(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.p() || x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain(format!(
                "query point must lie in [0,1]^{}, got {x:?}",
                self.p()
            )));
        }
        Ok(())
    }

    fn leaf_index(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        while let Some((l, r)) = self.nodes[idx].children {
            let cut = self.nodes[idx].cut.expect("internal node has a cut");
            idx = if x[cut.direction] < cut.position { l } else { r };
        }
        idx
    }

    /// The leaf node containing `x`.
    pub fn leaf(&self, x: &[f64]) -> Result<&TreeNode> {
        self.check_query(x)?;
        Ok(&self.nodes[self.leaf_index(x)])
    }

    /// Mean response of the leaf containing `x`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.leaf(x)?.leaf_mean)
    }

    /// The ordered cuts along the path from the root to `x`'s leaf, truncated
    /// to at most `k`.
    pub fn cut_sequence(&self, x: &[f64], k: usize) -> Result<Vec<Cut>> {
        self.check_query(x)?;
        let mut cuts = Vec::new();
        let mut idx = 0;
        while let Some((l, r)) = self.nodes[idx].children {
            if cuts.len() == k {
                break;
            }
            let cut = self.nodes[idx].cut.expect("internal node has a cut");
            cuts.push(cut);
            idx = if x[cut.direction] < cut.position { l } else { r };
        }
        Ok(cuts)
    }

    /// Directions of the first `k` cuts on the path to `x`, padded with
    /// `None` (the "cut fewer than q times" sentinel) when the path is
    /// shorter than `k`.
    pub fn cut_directions(&self, x: &[f64], k: usize) -> Result<Vec<Option<usize>>> {
        let cuts = self.cut_sequence(x, k)?;
        let mut dirs: Vec<Option<usize>> = cuts.iter().map(|c| Some(c.direction)).collect();
        dirs.resize(k, None);
        Ok(dirs)
    }

    /// Structural audit used by tests: every performed cut sits strictly
    /// inside its cell at a midpoint of two consecutive distinct point
    /// coordinates, children partition their parent's points, and leaf means
    /// match their points.
    pub fn check_consistency(&self, dataset: &Dataset) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            match (node.cut, node.children) {
                (None, None) => {
                    if node.points.is_empty() {
                        return Err(Error::Assertion(format!("leaf {i} is empty")));
                    }
                    let mean = node.points.iter().map(|&r| dataset.response(r)).sum::<f64>()
                        / node.points.len() as f64;
                    if (mean - node.leaf_mean).abs() > 1e-12 {
                        return Err(Error::Assertion(format!("leaf {i} mean mismatch")));
                    }
                }
                (Some(cut), Some((l, r))) => {
                    if !node.cell.admits(&cut) {
                        return Err(Error::Assertion(format!(
                            "node {i}: cut not strictly inside its cell"
                        )));
                    }
                    let mut coords: Vec<f64> =
                        node.points.iter().map(|&row| dataset.row(row)[cut.direction]).collect();
                    coords.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    coords.dedup();
                    let is_midpoint = coords
                        .windows(2)
                        .any(|w| (0.5 * (w[0] + w[1]) - cut.position).abs() == 0.0);
                    if !is_midpoint {
                        return Err(Error::Assertion(format!(
                            "node {i}: cut position is not a data midpoint"
                        )));
                    }
                    let mut merged = self.nodes[l].points.clone();
                    merged.extend_from_slice(&self.nodes[r].points);
                    merged.sort_unstable();
                    let mut parent = node.points.clone();
                    parent.sort_unstable();
                    if merged != parent {
                        return Err(Error::Assertion(format!(
                            "node {i}: children do not partition the parent's points"
                        )));
                    }
                }
                _ => {
                    return Err(Error::Assertion(format!(
                        "node {i}: cut and children must be both present or both absent"
                    )))
                }
            }
        }
        Ok(())
    }
}
