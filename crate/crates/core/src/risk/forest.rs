//! Isolation forest over the rows of a weighted matrix.

use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::tfidf::Matrix;

pub const EULER_GAMMA: f64 = 0.577_215_664_9;

/// Average path length of an unsuccessful binary-search-tree lookup among
/// `n` points: `2 H(n-1) - 2 (n-1)/n` with `H(x) = ln x + gamma`.
/// `c(0) = c(1) = 0`.
pub fn c_factor(n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let n = n as f64;
    2.0 * (libm::log(n - 1.0) + EULER_GAMMA) - 2.0 * (n - 1.0) / n
}

/// `2^(-mean_path / c(n))`.
pub fn score_from_mean_path(mean_path: f64, n: usize) -> f64 {
    libm::exp2(-mean_path / c_factor(n))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForestError {
    #[error("an isolation forest needs at least 2 rows, got {0}")]
    DegenerateInput(usize),
    #[error("tree_count must be at least 1")]
    NoTrees,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum TreeNode {
    Split {
        feature: u32,
        value: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        size: u32,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsolationTree {
    nodes: Vec<TreeNode>,
}

impl IsolationTree {
    fn build(data: &Matrix, rows: &mut [usize], height_limit: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut t = IsolationTree { nodes: Vec::new() };
        t.grow(data, rows, 0, height_limit, rng);
        t
    }

    fn grow(
        &mut self,
        data: &Matrix,
        rows: &mut [usize],
        depth: usize,
        height_limit: usize,
        rng: &mut ChaCha8Rng,
    ) -> u32 {
        let id = self.nodes.len() as u32;
        let leaf = TreeNode::Leaf {
            size: rows.len() as u32,
        };
        if depth >= height_limit || rows.len() <= 1 {
            self.nodes.push(leaf);
            return id;
        }
        let Some((feature, lo, hi)) = pick_feature(data, rows, rng) else {
            // every column is constant over this partition
            self.nodes.push(leaf);
            return id;
        };
        let value = rng.gen_range(lo..hi);
        // lo <= value < hi keeps both sides non-empty
        let mut split = 0;
        for i in 0..rows.len() {
            if data.get(rows[i], feature) <= value {
                rows.swap(i, split);
                split += 1;
            }
        }
        self.nodes.push(leaf); // placeholder, patched below
        let (l, r) = rows.split_at_mut(split);
        let left = self.grow(data, l, depth + 1, height_limit, rng);
        let right = self.grow(data, r, depth + 1, height_limit, rng);
        self.nodes[id as usize] = TreeNode::Split {
            feature: feature as u32,
            value,
            left,
            right,
        };
        id
    }

    /// Edges from the root to the row's leaf plus `c(leaf size)`.
    pub fn path_length(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        let mut depth = 0usize;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { size } => return depth as f64 + c_factor(size as usize),
                TreeNode::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    at = if row[feature as usize] <= value {
                        left as usize
                    } else {
                        right as usize
                    };
                    depth += 1;
                }
            }
        }
    }

    /// Longest root-to-leaf edge count.
    pub fn height(&self) -> usize {
        fn h(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + h(nodes, left as usize).max(h(nodes, right as usize))
                }
            }
        }
        h(&self.nodes, 0)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

/// Uniformly random column among those that vary over `rows`, with its
/// min and max. Rejection-samples first and falls back to a full scan so a
/// mostly-constant matrix still gets an exact uniform choice.
fn pick_feature(data: &Matrix, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64, f64)> {
    let range = |j: usize| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &r in rows {
            let v = data.get(r, j);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo < hi).then_some((j, lo, hi))
    };
    let k = data.cols();
    if k == 0 {
        return None;
    }
    for _ in 0..32 {
        if let Some(hit) = range(rng.gen_range(0..k)) {
            return Some(hit);
        }
    }
    let varying: Vec<usize> = (0..k).filter(|&j| range(j).is_some()).collect();
    if varying.is_empty() {
        return None;
    }
    range(varying[rng.gen_range(0..varying.len())])
}

/// Seed of tree `t`; each tree is independent of the others, so trees can
/// be built in any order.
pub fn tree_seed(master: u64, t: usize) -> u64 {
    crate::seed::derive(master, &[t as u64])
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsolationForest {
    trees: Vec<IsolationTree>,
    subsample_size: usize,
    tree_count: usize,
    seed: u64,
    height_limit: usize,
}

impl IsolationForest {
    /// Each tree sees `min(subsample_size, rows)` rows drawn without
    /// replacement and is cut off at `ceil(log2(subsample))`.
    pub fn fit(
        data: &Matrix,
        tree_count: usize,
        subsample_size: usize,
        seed: u64,
    ) -> Result<Self, ForestError> {
        let num = data.rows();
        if num < 2 {
            return Err(ForestError::DegenerateInput(num));
        }
        if tree_count == 0 {
            return Err(ForestError::NoTrees);
        }
        let psi = subsample_size.clamp(2, num);
        let height_limit = ceil_log2(psi);
        let trees = (0..tree_count)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(seed, t));
                let mut rows = index::sample(&mut rng, num, psi).into_vec();
                IsolationTree::build(data, &mut rows, height_limit, &mut rng)
            })
            .collect();
        Ok(Self {
            trees,
            subsample_size: psi,
            tree_count,
            seed,
            height_limit,
        })
    }

    pub fn trees(&self) -> &[IsolationTree] {
        &self.trees
    }

    pub fn subsample_size(&self) -> usize {
        self.subsample_size
    }

    pub fn tree_count(&self) -> usize {
        self.tree_count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn height_limit(&self) -> usize {
        self.height_limit
    }

    /// `E(h(x))` over all trees.
    pub fn mean_path_length(&self, row: &[f64]) -> f64 {
        let total: f64 = self.trees.iter().map(|t| t.path_length(row)).sum();
        total / self.trees.len() as f64
    }

    /// Anomaly score normalized by `c(n)` for an explicit sample size.
    pub fn anomaly_score_with(&self, row: &[f64], n: usize) -> f64 {
        score_from_mean_path(self.mean_path_length(row), n)
    }

    /// Anomaly score normalized by the forest's own subsample size.
    pub fn anomaly_score(&self, row: &[f64]) -> f64 {
        self.anomaly_score_with(row, self.subsample_size)
    }
}

fn ceil_log2(n: usize) -> usize {
    let mut h = 0;
    while (1usize << h) < n {
        h += 1;
    }
    h
}
