use rand::seq::index::sample;
use rand::Rng as _;

use crate::{Error, Result, Rng};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn harmonic(i: usize) -> f64 {
    if i <= 64 {
        (1..=i).map(|k| 1.0 / k as f64).sum()
    } else {
        (i as f64).ln() + EULER_GAMMA
    }
}

/// Average unsuccessful-search path length in a binary search tree of `n` nodes.
///
/// Harmonic numbers are summed exactly up to 64 terms and approximated by
/// `ln(i) + gamma` above, so `c(2) = 1` holds exactly.
pub fn c_factor(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let m = (n - 1) as f64;
    2.0 * harmonic(n - 1) - 2.0 * m / n as f64
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf { size: usize },
    Split { feature: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsoForest {
    trees: Vec<Node>,
    pub subsample_size: usize,
    pub height_limit: usize,
}

fn build(rows: &[&[f64]], depth: usize, limit: usize, rng: &mut Rng) -> Node {
    if depth >= limit || rows.len() <= 1 {
        return Node::Leaf { size: rows.len() };
    }
    let d = rows[0].len();
    let spans: Vec<(usize, f64, f64)> = (0..d)
        .filter_map(|f| {
            let lo = rows.iter().map(|r| r[f]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[f]).fold(f64::NEG_INFINITY, f64::max);
            (hi > lo).then_some((f, lo, hi))
        })
        .collect();
    if spans.is_empty() {
        return Node::Leaf { size: rows.len() };
    }
    let (feature, lo, hi) = spans[rng.random_range(0..spans.len())];
    let value = rng.random_range(lo..hi);
    let (left, right): (Vec<&[f64]>, Vec<&[f64]>) = rows.iter().partition(|r| r[feature] < value);
    Node::Split {
        feature,
        value,
        left: Box::new(build(&left, depth + 1, limit, rng)),
        right: Box::new(build(&right, depth + 1, limit, rng)),
    }
}

fn path_length(node: &Node, x: &[f64], depth: usize) -> f64 {
    match node {
        Node::Leaf { size } => depth as f64 + c_factor(*size),
        Node::Split { feature, value, left, right } => {
            let next = if x[*feature] < *value { left } else { right };
            path_length(next, x, depth + 1)
        }
    }
}

/// Fits `n_trees` isolation trees on subsamples of `x`; `subsample` is clamped to `x.len()`.
pub fn iforest_fit(x: &[Vec<f64>], n_trees: usize, subsample: usize, rng: &mut Rng) -> Result<IsoForest> {
    if x.len() < 2 {
        return Err(Error::InvalidArgument("isolation forest needs at least two samples".into()));
    }
    if n_trees == 0 {
        return Err(Error::InvalidArgument("isolation forest needs at least one tree".into()));
    }
    let psi = subsample.clamp(2, x.len());
    let limit = (psi as f64).log2().ceil() as usize;
    let trees = (0..n_trees)
        .map(|_| {
            let idx = sample(rng, x.len(), psi);
            let rows: Vec<&[f64]> = idx.iter().map(|i| x[i].as_slice()).collect();
            build(&rows, 0, limit, rng)
        })
        .collect();
    Ok(IsoForest { trees, subsample_size: psi, height_limit: limit })
}

impl IsoForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| path_length(t, x, 0)).sum::<f64>() / self.trees.len() as f64
    }
}

/// `2^(-E[h(x)] / c(psi))`, in (0, 1]; close to 1 for anomalies.
pub fn iforest_score(forest: &IsoForest, x: &[f64]) -> f64 {
    2f64.powf(-forest.mean_path_length(x) / c_factor(forest.subsample_size))
}
