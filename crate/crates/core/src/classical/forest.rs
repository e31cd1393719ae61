//! Bagged CART regression trees.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ClassicalError;
use crate::checkpoint::NamedTensors;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestOptions {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Draw each tree's training set with replacement.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestOptions {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_leaf: 5,
            bootstrap: true,
            seed: 0,
        }
    }
}

/// Flat node. Leaves have `feature == None` and use `value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub seed: u64,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut n = &self.nodes[0];
        while let Some(f) = n.feature {
            n = &self.nodes[if x[f] <= n.threshold { n.left } else { n.right }];
        }
        n.value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub dims: usize,
    /// Features tried per split.
    pub max_features: usize,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    min_leaf: usize,
    max_depth: Option<usize>,
    max_features: usize,
    nodes: Vec<Node>,
}

fn mean(y: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}

impl Builder<'_> {
    /// Best split on feature `f`: (sse, threshold).
    fn best_split(&self, idx: &mut [usize], f: usize) -> Option<(f64, f64)> {
        idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let (mut sum_l, mut sq_l) = (0.0, 0.0);
        let mut best: Option<(f64, f64)> = None;
        for k in 0..n - 1 {
            let yi = self.y[idx[k]];
            sum_l += yi;
            sq_l += yi * yi;
            let nl = k + 1;
            let (a, b) = (self.x[idx[k]][f], self.x[idx[k + 1]][f]);
            if nl < self.min_leaf || n - nl < self.min_leaf || a == b {
                continue;
            }
            let nr = (n - nl) as f64;
            let sum_r = total - sum_l;
            let sse = (sq_l - sum_l * sum_l / nl as f64) + ((total_sq - sq_l) - sum_r * sum_r / nr);
            if best.is_none_or(|(s, _)| sse < s) {
                // Midpoint, but never equal to the upper value.
                let mid = a + 0.5 * (b - a);
                best = Some((sse, if mid < b { mid } else { a }));
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        let value = mean(self.y, idx);
        self.nodes.push(Node {
            feature: None,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        });
        let pure = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        if pure || idx.len() < 2 * self.min_leaf || self.max_depth.is_some_and(|d| depth >= d) {
            return id;
        }
        let parent_sse: f64 = idx.iter().map(|&i| (self.y[i] - value).powi(2)).sum();
        let mut features: Vec<usize> = (0..self.x[0].len()).collect();
        features.shuffle(rng);
        let mut best: Option<(f64, usize, f64)> = None;
        for (tried, &f) in features.iter().enumerate() {
            // Past the sampled subset, only continue while nothing splits.
            if tried >= self.max_features && best.is_some() {
                break;
            }
            if let Some((sse, thr)) = self.best_split(idx, f) {
                if best.is_none_or(|(s, _, _)| sse < s) {
                    best = Some((sse, f, thr));
                }
            }
        }
        let Some((sse, f, thr)) = best else { return id };
        if sse >= parent_sse {
            return id;
        }
        idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
        let cut = idx.partition_point(|&i| self.x[i][f] <= thr);
        let (l, r) = idx.split_at_mut(cut);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node {
            feature: Some(f),
            threshold: thr,
            left,
            right,
            value,
        };
        id
    }
}

/// Each tree sees a bootstrap sample (when enabled) and tries
/// `ceil(sqrt(d))` random features per split, falling through to the
/// remaining features only if none of those admits a split.
pub fn forest_fit(x: &[Vec<f64>], y: &[f64], opts: &ForestOptions) -> Result<ForestModel, ClassicalError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(ClassicalError::InvalidData(format!("{} inputs for {} targets", x.len(), y.len())));
    }
    let dims = x[0].len();
    if x.iter().any(|r| r.len() != dims) || x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(ClassicalError::InvalidData("inputs must be finite with equal dimension".into()));
    }
    if opts.n_trees == 0 || opts.min_leaf == 0 {
        return Err(ClassicalError::InvalidData("n_trees and min_leaf must be positive".into()));
    }
    let max_features = ((dims as f64).sqrt().ceil() as usize).max(1);
    let mut master = ChaCha8Rng::seed_from_u64(opts.seed);
    let trees = (0..opts.n_trees)
        .map(|_| {
            let seed: u64 = master.gen();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = if opts.bootstrap {
                (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect()
            } else {
                (0..x.len()).collect()
            };
            let mut b = Builder {
                x,
                y,
                min_leaf: opts.min_leaf,
                max_depth: opts.max_depth,
                max_features,
                nodes: Vec::new(),
            };
            if dims > 0 {
                b.grow(&mut idx, 0, &mut rng);
            } else {
                b.nodes.push(Node {
                    feature: None,
                    threshold: 0.0,
                    left: 0,
                    right: 0,
                    value: mean(y, &idx),
                });
            }
            Tree { nodes: b.nodes, seed }
        })
        .collect();
    Ok(ForestModel {
        trees,
        dims,
        max_features,
    })
}

impl ForestModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64, ClassicalError> {
        if x.len() != self.dims {
            return Err(ClassicalError::DimensionMismatch {
                expected: self.dims,
                got: x.len(),
            });
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }

    /// One `[nodes, 5]` table per tree: feature (-1 for leaves), threshold,
    /// left, right, value.
    pub fn to_named_tensors(&self, prefix: &str, out: &mut NamedTensors) {
        out.push(
            format!("{prefix}.meta"),
            Tensor::from_vec(vec![self.trees.len() as f64, self.dims as f64, self.max_features as f64]),
        );
        for (i, t) in self.trees.iter().enumerate() {
            let data = t
                .nodes
                .iter()
                .flat_map(|n| [n.feature.map_or(-1.0, |f| f as f64), n.threshold, n.left as f64, n.right as f64, n.value])
                .collect();
            out.push(format!("{prefix}.tree{i}"), Tensor::new(vec![t.nodes.len(), 5], data).expect("5 columns"));
            out.push(
                format!("{prefix}.tree{i}.seed"),
                Tensor::from_vec(vec![(t.seed >> 32) as f64, (t.seed & 0xffff_ffff) as f64]),
            );
        }
    }

    pub fn from_named_tensors(prefix: &str, t: &NamedTensors) -> Result<Self, ClassicalError> {
        let get = |name: String| t.get(&name);
        let meta = get(format!("{prefix}.meta"))?.data().to_vec();
        if meta.len() != 3 {
            return Err(ClassicalError::Format(format!("{prefix}.meta has {} values", meta.len())));
        }
        let (n_trees, dims, max_features) = (meta[0] as usize, meta[1] as usize, meta[2] as usize);
        let mut trees = Vec::with_capacity(n_trees);
        for i in 0..n_trees {
            let table = get(format!("{prefix}.tree{i}"))?;
            let seed = match get(format!("{prefix}.tree{i}.seed"))?.data() {
                [hi, lo] => ((*hi as u64) << 32) | *lo as u64,
                _ => return Err(ClassicalError::Format(format!("{prefix}.tree{i}.seed needs 2 values"))),
            };
            let rows = table.data().chunks(5);
            let n_nodes = table.len() / 5;
            let mut nodes = Vec::with_capacity(n_nodes);
            for (id, r) in rows.enumerate() {
                let node = Node {
                    feature: (r[0] >= 0.0).then_some(r[0] as usize),
                    threshold: r[1],
                    left: r[2] as usize,
                    right: r[3] as usize,
                    value: r[4],
                };
                // Children always follow their parent, which also rules out cycles.
                let bad_child = |c: usize| c <= id || c >= n_nodes;
                if node.feature.is_some_and(|f| f >= dims || bad_child(node.left) || bad_child(node.right)) {
                    return Err(ClassicalError::Format(format!("{prefix}.tree{i}: node points outside the table")));
                }
                nodes.push(node);
            }
            if nodes.is_empty() {
                return Err(ClassicalError::Format(format!("{prefix}.tree{i} is empty")));
            }
            trees.push(Tree { nodes, seed });
        }
        if trees.is_empty() {
            return Err(ClassicalError::Format(format!("{prefix} has no trees")));
        }
        Ok(Self {
            trees,
            dims,
            max_features,
        })
    }
}
