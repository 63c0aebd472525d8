//! Bagged Gini decision trees.
//!
//! Serialized as a checkpoint section (tag `RFST`), little-endian:
//!
//! ```text
//! tree_count u32, dims u32, max_depth u32, features_per_split u32
//! per tree: node_count u32, then nodes in preorder:
//!   0u8, p0 f64, p1 f64                  leaf with class distribution
//!   1u8, feature u32, threshold f64      split; left subtree follows, then right
//! ```

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::check_training_set;
use crate::autodiff::checkpoint::Reader;
use crate::error::{Error, Result};
use crate::seed;

pub const FOREST_TAG: [u8; 4] = *b"RFST";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    /// Candidate features per split; `0` means `floor(sqrt(dims))`.
    pub features_per_split: usize,
    /// Train each tree on a bootstrap resample rather than the full set.
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 50,
            max_depth: 8,
            features_per_split: 0,
            bootstrap: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf([f64; 2]),
    /// `x[feature] <= threshold` goes left (the next node); `right` indexes the right child.
    Split { feature: usize, threshold: f64, right: usize },
}

/// One tree, nodes stored in preorder.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// A single leaf with the given class distribution.
    pub fn leaf(dist: [f64; 2]) -> Self {
        Tree {
            nodes: vec![Node::Leaf(dist)],
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> (usize, usize) {
            match nodes[i] {
                Node::Leaf(_) => (0, i + 1),
                Node::Split { right, .. } => {
                    let (l, _) = walk(nodes, i + 1);
                    let (r, end) = walk(nodes, right);
                    (1 + l.max(r), end)
                }
            }
        }
        walk(&self.nodes, 0).0
    }

    pub fn distribution(&self, x: &[f64]) -> [f64; 2] {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(d) => return d,
                Node::Split {
                    feature,
                    threshold,
                    right,
                } => i = if x[feature] <= threshold { i + 1 } else { right },
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomForest {
    trees: Vec<Tree>,
    dims: usize,
    max_depth: usize,
    features_per_split: usize,
}

fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (counts[0] as f64 / n, counts[1] as f64 / n);
    1.0 - p0 * p0 - p1 * p1
}

fn distribution(counts: [usize; 2]) -> [f64; 2] {
    let n = (counts[0] + counts[1]) as f64;
    [counts[0] as f64 / n, counts[1] as f64 / n]
}

struct Grower<'a, R: Rng> {
    features: &'a [Vec<f64>],
    labels: &'a [usize],
    max_depth: usize,
    per_split: usize,
    rng: R,
    nodes: Vec<Node>,
}

impl<R: Rng> Grower<'_, R> {
    fn counts(&self, idx: &[usize]) -> [usize; 2] {
        let ones = idx.iter().filter(|&&i| self.labels[i] == 1).count();
        [idx.len() - ones, ones]
    }

    /// Lowest weighted Gini split `(feature, threshold)` over the candidates.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64)> {
        let dims = self.features[0].len();
        let candidates = sample(&mut self.rng, dims, self.per_split.min(dims));
        let total = self.counts(idx);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.to_vec();
        for f in candidates.iter() {
            order.sort_by(|&a, &b| self.features[a][f].total_cmp(&self.features[b][f]));
            let mut left = [0usize; 2];
            for k in 0..order.len() - 1 {
                left[self.labels[order[k]]] += 1;
                let (v, next) = (self.features[order[k]][f], self.features[order[k + 1]][f]);
                if v == next {
                    continue;
                }
                let right = [total[0] - left[0], total[1] - left[1]];
                let nl = (k + 1) as f64;
                let score = (nl * gini(left) + (order.len() as f64 - nl) * gini(right)) / order.len() as f64;
                if best.is_none_or(|(s, _, _)| score < s) {
                    best = Some((score, f, v + (next - v) / 2.0));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: &[usize], depth: usize) {
        let counts = self.counts(idx);
        let pure = counts[0] == 0 || counts[1] == 0;
        if depth >= self.max_depth || pure || idx.len() < 2 {
            self.nodes.push(Node::Leaf(distribution(counts)));
            return;
        }
        let Some((feature, threshold)) = self.best_split(idx) else {
            self.nodes.push(Node::Leaf(distribution(counts)));
            return;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.features[i][feature] <= threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Split {
            feature,
            threshold,
            right: 0,
        });
        self.grow(&left, depth + 1);
        let right_at = self.nodes.len();
        if let Node::Split { right, .. } = &mut self.nodes[at] {
            *right = right_at;
        }
        self.grow(&right, depth + 1);
    }
}

/// Trains `cfg.trees` trees, each on its own seeded bootstrap sample.
pub fn rf_train(features: &[Vec<f64>], labels: &[usize], cfg: &ForestConfig, seed: u64) -> Result<RandomForest> {
    let dims = check_training_set(features, labels)?;
    if features.len() < 2 {
        return Err(Error::arg("random forest needs at least two samples"));
    }
    if cfg.trees == 0 {
        return Err(Error::Config("random forest needs at least one tree".into()));
    }
    let per_split = match cfg.features_per_split {
        0 => ((dims as f64).sqrt().floor() as usize).max(1),
        k => k.min(dims),
    };
    let n = features.len();
    let trees = (0..cfg.trees)
        .map(|t| {
            let mut rng = seed::rng(seed, t as u64);
            let boot: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut g = Grower {
                features,
                labels,
                max_depth: cfg.max_depth,
                per_split,
                rng,
                nodes: Vec::new(),
            };
            g.grow(&boot, 0);
            Tree { nodes: g.nodes }
        })
        .collect();
    Ok(RandomForest {
        trees,
        dims,
        max_depth: cfg.max_depth,
        features_per_split: per_split,
    })
}

/// Mean of the per-tree leaf distributions.
pub fn rf_score(model: &RandomForest, x: &[f64]) -> Result<[f64; 2]> {
    model.score(x)
}

impl RandomForest {
    /// Forest over prebuilt trees, for inspection and tests.
    pub fn from_trees(trees: Vec<Tree>, dims: usize) -> Self {
        RandomForest {
            trees,
            dims,
            max_depth: 0,
            features_per_split: 0,
        }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn score(&self, x: &[f64]) -> Result<[f64; 2]> {
        if self.trees.is_empty() {
            return Err(Error::Untrained("random forest"));
        }
        if x.len() != self.dims {
            return Err(Error::shape(format!("forest over {} features given {}", self.dims, x.len())));
        }
        let mut acc = [0.0; 2];
        for t in &self.trees {
            let d = t.distribution(x);
            acc[0] += d[0];
            acc[1] += d[1];
        }
        let n = self.trees.len() as f64;
        Ok([acc[0] / n, acc[1] / n])
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let s = self.score(x)?;
        Ok(usize::from(s[1] > s[0]))
    }

    pub fn to_section(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend((self.trees.len() as u32).to_le_bytes());
        out.extend((self.dims as u32).to_le_bytes());
        out.extend((self.max_depth as u32).to_le_bytes());
        out.extend((self.features_per_split as u32).to_le_bytes());
        for t in &self.trees {
            out.extend((t.nodes.len() as u32).to_le_bytes());
            for n in &t.nodes {
                match n {
                    Node::Leaf(d) => {
                        out.push(0);
                        out.extend(d[0].to_le_bytes());
                        out.extend(d[1].to_le_bytes());
                    }
                    Node::Split { feature, threshold, .. } => {
                        out.push(1);
                        out.extend((*feature as u32).to_le_bytes());
                        out.extend(threshold.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_section(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let count = r.u32()? as usize;
        let dims = r.u32()? as usize;
        let max_depth = r.u32()? as usize;
        let features_per_split = r.u32()? as usize;
        let mut trees = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(len.min(1 << 20));
            read_subtree(&mut r, &mut nodes, dims, 0)?;
            if nodes.len() != len {
                return Err(Error::Format(format!("tree declares {len} nodes, holds {}", nodes.len())));
            }
            trees.push(Tree { nodes });
        }
        if !r.done() {
            return Err(Error::Format("trailing bytes after forest".into()));
        }
        Ok(RandomForest {
            trees,
            dims,
            max_depth,
            features_per_split,
        })
    }
}

const MAX_STORED_DEPTH: usize = 512;

fn read_subtree(r: &mut Reader, nodes: &mut Vec<Node>, dims: usize, depth: usize) -> Result<()> {
    if depth > MAX_STORED_DEPTH {
        return Err(Error::Format("tree nesting too deep".into()));
    }
    match r.u8()? {
        0 => nodes.push(Node::Leaf([r.f64()?, r.f64()?])),
        1 => {
            let feature = r.u32()? as usize;
            if feature >= dims {
                return Err(Error::Format(format!("split on feature {feature} of {dims}")));
            }
            let at = nodes.len();
            nodes.push(Node::Split {
                feature,
                threshold: r.f64()?,
                right: 0,
            });
            read_subtree(r, nodes, dims, depth + 1)?;
            let right_at = nodes.len();
            if let Node::Split { right, .. } = &mut nodes[at] {
                *right = right_at;
            }
            read_subtree(r, nodes, dims, depth + 1)?;
        }
        tag => return Err(Error::Format(format!("unknown tree node tag {tag}"))),
    }
    Ok(())
}
