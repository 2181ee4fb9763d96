use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LabeledData;
use crate::rng::rng_for;

pub(crate) const LEAF: u32 = u32::MAX;
pub(crate) const MAX_SUPPORTED_DEPTH: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Split feature, or `u32::MAX` for a leaf.
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    /// Training class counts reaching this node (kept on internal nodes too,
    /// so a tree can be read at any shallower depth).
    pub counts: Vec<u32>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    pub max_depth: usize,
    pub seed: u64,
}

impl Tree {
    /// Leaf reached by `x`, reading the tree as if trained with `depth`.
    pub fn leaf_at_depth(&self, x: &[f64], depth: usize) -> &TreeNode {
        let mut node = &self.nodes[0];
        let mut d = 0;
        while !node.is_leaf() && d < depth {
            node = if x[node.feature as usize] <= node.threshold {
                &self.nodes[node.left as usize]
            } else {
                &self.nodes[node.right as usize]
            };
            d += 1;
        }
        node
    }

    pub fn leaf(&self, x: &[f64]) -> &TreeNode {
        self.leaf_at_depth(x, usize::MAX)
    }

    /// Nodes visited from the root down to the leaf, one per level.
    pub fn path(&self, x: &[f64]) -> Vec<&TreeNode> {
        let mut out = vec![&self.nodes[0]];
        let mut node = &self.nodes[0];
        while !node.is_leaf() {
            node = if x[node.feature as usize] <= node.threshold {
                &self.nodes[node.left as usize]
            } else {
                &self.nodes[node.right as usize]
            };
            out.push(node);
        }
        out
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        distribution(&self.leaf(x).counts)
    }

    pub fn depth(&self) -> usize {
        fn rec(nodes: &[TreeNode], i: usize) -> usize {
            let n = &nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + rec(nodes, n.left as usize).max(rec(nodes, n.right as usize))
            }
        }
        rec(&self.nodes, 0)
    }

    /// Features used by at least one split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .nodes
            .iter()
            .filter(|n| !n.is_leaf())
            .map(|n| n.feature as usize)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

pub(crate) fn distribution(counts: &[u32]) -> Vec<f64> {
    let total: u32 = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Number of candidate features per split: ceil(sqrt(p)).
pub(crate) fn features_per_split(p: usize) -> usize {
    let mut k = (p as f64).sqrt().ceil() as usize;
    while k * k < p {
        k += 1;
    }
    k.clamp(1, p)
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

struct Builder<'a> {
    data: &'a LabeledData,
    max_depth: usize,
    seed: u64,
    mtry: usize,
    nodes: Vec<TreeNode>,
    scratch: Vec<(f64, u32)>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<u32> {
        let mut c = vec![0u32; self.data.n_classes()];
        for &i in idx {
            c[self.data.labels[i]] += 1;
        }
        c
    }

    /// Best Gini split of `idx` on `feature`, maximising
    /// `sum cL^2 / nL + sum cR^2 / nR` (equivalent to minimising weighted impurity).
    fn best_on_feature(&mut self, idx: &[usize], feature: usize, parent: &[u32]) -> Option<Candidate> {
        let data = self.data;
        self.scratch.clear();
        self.scratch
            .extend(idx.iter().map(|&i| (data.row(i)[feature], data.labels[i] as u32)));
        self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let n = idx.len();
        let mut left = vec![0u64; parent.len()];
        let mut right: Vec<u64> = parent.iter().map(|&c| c as u64).collect();
        let mut sq_left = 0u64;
        let mut sq_right: u64 = right.iter().map(|c| c * c).sum();
        let mut best: Option<Candidate> = None;
        for i in 0..n - 1 {
            let y = self.scratch[i].1 as usize;
            sq_left += 2 * left[y] + 1;
            left[y] += 1;
            sq_right -= 2 * right[y] - 1;
            right[y] -= 1;
            let (v, next) = (self.scratch[i].0, self.scratch[i + 1].0);
            if v == next {
                continue;
            }
            let n_left = (i + 1) as f64;
            let score = sq_left as f64 / n_left + sq_right as f64 / (n as f64 - n_left);
            if best.as_ref().is_none_or(|b| score > b.score) {
                let mid = v + (next - v) / 2.0;
                let threshold = if mid < next { mid } else { v };
                best = Some(Candidate {
                    feature,
                    threshold,
                    score,
                });
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, path_id: u64) -> u32 {
        let counts = self.counts(&idx);
        let id = self.nodes.len() as u32;
        self.nodes.push(TreeNode {
            feature: LEAF,
            threshold: 0.0,
            left: LEAF,
            right: LEAF,
            counts: counts.clone(),
        });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.max_depth || pure || idx.len() < 2 {
            return id;
        }
        let mut features: Vec<usize> = (0..self.data.n_features).collect();
        features.shuffle(&mut rng_for(self.seed, &[path_id]));
        let mut best: Option<Candidate> = None;
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some(c) = self.best_on_feature(&idx, f, &counts) {
                if best.as_ref().is_none_or(|b| c.score > b.score) {
                    best = Some(c);
                }
            }
        }
        let Some(split) = best else {
            return id;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.data.row(i)[split.feature] <= split.threshold);
        let left = self.grow(left_idx, depth + 1, path_id * 2);
        let right = self.grow(right_idx, depth + 1, path_id * 2 + 1);
        let node = &mut self.nodes[id as usize];
        node.feature = split.feature as u32;
        node.threshold = split.threshold;
        node.left = left;
        node.right = right;
        id
    }
}

/// Grow one CART tree (Gini impurity) on the rows listed in `bootstrap`.
///
/// Each split examines `ceil(sqrt(p))` randomly chosen features (more if none
/// of those can split). The random choice at a node depends only on `seed`
/// and the node's position, so a tree grown with a smaller `max_depth` is
/// exactly this tree cut at that depth.
pub fn train_tree(data: &LabeledData, max_depth: usize, seed: u64, bootstrap: &[usize]) -> Tree {
    assert!(!bootstrap.is_empty(), "bootstrap sample must be non-empty");
    let max_depth = max_depth.min(MAX_SUPPORTED_DEPTH);
    let mut builder = Builder {
        data,
        max_depth,
        seed,
        mtry: features_per_split(data.n_features),
        nodes: Vec::new(),
        scratch: Vec::with_capacity(bootstrap.len()),
    };
    builder.grow(bootstrap.to_vec(), 0, 1);
    Tree {
        nodes: builder.nodes,
        max_depth,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(rows: &[(&[f64], usize)], classes: usize) -> LabeledData {
        let p = rows[0].0.len();
        LabeledData::new(
            rows.iter().flat_map(|(x, _)| x.iter().copied()).collect(),
            rows.iter().map(|(_, y)| *y).collect(),
            p,
            (0..classes).map(|c| format!("c{c}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn mtry_for_twenty_is_five() {
        assert_eq!(features_per_split(20), 5);
        assert_eq!(features_per_split(1), 1);
        assert_eq!(features_per_split(16), 4);
    }

    #[test]
    fn separable_single_feature_gives_stump() {
        let d = data(&[(&[-2.0], 0), (&[-1.0], 0), (&[-0.5], 0), (&[0.5], 1), (&[3.0], 1)], 2);
        let all: Vec<usize> = (0..d.len()).collect();
        let t = train_tree(&d, 5, 1, &all);
        assert_eq!(t.depth(), 1);
        assert_eq!(t.nodes[0].threshold, 0.0);
        for i in 0..d.len() {
            assert_eq!(super::super::argmax(&t.predict_proba(d.row(i))), d.labels[i]);
        }
    }

    #[test]
    fn identical_rows_give_majority_leaf() {
        let d = data(&[(&[1.0, 2.0], 0), (&[1.0, 2.0], 1), (&[1.0, 2.0], 1)], 2);
        let t = train_tree(&d, 5, 0, &[0, 1, 2]);
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict_proba(&[1.0, 2.0]), vec![1.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn deterministic_and_truncatable() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let n = 300;
        let features: Vec<f64> = (0..n * 6).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<usize> = (0..n)
            .map(|i| ((features[i * 6] * 3.0) as usize + (features[i * 6 + 1] > 0.5) as usize) % 3)
            .collect();
        let d = LabeledData::new(features, labels, 6, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let boot: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let deep = train_tree(&d, 12, 77, &boot);
        assert_eq!(deep, train_tree(&d, 12, 77, &boot));
        for depth in 0..12 {
            let shallow = train_tree(&d, depth, 77, &boot);
            assert!(shallow.depth() <= depth);
            for i in 0..n {
                let x = d.row(i);
                assert_eq!(shallow.leaf(x).counts, deep.leaf_at_depth(x, depth).counts);
            }
        }
    }
}
