use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{distribution, train_tree, Tree};
use super::{argmax, LabeledData};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for};

pub const FOREST_FORMAT: &str = "vowelgraph-forest";
pub const FOREST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format: String,
    pub version: u32,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub n_classes: usize,
    pub feature_count: usize,
    pub seed: u64,
    pub classes: Vec<String>,
    pub trees: Vec<Tree>,
}

/// Bootstrap indices for tree `index` (with replacement, size n).
pub(crate) fn bootstrap(seed: u64, index: usize, n: usize) -> Vec<usize> {
    let mut rng = rng_for(seed, &[index as u64, 0]);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

pub(crate) fn tree_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[index as u64, 1])
}

/// Train a random forest. Tree `t` depends only on (`seed`, `t`), so the first
/// `m` trees of a larger forest equal an `m`-tree forest with the same seed.
pub fn train_forest(data: &LabeledData, n_estimators: usize, max_depth: usize, seed: u64) -> Result<Forest> {
    if data.is_empty() {
        return Err(Error::InsufficientData {
            group: "training".into(),
            reason: "empty table".into(),
        });
    }
    if n_estimators == 0 {
        return Err(Error::Config("n_estimators must be at least 1".into()));
    }
    let mut seen = vec![false; data.n_classes()];
    for &l in &data.labels {
        seen[l] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::DegenerateLabels("training labels cover fewer than 2 classes".into()));
    }
    let trees: Vec<Tree> = (0..n_estimators)
        .into_par_iter()
        .map(|t| train_tree(data, max_depth, tree_seed(seed, t), &bootstrap(seed, t, data.len())))
        .collect();
    Ok(Forest {
        format: FOREST_FORMAT.into(),
        version: FOREST_VERSION,
        n_estimators,
        max_depth,
        n_classes: data.n_classes(),
        feature_count: data.n_features,
        seed,
        classes: data.classes.clone(),
        trees,
    })
}

impl Forest {
    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_count {
            return Err(Error::InvalidInput {
                index: x.len(),
                reason: format!("expected {} features", self.feature_count),
            });
        }
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput {
                index,
                reason: "non-finite feature".into(),
            });
        }
        Ok(())
    }

    /// Soft-vote class probabilities without input validation.
    pub(crate) fn proba_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes];
        for tree in &self.trees {
            let counts = &tree.leaf(x).counts;
            let total: u32 = counts.iter().sum();
            for (a, &c) in acc.iter_mut().zip(counts) {
                *a += c as f64 / total as f64;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self.proba_unchecked(x))
    }

    /// Predicted class (lowest id on ties) and class probabilities.
    pub fn predict(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        let p = self.predict_proba(x)?;
        Ok((argmax(&p), p))
    }

    pub fn predict_all(&self, data: &LabeledData) -> Result<Vec<usize>> {
        (0..data.len()).map(|i| self.predict(data.row(i)).map(|r| r.0)).collect()
    }

    pub fn accuracy(&self, data: &LabeledData) -> Result<f64> {
        let pred = self.predict_all(data)?;
        let correct = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
        Ok(correct as f64 / data.len().max(1) as f64)
    }

    /// Sorted features used by any split in any tree.
    pub fn used_features(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.trees.iter().flat_map(|t| t.used_features()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let forest: Forest = serde_json::from_str(text)?;
        if forest.format != FOREST_FORMAT || forest.version != FOREST_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format {} v{}",
                forest.format, forest.version
            )));
        }
        if forest.trees.len() != forest.n_estimators {
            return Err(Error::Format("tree count does not match n_estimators".into()));
        }
        Ok(forest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io_util::write_text(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Leaf distribution used by the grid search when reading a tree at `depth`.
pub(crate) fn tree_proba_at_depth(tree: &Tree, x: &[f64], depth: usize) -> Vec<f64> {
    distribution(&tree.leaf_at_depth(x, depth).counts)
}
