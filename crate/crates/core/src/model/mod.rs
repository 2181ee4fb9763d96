//! Random forest speaker classifier built from CART trees.

mod eval;
mod forest;
mod grid;
mod tree;

pub use eval::{evaluate, ClassMetrics, EvalReport};
pub use forest::{train_forest, Forest, FOREST_FORMAT, FOREST_VERSION};
pub use grid::{grid_search, tune_and_fit, Grid, GridCell, GridOutcome};
pub use tree::{train_tree, Tree, TreeNode};

use crate::dataset::FeatureTable;
use crate::error::{Error, Result};

/// Dense numeric view of a feature table with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub n_features: usize,
    pub classes: Vec<String>,
}

impl LabeledData {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, n_features: usize, classes: Vec<String>) -> Result<Self> {
        if n_features == 0 || features.len() != labels.len() * n_features {
            return Err(Error::Config(format!(
                "{} values do not form {} rows of {n_features} features",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
            return Err(Error::Config(format!("label {bad} out of range")));
        }
        if let Some(index) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput {
                index,
                reason: "non-finite feature".into(),
            });
        }
        Ok(Self {
            features,
            labels,
            n_features,
            classes,
        })
    }

    /// Map table labels onto `classes` (which must contain all of them).
    pub fn from_table(table: &FeatureTable, classes: &[String]) -> Result<Self> {
        let n_features = table.rows.first().map_or(crate::dataset::FEATURE_COUNT, |r| r.features.len());
        let mut features = Vec::with_capacity(table.len() * n_features);
        let mut labels = Vec::with_capacity(table.len());
        for row in &table.rows {
            let label = classes
                .iter()
                .position(|c| *c == row.label)
                .ok_or_else(|| Error::Config(format!("unknown class `{}`", row.label)))?;
            features.extend_from_slice(&row.features);
            labels.push(label);
        }
        Self::new(features, labels, n_features, classes.to_vec())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn concat(&self, other: &LabeledData) -> Result<LabeledData> {
        if self.n_features != other.n_features || self.classes != other.classes {
            return Err(Error::Config("cannot concatenate incompatible data sets".into()));
        }
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        LabeledData::new(features, labels, self.n_features, self.classes.clone())
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
