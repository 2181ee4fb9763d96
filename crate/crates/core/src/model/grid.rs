use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forest::{train_forest, Forest};
use super::{argmax, LabeledData};
use crate::error::{Error, Result};

/// Hyperparameter ranges for the forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            n_estimators: (5..=50).step_by(5).collect(),
            max_depth: (5..=15).collect(),
        }
    }
}

impl Grid {
    pub fn single(n_estimators: usize, max_depth: usize) -> Self {
        Self {
            n_estimators: vec![n_estimators],
            max_depth: vec![max_depth],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_estimators.is_empty() || self.max_depth.is_empty() {
            return Err(Error::Config("hyperparameter grid must be non-empty".into()));
        }
        if self.n_estimators.contains(&0) {
            return Err(Error::Config("n_estimators values must be positive".into()));
        }
        if self.max_depth.iter().any(|&d| d > super::tree::MAX_SUPPORTED_DEPTH) {
            return Err(Error::Config(format!(
                "max_depth values must not exceed {}",
                super::tree::MAX_SUPPORTED_DEPTH
            )));
        }
        Ok(())
    }

    fn sorted(values: &[usize]) -> Vec<usize> {
        let mut v = values.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn cell_count(&self) -> usize {
        Self::sorted(&self.n_estimators).len() * Self::sorted(&self.max_depth).len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub val_accuracy: f64,
    /// Every evaluated cell, ordered by (n_estimators, max_depth).
    pub cells: Vec<GridCell>,
}

/// Score every grid cell by validation accuracy and return the best one.
/// Ties go to fewer estimators, then to the shallower depth.
///
/// A forest with `n` trees of depth `d` is the first `n` trees of the largest
/// forest read at depth `d` (trees and node decisions are seeded by position),
/// so one forest of the largest size is trained and every cell is scored from it.
pub fn grid_search(train: &LabeledData, val: &LabeledData, grid: &Grid, seed: u64) -> Result<GridOutcome> {
    grid.validate()?;
    if val.is_empty() {
        return Err(Error::InsufficientData {
            group: "validation".into(),
            reason: "empty table".into(),
        });
    }
    let ns = Grid::sorted(&grid.n_estimators);
    let ds = Grid::sorted(&grid.max_depth);
    let full = train_forest(train, *ns.last().unwrap(), *ds.last().unwrap(), seed)?;
    let correct = score_cells(&full, val, &ns, &ds)?;
    let mut cells = Vec::with_capacity(ns.len() * ds.len());
    for (i, &n) in ns.iter().enumerate() {
        for (j, &d) in ds.iter().enumerate() {
            cells.push(GridCell {
                n_estimators: n,
                max_depth: d,
                val_accuracy: correct[i * ds.len() + j] as f64 / val.len() as f64,
            });
        }
    }
    let mut best = &cells[0];
    for cell in &cells {
        if cell.val_accuracy > best.val_accuracy {
            best = cell;
        }
    }
    Ok(GridOutcome {
        n_estimators: best.n_estimators,
        max_depth: best.max_depth,
        val_accuracy: best.val_accuracy,
        cells: cells.clone(),
    })
}

/// Correct-prediction counts per (n, d) cell, row-major over `ns` x `ds`.
fn score_cells(full: &Forest, val: &LabeledData, ns: &[usize], ds: &[usize]) -> Result<Vec<usize>> {
    let k = full.n_classes;
    let cells = ns.len() * ds.len();
    let per_row = |i: usize| -> Result<Vec<usize>> {
        let x = val.row(i);
        full.predict_proba(x)?;
        let mut acc = vec![0.0; ds.len() * k];
        let mut hits = vec![0usize; cells];
        let mut next_n = 0;
        let mut probs = vec![0.0; k];
        for (t, tree) in full.trees.iter().enumerate() {
            for (j, &d) in ds.iter().enumerate() {
                let p = super::forest::tree_proba_at_depth(tree, x, d);
                for (a, v) in acc[j * k..(j + 1) * k].iter_mut().zip(p) {
                    *a += v;
                }
            }
            if next_n < ns.len() && ns[next_n] == t + 1 {
                let n = (t + 1) as f64;
                for j in 0..ds.len() {
                    for (p, a) in probs.iter_mut().zip(&acc[j * k..(j + 1) * k]) {
                        *p = a / n;
                    }
                    if argmax(&probs) == val.labels[i] {
                        hits[next_n * ds.len() + j] += 1;
                    }
                }
                next_n += 1;
            }
        }
        Ok(hits)
    };
    let rows: Vec<Vec<usize>> = (0..val.len()).into_par_iter().map(per_row).collect::<Result<_>>()?;
    let mut total = vec![0usize; cells];
    for r in rows {
        for (t, h) in total.iter_mut().zip(r) {
            *t += h;
        }
    }
    Ok(total)
}

/// Grid search, then retrain the winning cell on train + validation.
pub fn tune_and_fit(train: &LabeledData, val: &LabeledData, grid: &Grid, seed: u64) -> Result<(GridOutcome, Forest)> {
    let outcome = grid_search(train, val, grid, seed)?;
    let dev = train.concat(val)?;
    let forest = train_forest(&dev, outcome.n_estimators, outcome.max_depth, seed)?;
    Ok((outcome, forest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;

    fn noisy(n: usize, seed: u64) -> LabeledData {
        let mut rng = rng_for(seed, &[]);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 4;
            for f in 0..6 {
                let centre = if f < 3 { (c * (f + 1)) as f64 } else { 0.0 };
                features.push(centre + rng.gen_range(-2.5..2.5));
            }
            labels.push(c);
        }
        LabeledData::new(features, labels, 6, (0..4).map(|c| format!("s{c}")).collect()).unwrap()
    }

    #[test]
    fn default_grid_has_110_cells() {
        let g = Grid::default();
        assert_eq!(g.n_estimators, vec![5, 10, 15, 20, 25, 30, 35, 40, 45, 50]);
        assert_eq!(g.max_depth, (5..=15).collect::<Vec<_>>());
        assert_eq!(g.cell_count(), 110);
    }

    #[test]
    fn shared_forest_scores_equal_independent_training() {
        let train = noisy(160, 1);
        let val = noisy(80, 2);
        let grid = Grid {
            n_estimators: vec![1, 3, 4, 7],
            max_depth: vec![1, 2, 4, 9],
        };
        let out = grid_search(&train, &val, &grid, 17).unwrap();
        assert_eq!(out.cells.len(), 16);
        for cell in &out.cells {
            let f = train_forest(&train, cell.n_estimators, cell.max_depth, 17).unwrap();
            assert_eq!(f.accuracy(&val).unwrap(), cell.val_accuracy, "{cell:?}");
        }
        let best = out.cells.iter().map(|c| c.val_accuracy).fold(0.0, f64::max);
        assert_eq!(out.val_accuracy, best);
    }

    #[test]
    fn single_cell_grid_returns_that_cell() {
        let out = grid_search(&noisy(40, 3), &noisy(20, 4), &Grid::single(3, 2), 0).unwrap();
        assert_eq!((out.n_estimators, out.max_depth), (3, 2));
    }

    #[test]
    fn ties_prefer_fewer_estimators_then_shallower() {
        // Perfectly separable: every cell scores 1.0.
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            features.push(if i % 2 == 0 { -1.0 - i as f64 } else { 1.0 + i as f64 });
            labels.push(i % 2);
        }
        let d = LabeledData::new(features, labels, 1, vec!["a".into(), "b".into()]).unwrap();
        let grid = Grid {
            n_estimators: vec![10, 5],
            max_depth: vec![7, 5],
        };
        let out = grid_search(&d, &d, &grid, 1).unwrap();
        assert!(out.cells.iter().all(|c| c.val_accuracy == 1.0));
        assert_eq!((out.n_estimators, out.max_depth), (5, 5));
    }

    #[test]
    fn empty_grid_is_rejected() {
        let g = Grid {
            n_estimators: vec![],
            max_depth: vec![5],
        };
        assert!(grid_search(&noisy(10, 1), &noisy(10, 2), &g, 0).is_err());
    }

    #[test]
    fn tune_and_fit_retrains_on_development_set() {
        let (train, val) = (noisy(60, 5), noisy(30, 6));
        let (out, forest) = tune_and_fit(&train, &val, &Grid::single(4, 3), 2).unwrap();
        assert_eq!(forest, train_forest(&train.concat(&val).unwrap(), 4, 3, 2).unwrap());
        assert_eq!(forest.n_estimators, out.n_estimators);
    }
}
