//! Interventional Shapley attributions of forest predictions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::Vowel;
use crate::dataset::FEATURE_COUNT;
use crate::error::{Error, Result};
use crate::graph_metrics::MetricVector;
use crate::model::{Forest, LabeledData, Tree};
use crate::registry::Registry;
use crate::rng::rng_for;

pub const EXACT_FEATURE_LIMIT: usize = 12;
pub const DEFAULT_PERMUTATIONS: usize = 256;
pub const DEFAULT_BACKGROUND: usize = 100;

/// Attribution of one row's predicted-class probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyRow {
    pub id: String,
    pub class: usize,
    /// Forest probability of `class` at the explained row.
    pub prediction: f64,
    /// Mean probability of `class` over the background rows.
    pub baseline: f64,
    pub phi: Vec<f64>,
}

impl ShapleyRow {
    /// |baseline + sum(phi) - prediction|
    pub fn local_accuracy_error(&self) -> f64 {
        (self.baseline + self.phi.iter().sum::<f64>() - self.prediction).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<ShapleyRow>,
}

impl ShapleyTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,class,prediction,baseline");
        for name in &self.feature_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{},{}", r.id, r.class, r.prediction, r.baseline);
            for v in &r.phi {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub enum ShapleyMode {
    Exact,
    Sampled { n_perm: usize, seed: u64 },
}

pub trait ShapleyEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn explain(&self, forest: &Forest, x: &[f64], background: &[Vec<f64>], seed: u64) -> Result<ShapleyRow>;
}

/// Exact Shapley values by enumerating every coalition of the features the
/// forest actually splits on.
pub struct ExactShapley;

/// Monte Carlo estimate over random feature orderings.
pub struct SampledShapley {
    pub n_perm: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EstimatorParams {
    pub n_perm: usize,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self {
            n_perm: DEFAULT_PERMUTATIONS,
        }
    }
}

/// Estimators available by name: `exact`, `sampled`.
pub fn registry() -> Registry<dyn ShapleyEstimator, EstimatorParams> {
    fn exact(_: &EstimatorParams) -> Box<dyn ShapleyEstimator> {
        Box::new(ExactShapley)
    }
    fn sampled(p: &EstimatorParams) -> Box<dyn ShapleyEstimator> {
        Box::new(SampledShapley { n_perm: p.n_perm })
    }
    Registry::new("shapley estimator")
        .with("exact", exact)
        .with("sampled", sampled)
}

pub fn shapley_interventional(
    forest: &Forest,
    x: &[f64],
    background: &[Vec<f64>],
    mode: &ShapleyMode,
) -> Result<ShapleyRow> {
    match *mode {
        ShapleyMode::Exact => ExactShapley.explain(forest, x, background, 0),
        ShapleyMode::Sampled { n_perm, seed } => SampledShapley { n_perm }.explain(forest, x, background, seed),
    }
}

/// Up to `n` rows drawn without replacement, in a seeded order.
pub fn background_rows(data: &LabeledData, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng_for(seed, &[]));
    idx.truncate(n);
    idx.into_iter().map(|i| data.row(i).to_vec()).collect()
}

fn leaf_value(tree: &Tree, node: usize, class: usize) -> f64 {
    let counts = &tree.nodes[node].counts;
    counts[class] as f64 / counts.iter().sum::<u32>() as f64
}

/// Leaf index reached by `x` and the bit set of features tested on the way.
fn route(tree: &Tree, x: &[f64]) -> (usize, u64) {
    let mut i = 0;
    let mut mask = 0u64;
    loop {
        let node = &tree.nodes[i];
        if node.is_leaf() {
            return (i, mask);
        }
        mask |= 1 << node.feature;
        i = if x[node.feature as usize] <= node.threshold {
            node.left as usize
        } else {
            node.right as usize
        };
    }
}

fn class_value(forest: &Forest, x: &[f64], class: usize) -> f64 {
    let sum: f64 = forest
        .trees
        .iter()
        .map(|t| leaf_value(t, route(t, x).0, class))
        .sum();
    sum / forest.trees.len() as f64
}

fn prepare(forest: &Forest, x: &[f64], background: &[Vec<f64>]) -> Result<(usize, f64, f64)> {
    if background.is_empty() {
        return Err(Error::EmptyBackground);
    }
    if forest.feature_count > 64 {
        return Err(Error::Config("at most 64 features are supported".into()));
    }
    let (class, probs) = forest.predict(x)?;
    for z in background {
        forest.predict_proba(z)?;
    }
    let baseline = background.iter().map(|z| class_value(forest, z, class)).sum::<f64>() / background.len() as f64;
    Ok((class, probs[class], baseline))
}

impl ShapleyEstimator for ExactShapley {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn explain(&self, forest: &Forest, x: &[f64], background: &[Vec<f64>], _seed: u64) -> Result<ShapleyRow> {
        let (class, prediction, baseline) = prepare(forest, x, background)?;
        let used = forest.used_features();
        let m = used.len();
        if m > EXACT_FEATURE_LIMIT {
            return Err(Error::ExactInfeasible {
                used: m,
                limit: EXACT_FEATURE_LIMIT,
            });
        }
        // v(S) for every subset S of the used features.
        let mut value = vec![0.0; 1 << m];
        let mut composite = vec![0.0; x.len()];
        for (s, v) in value.iter_mut().enumerate() {
            let mut total = 0.0;
            for z in background {
                composite.copy_from_slice(z);
                for (bit, &f) in used.iter().enumerate() {
                    if s >> bit & 1 == 1 {
                        composite[f] = x[f];
                    }
                }
                total += class_value(forest, &composite, class);
            }
            *v = total / background.len() as f64;
        }
        // weight(|S|) = |S|! (m - |S| - 1)! / m!
        let mut weight = vec![0.0; m.max(1)];
        for (k, w) in weight.iter_mut().enumerate().take(m) {
            *w = 1.0 / (m as f64 * binomial(m - 1, k));
        }
        let mut phi = vec![0.0; x.len()];
        for (bit, &f) in used.iter().enumerate() {
            let mut acc = 0.0;
            for s in 0..(1usize << m) {
                if s >> bit & 1 == 0 {
                    acc += weight[s.count_ones() as usize] * (value[s | 1 << bit] - value[s]);
                }
            }
            phi[f] = acc;
        }
        Ok(ShapleyRow {
            id: String::new(),
            class,
            prediction,
            baseline,
            phi,
        })
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl ShapleyEstimator for SampledShapley {
    fn name(&self) -> &'static str {
        "sampled"
    }

    /// For each sampled ordering, features are switched from the background
    /// row to `x` one at a time and the change in the mean background value is
    /// credited to the switched feature. Each ordering telescopes to
    /// `prediction - baseline`, so local accuracy holds up to rounding.
    fn explain(&self, forest: &Forest, x: &[f64], background: &[Vec<f64>], seed: u64) -> Result<ShapleyRow> {
        let (class, prediction, baseline) = prepare(forest, x, background)?;
        if self.n_perm == 0 {
            return Err(Error::Config("n_perm must be at least 1".into()));
        }
        let p = x.len();
        let trees = &forest.trees;
        let n_trees = trees.len() as f64;
        let start: Vec<Vec<(usize, u64)>> = background
            .iter()
            .map(|z| trees.iter().map(|t| route(t, z)).collect())
            .collect();
        let start_sum: Vec<f64> = start
            .iter()
            .map(|routes| trees.iter().zip(routes).map(|(t, r)| leaf_value(t, r.0, class)).sum())
            .collect();
        let mut rng = rng_for(seed, &[]);
        let mut order: Vec<usize> = (0..p).collect();
        let mut phi = vec![0.0; p];
        let mut perm_phi = vec![0.0; p];
        let mut composite = vec![0.0; p];
        let mut state: Vec<(usize, u64)> = Vec::with_capacity(trees.len());
        for _ in 0..self.n_perm {
            order.shuffle(&mut rng);
            perm_phi.iter_mut().for_each(|v| *v = 0.0);
            for (b, z) in background.iter().enumerate() {
                composite.copy_from_slice(z);
                state.clear();
                state.extend_from_slice(&start[b]);
                let mut sum = start_sum[b];
                for &j in &order {
                    if x[j] == z[j] {
                        continue;
                    }
                    composite[j] = x[j];
                    let before = sum;
                    for (t, s) in trees.iter().zip(state.iter_mut()) {
                        if s.1 >> j & 1 == 1 {
                            let next = route(t, &composite);
                            if next.0 != s.0 {
                                sum += leaf_value(t, next.0, class) - leaf_value(t, s.0, class);
                            }
                            *s = next;
                        }
                    }
                    perm_phi[j] += (sum - before) / n_trees;
                }
            }
            for (a, v) in phi.iter_mut().zip(&perm_phi) {
                *a += v / background.len() as f64;
            }
        }
        phi.iter_mut().for_each(|v| *v /= self.n_perm as f64);
        Ok(ShapleyRow {
            id: String::new(),
            class,
            prediction,
            baseline,
            phi,
        })
    }
}

/// Mean |phi| per feature, arranged by vowel and metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub rows: usize,
    pub feature_names: Vec<String>,
    pub mean_abs: Vec<f64>,
    /// vowel -> metric -> mean |phi| (present for the 20-feature layout).
    pub by_vowel: BTreeMap<String, BTreeMap<String, f64>>,
    pub metric_totals: BTreeMap<String, f64>,
    pub vowel_totals: BTreeMap<String, f64>,
}

impl ImportanceReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn aggregate_importance(tables: &[ShapleyTable]) -> Result<ImportanceReport> {
    let first = tables
        .iter()
        .find(|t| !t.rows.is_empty())
        .ok_or_else(|| Error::InsufficientData {
            group: "importance".into(),
            reason: "no Shapley rows".into(),
        })?;
    let p = first.feature_names.len();
    let mut sum = vec![0.0; p];
    let mut rows = 0;
    for table in tables {
        if table.feature_names.len() != p {
            return Err(Error::Config("Shapley tables disagree on features".into()));
        }
        for r in &table.rows {
            for (s, v) in sum.iter_mut().zip(&r.phi) {
                *s += v.abs();
            }
            rows += 1;
        }
    }
    let mean_abs: Vec<f64> = sum.iter().map(|s| s / rows as f64).collect();
    let mut by_vowel = BTreeMap::new();
    let mut metric_totals = BTreeMap::new();
    let mut vowel_totals = BTreeMap::new();
    if p == FEATURE_COUNT {
        for v in Vowel::ALL {
            let mut cell = BTreeMap::new();
            for (m, name) in MetricVector::NAMES.iter().enumerate() {
                let value = mean_abs[v.index() * MetricVector::NAMES.len() + m];
                cell.insert(name.to_string(), value);
                *metric_totals.entry(name.to_string()).or_insert(0.0) += value;
                *vowel_totals.entry(v.to_string()).or_insert(0.0) += value;
            }
            by_vowel.insert(v.to_string(), cell);
        }
    }
    Ok(ImportanceReport {
        rows,
        feature_names: first.feature_names.clone(),
        mean_abs,
        by_vowel,
        metric_totals,
        vowel_totals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{train_forest, TreeNode, FOREST_FORMAT, FOREST_VERSION};
    use rand::Rng;

    const LEAF: u32 = u32::MAX;

    fn leaf(counts: Vec<u32>) -> TreeNode {
        TreeNode {
            feature: LEAF,
            threshold: 0.0,
            left: LEAF,
            right: LEAF,
            counts,
        }
    }

    fn forest(trees: Vec<Tree>, p: usize) -> Forest {
        Forest {
            format: FOREST_FORMAT.into(),
            version: FOREST_VERSION,
            n_estimators: trees.len(),
            max_depth: 1,
            n_classes: 2,
            feature_count: p,
            seed: 0,
            classes: vec!["a".into(), "b".into()],
            trees,
        }
    }

    fn stump_on(feature: u32) -> Tree {
        Tree {
            nodes: vec![
                TreeNode {
                    feature,
                    threshold: 0.0,
                    left: 1,
                    right: 2,
                    counts: vec![10, 10],
                },
                leaf(vec![9, 1]),
                leaf(vec![1, 9]),
            ],
            max_depth: 1,
            seed: 0,
        }
    }

    fn half_and_half(p: usize) -> Vec<Vec<f64>> {
        (0..10)
            .map(|i| {
                let mut z = vec![0.5; p];
                z[0] = if i % 2 == 0 { -1.0 } else { 1.0 };
                z
            })
            .collect()
    }

    #[test]
    fn stump_closed_form() {
        let f = forest(vec![stump_on(0)], 3);
        let x = [-1.0, 2.0, 3.0];
        let bg = half_and_half(3);
        let exact = shapley_interventional(&f, &x, &bg, &ShapleyMode::Exact).unwrap();
        assert_eq!(exact.class, 0);
        assert!((exact.phi[0] - 0.4).abs() < 1e-12);
        assert_eq!(&exact.phi[1..], &[0.0, 0.0]);
        assert!((exact.baseline - 0.5).abs() < 1e-12);
        let sampled = shapley_interventional(&f, &x, &bg, &ShapleyMode::Sampled { n_perm: 16, seed: 1 }).unwrap();
        assert!((sampled.phi[0] - 0.4).abs() < 1e-12);
        assert_eq!(&sampled.phi[1..], &[0.0, 0.0]);
    }

    fn random_forest_fixture(p: usize, seed: u64) -> (Forest, LabeledData) {
        let mut rng = rng_for(seed, &[]);
        let n = 200;
        let features: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n)
            .map(|i| {
                let r = &features[i * p..(i + 1) * p];
                usize::from(r[0] + 0.5 * r[1] - 0.3 * r[2] * r[3] > 0.0)
            })
            .collect();
        let data = LabeledData::new(features, labels, p, vec!["a".into(), "b".into()]).unwrap();
        (train_forest(&data, 6, 4, seed).unwrap(), data)
    }

    #[test]
    fn exact_local_accuracy_and_sampled_agreement() {
        let (f, data) = random_forest_fixture(8, 3);
        assert!(f.used_features().len() <= EXACT_FEATURE_LIMIT);
        let bg = background_rows(&data, 30, 1);
        for i in 0..5 {
            let x = data.row(100 + i);
            let exact = ExactShapley.explain(&f, x, &bg, 0).unwrap();
            assert!(exact.local_accuracy_error() < 1e-9);
            let sampled = SampledShapley { n_perm: 256 }.explain(&f, x, &bg, 7).unwrap();
            assert!(sampled.local_accuracy_error() < 1e-9);
            assert_eq!(sampled.prediction, exact.prediction);
            for (a, b) in exact.phi.iter().zip(&sampled.phi) {
                assert!((a - b).abs() < 0.03, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn row_equal_to_background_gets_zero() {
        let (f, data) = random_forest_fixture(6, 4);
        let x = data.row(3).to_vec();
        let bg = vec![x.clone(); 5];
        for row in [
            ExactShapley.explain(&f, &x, &bg, 0).unwrap(),
            SampledShapley { n_perm: 8 }.explain(&f, &x, &bg, 0).unwrap(),
        ] {
            assert!(row.phi.iter().all(|&v| v == 0.0));
            assert_eq!(row.prediction, row.baseline);
        }
    }

    #[test]
    fn duplicated_symmetric_features_share_credit() {
        // Two stumps, one on each duplicate feature.
        let f = forest(vec![stump_on(0), stump_on(1)], 3);
        let x = [-1.0, -1.0, 5.0];
        let bg: Vec<Vec<f64>> = (0..6).map(|i| {
            let v = if i % 3 == 0 { -2.0 } else { 2.0 };
            vec![v, v, 0.0]
        }).collect();
        let row = ExactShapley.explain(&f, &x, &bg, 0).unwrap();
        assert!((row.phi[0] - row.phi[1]).abs() < 1e-15);
        assert!(row.phi[0] > 0.0);
        assert_eq!(row.phi[2], 0.0);
    }

    #[test]
    fn exact_refuses_many_features_and_empty_background() {
        let (f, data) = random_forest_fixture(16, 5);
        let f = {
            let mut big = f.clone();
            big.trees.extend(train_forest(&data, 30, 6, 9).unwrap().trees);
            big.n_estimators = big.trees.len();
            big
        };
        assert!(f.used_features().len() > EXACT_FEATURE_LIMIT);
        let bg = background_rows(&data, 5, 0);
        assert!(matches!(
            ExactShapley.explain(&f, data.row(0), &bg, 0),
            Err(Error::ExactInfeasible { limit: 12, .. })
        ));
        assert!(matches!(
            SampledShapley { n_perm: 4 }.explain(&f, data.row(0), &[], 0),
            Err(Error::EmptyBackground)
        ));
    }

    #[test]
    fn sampling_error_shrinks_with_permutations() {
        let (f, data) = random_forest_fixture(6, 8);
        let bg = background_rows(&data, 20, 2);
        let x = data.row(150);
        let exact = ExactShapley.explain(&f, x, &bg, 0).unwrap();
        let rmse = |n_perm: usize| {
            let reps = 40;
            let mut sq = 0.0;
            for s in 0..reps {
                let row = SampledShapley { n_perm }.explain(&f, x, &bg, 1000 + s).unwrap();
                sq += row.phi.iter().zip(&exact.phi).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
            (sq / reps as f64).sqrt()
        };
        let (e4, e16, e64) = (rmse(4), rmse(16), rmse(64));
        // Monte Carlo error scales as 1/sqrt(n): quadrupling n halves it.
        for ratio in [e4 / e16, e16 / e64] {
            assert!((ratio - 2.0).abs() < 0.6, "ratio {ratio} ({e4}, {e16}, {e64})");
        }
    }

    #[test]
    fn aggregation_layout() {
        let names = crate::dataset::feature_names();
        let mut phi = vec![0.0; 20];
        phi[0] = 1.0;
        let row = |phi: Vec<f64>| ShapleyRow {
            id: "r".into(),
            class: 0,
            prediction: 0.0,
            baseline: 0.0,
            phi,
        };
        let t = ShapleyTable {
            feature_names: names.clone(),
            rows: vec![row(phi.clone())],
        };
        let r = aggregate_importance(&[t]).unwrap();
        assert_eq!(r.mean_abs[0], 1.0);
        assert!(r.mean_abs[1..].iter().all(|&v| v == 0.0));
        let mut neg = phi.clone();
        neg[0] = -1.0;
        neg[7] = 0.5;
        let t2 = ShapleyTable {
            feature_names: names.clone(),
            rows: vec![row(phi), row(neg)],
        };
        let r = aggregate_importance(&[t2]).unwrap();
        assert_eq!(r.mean_abs[0], 1.0);
        assert_eq!(r.by_vowel["a"]["density"], 1.0);
        assert_eq!(r.by_vowel["e"]["q"], 0.25);
        for (m, name) in MetricVector::NAMES.iter().enumerate() {
            let members: f64 = (0..5).map(|v| r.mean_abs[v * 4 + m]).sum();
            assert_eq!(r.metric_totals[*name], members);
        }
        assert!(aggregate_importance(&[]).is_err());
    }

    #[test]
    fn registry_and_csv() {
        let reg = registry();
        assert_eq!(reg.names(), vec!["exact", "sampled"]);
        assert_eq!(reg.create("sampled", &EstimatorParams::default()).unwrap().name(), "sampled");
        assert!(reg.create("treeshap", &EstimatorParams::default()).is_err());
        let t = ShapleyTable {
            feature_names: vec!["f0".into(), "f1".into()],
            rows: vec![ShapleyRow {
                id: "S01/0".into(),
                class: 1,
                prediction: 0.75,
                baseline: 0.5,
                phi: vec![0.25, 0.0],
            }],
        };
        assert_eq!(t.to_csv(), "row,class,prediction,baseline,f0,f1\nS01/0,1,0.75,0.5,0.25,0\n");
    }
}
