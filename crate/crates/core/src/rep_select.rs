//! Representative-spectrum selection: threshold the pairwise correlation
//! matrix of a (subject, vowel) group and keep the largest community.

use serde::{Deserialize, Serialize};

use crate::community::CommunityDetector;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::spectrum::SpectralProfile;

pub const DEFAULT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    n: usize,
    values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Off-diagonal entries `(i, j)` with `i < j`.
    pub fn upper_triangle(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).map(move |j| self.get(i, j)))
    }

    /// Unweighted graph with an edge wherever `corr >= threshold`.
    pub fn threshold_graph(&self, threshold: f64) -> Graph {
        Graph::from_edges(
            self.n,
            (0..self.n).flat_map(|i| {
                (i + 1..self.n)
                    .filter(move |&j| self.get(i, j) >= threshold)
                    .map(move |j| (i, j))
            }),
        )
    }
}

/// Pearson correlations between the log-power vectors of `profiles`.
pub fn correlation_matrix(profiles: &[&SpectralProfile]) -> Result<CorrelationMatrix> {
    if profiles.len() < 2 {
        return Err(Error::InsufficientData {
            group: "correlation".into(),
            reason: format!("need at least 2 profiles, got {}", profiles.len()),
        });
    }
    let bins = profiles[0].len();
    let mut centred = Vec::with_capacity(profiles.len());
    for (index, p) in profiles.iter().enumerate() {
        if p.len() != bins {
            return Err(Error::Config(format!(
                "profile {index} has {} bins, expected {bins}",
                p.len()
            )));
        }
        let mean = p.log_power.iter().sum::<f64>() / bins as f64;
        let dev: Vec<f64> = p.log_power.iter().map(|v| v - mean).collect();
        let norm = dev.iter().map(|d| d * d).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::DegenerateProfile { index });
        }
        centred.push(dev.into_iter().map(|d| d / norm).collect::<Vec<_>>());
    }
    let n = profiles.len();
    let mut values = vec![1.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let r: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
            let r = r.clamp(-1.0, 1.0);
            values[i * n + j] = r;
            values[j * n + i] = r;
        }
    }
    Ok(CorrelationMatrix { n, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Kept indices, ascending.
    pub kept: Vec<usize>,
    /// Community sizes, in community-id order.
    pub community_sizes: Vec<usize>,
    pub total: usize,
    /// Fraction of unordered pairs whose correlation reached the threshold.
    pub edge_fraction: f64,
}

impl Selection {
    pub fn retained_fraction(&self) -> f64 {
        self.kept.len() as f64 / self.total as f64
    }
}

/// Keep the largest community of the thresholded correlation graph.
///
/// Ties between equally large communities go to the one holding the
/// smallest index. With no edges at all, the profile with the highest mean
/// correlation to the others is kept alone.
pub fn select_representatives(
    corr: &CorrelationMatrix,
    threshold: f64,
    detector: &dyn CommunityDetector,
    seed: u64,
) -> Result<Selection> {
    if !(threshold > -1.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold {threshold} outside (-1, 1)")));
    }
    let n = corr.size();
    let g = corr.threshold_graph(threshold);
    let pairs = (n * (n - 1) / 2).max(1);
    let edge_fraction = g.edge_count() as f64 / pairs as f64;
    if g.edge_count() == 0 {
        let mean = |i: usize| (0..n).filter(|&j| j != i).map(|j| corr.get(i, j)).sum::<f64>();
        let mut best = 0;
        for i in 1..n {
            if mean(i) > mean(best) {
                best = i;
            }
        }
        return Ok(Selection {
            kept: vec![best],
            community_sizes: vec![1; n],
            total: n,
            edge_fraction,
        });
    }
    let partition = detector.detect(&g, seed);
    Ok(Selection {
        kept: partition.largest(),
        community_sizes: partition.communities().iter().map(Vec::len).collect(),
        total: n,
        edge_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::community::{ConnectedComponents, Louvain};

    fn profile(values: Vec<f64>) -> SpectralProfile {
        SpectralProfile {
            freqs: (0..values.len()).map(|i| i as f64).collect(),
            log_power: values,
            key: None,
        }
    }

    fn matrix(n: usize, f: impl Fn(usize, usize) -> f64) -> CorrelationMatrix {
        let mut values = vec![1.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        CorrelationMatrix { n, values }
    }

    #[test]
    fn pearson_cases() {
        let a = profile(vec![1.0, 3.0, 2.0, 5.0]);
        let neg = profile(a.log_power.iter().map(|v| -v).collect());
        let alt = profile(vec![1.0, -1.0, 1.0, -1.0]);
        let blk = profile(vec![1.0, 1.0, -1.0, -1.0]);
        let c = correlation_matrix(&[&a, &a.clone(), &neg]).unwrap();
        assert!((c.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((c.get(0, 2) + 1.0).abs() < 1e-15);
        assert_eq!(c.get(2, 2), 1.0);
        assert_eq!(c.get(1, 2), c.get(2, 1));
        let c = correlation_matrix(&[&alt, &blk]).unwrap();
        assert!(c.get(0, 1).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_names_index() {
        let a = profile(vec![1.0, 2.0, 3.0]);
        let flat = profile(vec![4.0; 3]);
        assert!(matches!(
            correlation_matrix(&[&a, &flat]),
            Err(Error::DegenerateProfile { index: 1 })
        ));
        assert!(correlation_matrix(&[&a]).is_err());
    }

    #[test]
    fn mutually_similar_group_is_kept_whole() {
        let c = matrix(5, |_, _| 0.95);
        let s = select_representatives(&c, 0.9, &Louvain::default(), 0).unwrap();
        assert_eq!(s.kept, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.retained_fraction(), 1.0);
    }

    #[test]
    fn larger_clique_wins() {
        // Clique {0,1,2,3,4} and clique {5,6,7}, weak cross correlation.
        let block = |i: usize| if i < 5 { 0 } else { 1 };
        let c = matrix(8, |i, j| if block(i) == block(j) { 0.97 } else { 0.3 });
        let g = c.threshold_graph(0.9);
        let best = crate::graph_metrics::tests::best_modularity(&g);
        let two_block = crate::community::Partition::from_labels(&[0, 0, 0, 0, 0, 1, 1, 1]);
        assert!((crate::graph_metrics::modularity(&g, &two_block).unwrap() - best).abs() < 1e-12);
        let s = select_representatives(&c, 0.9, &Louvain::default(), 0).unwrap();
        assert_eq!(s.kept, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.community_sizes, vec![5, 3]);
    }

    #[test]
    fn equal_communities_tie_to_index_zero() {
        let c = matrix(4, |i, j| if (i < 2) == (j < 2) { 0.99 } else { 0.1 });
        let s = select_representatives(&c, 0.9, &Louvain::default(), 0).unwrap();
        assert_eq!(s.kept, vec![0, 1]);
    }

    #[test]
    fn edgeless_falls_back_to_best_mean() {
        let c = matrix(3, |i, j| match (i, j) {
            (0, 1) => 0.1,
            (0, 2) => 0.2,
            _ => 0.5,
        });
        let s = select_representatives(&c, 0.9, &Louvain::default(), 0).unwrap();
        assert_eq!(s.kept, vec![2]);
        assert_eq!(s.edge_fraction, 0.0);
    }

    #[test]
    fn component_variant_differs_from_modularity() {
        // Two dense blocks joined by one edge form one component but two communities.
        let block = |i: usize| i / 4;
        let c = matrix(8, |i, j| {
            if block(i) == block(j) || (i, j) == (3, 4) {
                0.95
            } else {
                0.0
            }
        });
        let louv = select_representatives(&c, 0.9, &Louvain::default(), 0).unwrap();
        let comp = select_representatives(&c, 0.9, &ConnectedComponents, 0).unwrap();
        assert_eq!(louv.kept, vec![0, 1, 2, 3]);
        assert_eq!(comp.kept, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn raising_threshold_never_adds_edges() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let vals: Vec<f64> = (0..144).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = matrix(12, |i, j| vals[i * 12 + j]);
        let mut prev = c.threshold_graph(-0.99).edges();
        for step in 1..40 {
            let t = -0.99 + step as f64 * 0.05;
            let cur = c.threshold_graph(t).edges();
            assert!(cur.iter().all(|e| prev.contains(e)));
            prev = cur;
        }
    }
}
