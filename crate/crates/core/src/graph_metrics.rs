//! Topological summaries of visibility graphs: link density, average
//! shortest path length, clustering coefficient and modularity.

use serde::{Deserialize, Serialize};

use crate::community::{CommunityDetector, Louvain, Partition};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Seed used for community detection when computing feature vectors.
pub const METRIC_SEED: u64 = 0;

pub fn density(g: &Graph) -> Result<f64> {
    let n = g.node_count();
    if n < 2 {
        return Err(Error::UndefinedMetric(format!("density needs 2+ nodes, got {n}")));
    }
    Ok(2.0 * g.edge_count() as f64 / (n * (n - 1)) as f64)
}

/// Adjacency rows as bitsets, for dense graphs.
struct BitAdjacency {
    words: usize,
    rows: Vec<u64>,
}

impl BitAdjacency {
    fn new(g: &Graph) -> Self {
        let n = g.node_count();
        let words = n.div_ceil(64);
        let mut rows = vec![0u64; n * words];
        for v in 0..n {
            for &u in g.neighbors(v) {
                rows[v * words + u / 64] |= 1 << (u % 64);
            }
        }
        Self { words, rows }
    }

    fn row(&self, v: usize) -> &[u64] {
        &self.rows[v * self.words..(v + 1) * self.words]
    }
}

fn for_each_bit(set: &[u64], mut f: impl FnMut(usize)) {
    for (w, &word) in set.iter().enumerate() {
        let mut bits = word;
        while bits != 0 {
            f(w * 64 + bits.trailing_zeros() as usize);
            bits &= bits - 1;
        }
    }
}

/// Mean hop distance over all unordered node pairs.
pub fn aspl(g: &Graph) -> Result<f64> {
    let n = g.node_count();
    if n < 2 {
        return Err(Error::UndefinedMetric(format!("path length needs 2+ nodes, got {n}")));
    }
    let adj = BitAdjacency::new(g);
    let words = adj.words;
    let mut visited = vec![0u64; words];
    let mut frontier = vec![0u64; words];
    let mut next = vec![0u64; words];
    let mut total: u64 = 0;
    for src in 0..n {
        visited.fill(0);
        frontier.fill(0);
        visited[src / 64] |= 1 << (src % 64);
        frontier[src / 64] |= 1 << (src % 64);
        let mut reached = 1;
        let mut depth = 0u64;
        loop {
            next.fill(0);
            for_each_bit(&frontier, |v| {
                for (x, r) in next.iter_mut().zip(adj.row(v)) {
                    *x |= r;
                }
            });
            let mut found = 0;
            for (x, seen) in next.iter_mut().zip(visited.iter_mut()) {
                *x &= !*seen;
                *seen |= *x;
                found += x.count_ones() as usize;
            }
            if found == 0 {
                break;
            }
            depth += 1;
            reached += found;
            total += depth * found as u64;
            std::mem::swap(&mut frontier, &mut next);
        }
        if reached != n {
            return Err(Error::Disconnected);
        }
    }
    Ok(total as f64 / (n * (n - 1)) as f64)
}

/// Mean local clustering coefficient; nodes with degree < 2 contribute 0.
pub fn clustering(g: &Graph) -> f64 {
    let n = g.node_count();
    if n == 0 {
        return 0.0;
    }
    let adj = BitAdjacency::new(g);
    let sum: f64 = (0..n)
        .map(|v| {
            let nb = g.neighbors(v);
            let k = nb.len();
            if k < 2 {
                return 0.0;
            }
            let row = adj.row(v);
            let twice_triangles: u32 = nb
                .iter()
                .map(|&u| row.iter().zip(adj.row(u)).map(|(a, b)| (a & b).count_ones()).sum::<u32>())
                .sum();
            twice_triangles as f64 / (k * (k - 1)) as f64
        })
        .sum();
    sum / n as f64
}

/// `Q = sum_c (e_c / m - (d_c / 2m)^2)`.
pub fn modularity(g: &Graph, p: &Partition) -> Result<f64> {
    let m = g.edge_count();
    if m == 0 {
        return Err(Error::UndefinedMetric("modularity of an edgeless graph".into()));
    }
    if p.assignment.len() != g.node_count() {
        return Err(Error::Config(format!(
            "partition covers {} nodes, graph has {}",
            p.assignment.len(),
            g.node_count()
        )));
    }
    let c = p.count();
    let mut internal = vec![0usize; c];
    let mut degree = vec![0usize; c];
    for (a, b) in g.edges() {
        if p.assignment[a] == p.assignment[b] {
            internal[p.assignment[a]] += 1;
        }
    }
    for v in 0..g.node_count() {
        degree[p.assignment[v]] += g.degree(v);
    }
    let m = m as f64;
    Ok(internal
        .iter()
        .zip(&degree)
        .map(|(&e, &d)| e as f64 / m - (d as f64 / (2.0 * m)).powi(2))
        .sum())
}

pub fn louvain(g: &Graph, seed: u64) -> Partition {
    Louvain::default().detect(g, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub density: f64,
    pub aspl: f64,
    pub cc: f64,
    pub q: f64,
}

impl MetricVector {
    pub const NAMES: [&'static str; 4] = ["density", "aspl", "cc", "q"];

    pub fn as_array(&self) -> [f64; 4] {
        [self.density, self.aspl, self.cc, self.q]
    }
}

pub fn metric_vector(g: &Graph, seed: u64) -> Result<MetricVector> {
    metric_vector_with(g, &Louvain::default(), seed)
}

pub fn metric_vector_with(g: &Graph, detector: &dyn CommunityDetector, seed: u64) -> Result<MetricVector> {
    let partition = detector.detect(g, seed);
    Ok(MetricVector {
        density: density(g)?,
        aspl: aspl(g)?,
        cc: clustering(g),
        q: modularity(g, &partition)?,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::visgraph::nvg_fast;

    /// Every set partition of `0..n` (restricted growth strings).
    pub(crate) fn all_partitions(n: usize) -> Vec<Partition> {
        fn rec(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Partition>) {
            if prefix.len() == n {
                out.push(Partition::from_labels(prefix));
                return;
            }
            let next = prefix.iter().max().map_or(0, |m| m + 1);
            for c in 0..=next {
                prefix.push(c);
                rec(prefix, n, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), n, &mut out);
        out
    }

    pub(crate) fn best_modularity(g: &Graph) -> f64 {
        all_partitions(g.node_count())
            .iter()
            .map(|p| modularity(g, p).unwrap())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn star(leaves: usize) -> Graph {
        Graph::from_edges(leaves + 1, (1..=leaves).map(|l| (0, l)))
    }

    fn two_triangles() -> Graph {
        Graph::from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
    }

    #[test]
    fn partition_enumeration_counts_bell_numbers() {
        assert_eq!(all_partitions(5).len(), 52);
        assert_eq!(all_partitions(6).len(), 203);
    }

    #[test]
    fn density_cases() {
        assert_eq!(density(&Graph::complete(4)).unwrap(), 1.0);
        assert_eq!(density(&Graph::path(4)).unwrap(), 0.5);
        assert!(matches!(density(&Graph::empty(1)), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn aspl_cases() {
        assert!((aspl(&Graph::path(3)).unwrap() - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(aspl(&Graph::complete(7)).unwrap(), 1.0);
        assert!((aspl(&star(4)).unwrap() - 1.6).abs() < 1e-12);
        assert!(matches!(aspl(&Graph::empty(3)), Err(Error::Disconnected)));
    }

    #[test]
    fn clustering_cases() {
        assert_eq!(clustering(&Graph::complete(3)), 1.0);
        assert_eq!(clustering(&Graph::path(4)), 0.0);
        let k4_minus = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)]);
        assert!((clustering(&k4_minus) - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn modularity_cases() {
        let two = Partition::from_labels(&[0, 0, 0, 1, 1, 1]);
        assert!((modularity(&two_triangles(), &two).unwrap() - 0.5).abs() < 1e-12);
        let mut bridged = two_triangles().edges();
        bridged.push((2, 3));
        let bridged = Graph::from_edges(6, bridged);
        assert!((modularity(&bridged, &two).unwrap() - (6.0 / 7.0 - 0.5)).abs() < 1e-12);
        let one = Partition::from_labels(&[0; 6]);
        assert!(modularity(&bridged, &one).unwrap().abs() < 1e-15);
        assert!(modularity(&Graph::empty(3), &Partition::singletons(3)).is_err());
    }

    #[test]
    fn louvain_reaches_enumerated_optimum_on_small_graphs() {
        let mut bridged = two_triangles().edges();
        bridged.push((2, 3));
        let graphs = vec![
            Graph::from_edges(6, bridged),
            two_triangles(),
            nvg_fast(&[1.0, 2.0, 5.0, 2.0, 1.0]).unwrap(),
            star(5),
        ];
        for g in graphs {
            let best = best_modularity(&g);
            let q = modularity(&g, &louvain(&g, 0)).unwrap();
            assert!((q - best).abs() < 1e-12, "{q} vs {best}");
        }
    }

    #[test]
    fn peak_fixture_metric_vector() {
        let g = nvg_fast(&[1.0, 2.0, 5.0, 2.0, 1.0]).unwrap();
        let mv = metric_vector(&g, METRIC_SEED).unwrap();
        assert_eq!(mv.density, 0.6);
        assert!((mv.aspl - 1.4).abs() < 1e-12);
        // Bowtie: four corners close their triangle, the hub closes 2 of 6 pairs.
        assert!((mv.cc - 13.0 / 15.0).abs() < 1e-12);
        assert!((mv.q - best_modularity(&g)).abs() < 1e-12);
        assert!((mv.q - 1.0 / 9.0).abs() < 1e-12);
        assert_eq!(metric_vector(&g, METRIC_SEED).unwrap(), mv);
    }

    #[test]
    fn constant_series_metrics() {
        let g = nvg_fast(&[0.3; 40]).unwrap();
        let mv = metric_vector(&g, METRIC_SEED).unwrap();
        assert!((mv.density - 2.0 / 40.0).abs() < 1e-15);
        assert_eq!(mv.cc, 0.0);
    }

    #[test]
    fn louvain_never_worse_than_singletons_or_components() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let series: Vec<f64> = (0..60).map(|_| rng.gen_range(0.0..1.0)).collect();
            let g = nvg_fast(&series).unwrap();
            let q = modularity(&g, &louvain(&g, 1)).unwrap();
            assert!(q >= modularity(&g, &Partition::singletons(60)).unwrap());
            assert!(q >= 0.0);
        }
    }

    proptest::proptest! {
        #[test]
        fn metrics_invariant_under_relabeling(
            series in proptest::collection::vec(0.0f64..1.0, 3..40),
            perm_seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let g = nvg_fast(&series).unwrap();
            let mut perm: Vec<usize> = (0..g.node_count()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
            let h = g.permuted(&perm);
            proptest::prop_assert_eq!(density(&g).unwrap(), density(&h).unwrap());
            proptest::prop_assert!((aspl(&g).unwrap() - aspl(&h).unwrap()).abs() < 1e-12);
            proptest::prop_assert!((clustering(&g) - clustering(&h)).abs() < 1e-12);
            let p = louvain(&g, 3);
            let relabeled: Vec<usize> = {
                let mut lab = vec![0; perm.len()];
                for (v, &c) in p.assignment.iter().enumerate() {
                    lab[perm[v]] = c;
                }
                lab
            };
            let q_g = modularity(&g, &p).unwrap();
            let q_h = modularity(&h, &Partition::from_labels(&relabeled)).unwrap();
            proptest::prop_assert!((q_g - q_h).abs() < 1e-12);
            let mv = metric_vector(&g, 0).unwrap();
            proptest::prop_assert!(mv.density > 0.0 && mv.density <= 1.0);
            proptest::prop_assert!(mv.aspl >= 1.0);
            proptest::prop_assert!((0.0..=1.0).contains(&mv.cc));
            proptest::prop_assert!(mv.q >= -0.5 && mv.q < 1.0);
        }
    }
}
