//! Community detection strategies over unweighted graphs.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::registry::Registry;

/// Community assignment with contiguous ids, numbered in order of each
/// community's smallest node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub assignment: Vec<usize>,
}

impl Partition {
    /// Canonicalise arbitrary labels.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let assignment = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Self { assignment }
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            assignment: (0..n).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.assignment.iter().max().map_or(0, |m| m + 1)
    }

    /// Members of each community, ascending.
    pub fn communities(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count()];
        for (v, &c) in self.assignment.iter().enumerate() {
            out[c].push(v);
        }
        out
    }

    /// The largest community; ties go to the one holding the smallest index.
    pub fn largest(&self) -> Vec<usize> {
        // Ids are ordered by smallest member, so the first maximum wins ties.
        let mut best: Vec<usize> = Vec::new();
        for members in self.communities() {
            if members.len() > best.len() {
                best = members;
            }
        }
        best
    }
}

pub trait CommunityDetector: Send + Sync {
    fn name(&self) -> &'static str;
    fn detect(&self, g: &Graph, seed: u64) -> Partition;
}

/// Multi-level greedy modularity optimisation (local moves, then
/// aggregation) at resolution 1.
#[derive(Debug, Clone, Copy)]
pub struct Louvain {
    pub min_gain: f64,
}

impl Default for Louvain {
    fn default() -> Self {
        Self { min_gain: 1e-10 }
    }
}

struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    self_loops: Vec<f64>,
}

impl Level {
    fn from_graph(g: &Graph) -> Self {
        Self {
            adj: (0..g.node_count())
                .map(|v| g.neighbors(v).iter().map(|&u| (u, 1.0)).collect())
                .collect(),
            self_loops: vec![0.0; g.node_count()],
        }
    }

    fn degrees(&self) -> Vec<f64> {
        self.adj
            .iter()
            .zip(&self.self_loops)
            .map(|(list, s)| list.iter().map(|(_, w)| w).sum::<f64>() + 2.0 * s)
            .collect()
    }

    /// Returns community labels (contiguous) and whether any node moved.
    fn local_moves(&self, rng: &mut ChaCha8Rng, min_gain: f64) -> (Vec<usize>, bool) {
        let n = self.adj.len();
        let k = self.degrees();
        let m2: f64 = k.iter().sum();
        let mut comm: Vec<usize> = (0..n).collect();
        let mut tot = k.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut moved_any = false;
        let mut links = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        loop {
            let mut moved = false;
            for &i in &order {
                let own = comm[i];
                for &(j, w) in &self.adj[i] {
                    let c = comm[j];
                    if links[c] == 0.0 {
                        touched.push(c);
                    }
                    links[c] += w;
                }
                tot[own] -= k[i];
                let gain = |c: usize, links: &[f64]| links[c] - tot[c] * k[i] / m2;
                let stay = gain(own, &links);
                let mut best = own;
                let mut best_gain = f64::NEG_INFINITY;
                for &c in &touched {
                    let g = gain(c, &links);
                    if c != own && g > best_gain {
                        best = c;
                        best_gain = g;
                    }
                }
                if best_gain <= stay + min_gain {
                    best = own;
                }
                tot[best] += k[i];
                if best != own {
                    comm[i] = best;
                    moved = true;
                    moved_any = true;
                }
                for &c in &touched {
                    links[c] = 0.0;
                }
                links[own] = 0.0;
                touched.clear();
            }
            if !moved {
                break;
            }
        }
        let labels = Partition::from_labels(&comm).assignment;
        (labels, moved_any)
    }

    fn aggregate(&self, labels: &[usize]) -> Level {
        let count = labels.iter().max().map_or(0, |m| m + 1);
        let mut weights: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); count];
        let mut self_loops = vec![0.0; count];
        for (i, list) in self.adj.iter().enumerate() {
            let ci = labels[i];
            self_loops[ci] += self.self_loops[i];
            for &(j, w) in list {
                let cj = labels[j];
                if ci == cj {
                    // Each internal edge is seen from both ends.
                    self_loops[ci] += w / 2.0;
                } else {
                    *weights[ci].entry(cj).or_insert(0.0) += w;
                }
            }
        }
        Level {
            adj: weights.into_iter().map(|m| m.into_iter().collect()).collect(),
            self_loops,
        }
    }
}

impl CommunityDetector for Louvain {
    fn name(&self) -> &'static str {
        "louvain"
    }

    fn detect(&self, g: &Graph, seed: u64) -> Partition {
        let n = g.node_count();
        if g.edge_count() == 0 {
            return Partition::singletons(n);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut membership: Vec<usize> = (0..n).collect();
        let mut level = Level::from_graph(g);
        loop {
            let (labels, moved) = level.local_moves(&mut rng, self.min_gain);
            if !moved {
                break;
            }
            for m in membership.iter_mut() {
                *m = labels[*m];
            }
            level = level.aggregate(&labels);
        }
        Partition::from_labels(&membership)
    }
}

/// Connected components, for comparison with modularity communities.
#[derive(Debug, Default, Clone, Copy)]
pub struct ConnectedComponents;

impl CommunityDetector for ConnectedComponents {
    fn name(&self) -> &'static str {
        "components"
    }

    fn detect(&self, g: &Graph, _seed: u64) -> Partition {
        let n = g.node_count();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                for &u in g.neighbors(v) {
                    if label[u] == usize::MAX {
                        label[u] = next;
                        queue.push_back(u);
                    }
                }
            }
            next += 1;
        }
        Partition { assignment: label }
    }
}

/// Detectors available by name: `louvain`, `components`.
pub fn registry() -> Registry<dyn CommunityDetector> {
    fn louvain(_: &()) -> Box<dyn CommunityDetector> {
        Box::new(Louvain::default())
    }
    fn components(_: &()) -> Box<dyn CommunityDetector> {
        Box::new(ConnectedComponents)
    }
    Registry::new("community detector")
        .with("louvain", louvain)
        .with("components", components)
}
