use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::snapshot::SnapshotGraph;
use crate::error::{CoevoError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegativeDistribution {
    #[serde(rename = "uniform")]
    Uniform,
    /// Weights proportional to `(degree + 1)^0.75`.
    #[default]
    #[serde(rename = "degree_3_4")]
    Degree34,
}

/// Draws non-neighbors of a node in one snapshot.
pub struct NegativeSampler<'g> {
    graph: &'g SnapshotGraph,
    weights: Option<WeightedIndex<f64>>,
}

impl<'g> NegativeSampler<'g> {
    pub fn new(graph: &'g SnapshotGraph, distribution: NegativeDistribution) -> Self {
        let weights = match distribution {
            NegativeDistribution::Uniform => None,
            NegativeDistribution::Degree34 => {
                let w = (0..graph.node_count()).map(|v| ((graph.degree(v) + 1) as f64).powf(0.75));
                WeightedIndex::new(w).ok()
            }
        };
        NegativeSampler { graph, weights }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.weights {
            Some(w) => w.sample(rng),
            None => rng.random_range(0..self.graph.node_count()),
        }
    }

    /// `q` draws with replacement, each distinct from `v` and its neighbors.
    pub fn sample<R: Rng + ?Sized>(&self, v: usize, q: usize, rng: &mut R) -> Result<Vec<usize>> {
        let n = self.graph.node_count();
        if v >= n {
            return Err(CoevoError::Contract(format!("node {v} out of range for {n} nodes")));
        }
        if n - 1 == self.graph.degree(v) {
            return Err(CoevoError::Sampling(format!("node {v} is adjacent to every other node")));
        }
        let mut out = Vec::with_capacity(q);
        let mut trials = 0;
        while out.len() < q {
            if trials == 100 * q {
                return Err(CoevoError::Sampling(format!(
                    "no {q} non-neighbors of node {v} after {trials} trials"
                )));
            }
            trials += 1;
            let u = self.draw(rng);
            if u != v && !self.graph.has_edge(v, u) {
                out.push(u);
            }
        }
        Ok(out)
    }
}

pub fn sample_negatives<R: Rng + ?Sized>(
    graph: &SnapshotGraph,
    v: usize,
    q: usize,
    distribution: NegativeDistribution,
    rng: &mut R,
) -> Result<Vec<usize>> {
    NegativeSampler::new(graph, distribution).sample(v, q, rng)
}

fn check_batch(n: usize, batch_size: usize) -> Result<()> {
    if batch_size == 0 || batch_size > n {
        return Err(CoevoError::Config(format!(
            "batch size {batch_size} outside 1..={n}"
        )));
    }
    Ok(())
}

/// Uniform sample of `batch_size` distinct nodes, in ascending order.
pub fn sample_minibatch<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_batch(n, batch_size)?;
    let mut batch = index::sample(rng, n, batch_size).into_vec();
    batch.sort_unstable();
    Ok(batch)
}

/// One shuffled pass over all nodes split into consecutive batches; the last
/// batch may be smaller.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    check_batch(n, batch_size)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(order
        .chunks(batch_size)
        .map(|c| {
            let mut b = c.to_vec();
            b.sort_unstable();
            b
        })
        .collect())
}

/// Up to `k` distinct neighbors of `v`, all of them when the degree is at most `k`.
pub fn sample_positives<R: Rng + ?Sized>(graph: &SnapshotGraph, v: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let nb = graph.neighbors(v);
    if nb.len() <= k {
        return nb.iter().map(|&u| u as usize).collect();
    }
    let mut picked: Vec<usize> = index::sample(rng, nb.len(), k).into_iter().map(|i| nb[i] as usize).collect();
    picked.sort_unstable();
    picked
}

/// A node co-occurring with `v` on a length-2 random walk within window 2,
/// or `None` when `v` is isolated.
pub fn random_walk_positive<R: Rng + ?Sized>(graph: &SnapshotGraph, v: usize, rng: &mut R) -> Option<usize> {
    let first = *graph.neighbors(v).choose(rng)? as usize;
    let second = graph
        .neighbors(first)
        .choose(rng)
        .map(|&u| u as usize)
        .filter(|&u| u != v);
    match second {
        Some(u) if rng.random_bool(0.5) => Some(u),
        _ => Some(first),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::collections::BTreeSet;

    fn star(n: usize) -> SnapshotGraph {
        SnapshotGraph::from_undirected(n, (1..n).map(|u| (0, u))).unwrap()
    }

    #[test]
    fn empty_graph_uniform() {
        let g = SnapshotGraph::empty(5);
        let mut rng = seeded(1);
        for _ in 0..100 {
            let s = sample_negatives(&g, 2, 1, NegativeDistribution::Uniform, &mut rng).unwrap();
            assert_ne!(s[0], 2);
        }
    }

    #[test]
    fn fully_connected_node_is_an_error() {
        let g = star(6);
        let err = sample_negatives(&g, 0, 1, NegativeDistribution::Degree34, &mut seeded(1));
        assert!(matches!(err, Err(CoevoError::Sampling(_))));
    }

    #[test]
    fn degree_weighting_matches_analytic_frequencies() {
        // Star around 0 plus a hub 5 linked to 6..9; v = 1 excludes 0 and itself.
        let mut pairs: Vec<(usize, usize)> = (1..5).map(|u| (0, u)).collect();
        pairs.extend((6..10).map(|u| (5, u)));
        let g = SnapshotGraph::from_undirected(10, pairs).unwrap();
        let sampler = NegativeSampler::new(&g, NegativeDistribution::Degree34);
        let mut rng = seeded(5);
        let draws = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..draws / 10 {
            for u in sampler.sample(1, 10, &mut rng).unwrap() {
                counts[u] += 1;
            }
        }
        assert_eq!(counts[0] + counts[1], 0);
        let eligible: Vec<usize> = (2..10).collect();
        let weight = |u: usize| ((g.degree(u) + 1) as f64).powf(0.75);
        let total: f64 = eligible.iter().map(|&u| weight(u)).sum();
        let chi2: f64 = eligible
            .iter()
            .map(|&u| {
                let expected = draws as f64 * weight(u) / total;
                (counts[u] as f64 - expected).powi(2) / expected
            })
            .sum();
        // 7 degrees of freedom, p = 0.01
        assert!(chi2 < 18.475, "chi2 = {chi2}");
        let uniform_rate = 1.0 / eligible.len() as f64;
        assert!(counts[5] as f64 / draws as f64 > uniform_rate);
    }

    #[test]
    fn negatives_are_never_neighbors() {
        let mut rng = seeded(11);
        for trial in 0..100 {
            let n = 12;
            let pairs: Vec<(usize, usize)> = (0..20)
                .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
                .collect();
            let g = SnapshotGraph::from_undirected(n, pairs).unwrap();
            for v in 0..n {
                if g.degree(v) + 1 == n {
                    continue;
                }
                let dist = if trial % 2 == 0 { NegativeDistribution::Uniform } else { NegativeDistribution::Degree34 };
                for u in sample_negatives(&g, v, 10, dist, &mut rng).unwrap() {
                    assert!(u != v && !g.has_edge(v, u));
                }
            }
        }
    }

    #[test]
    fn minibatches() {
        assert_eq!(sample_minibatch(7, 7, &mut seeded(1)).unwrap(), (0..7).collect::<Vec<_>>());
        assert_eq!(
            sample_minibatch(50, 8, &mut seeded(3)).unwrap(),
            sample_minibatch(50, 8, &mut seeded(3)).unwrap()
        );
        assert!(sample_minibatch(5, 0, &mut seeded(1)).is_err());
        assert!(sample_minibatch(5, 6, &mut seeded(1)).is_err());
        let batches = epoch_batches(23, 5, &mut seeded(2)).unwrap();
        assert_eq!(batches.len(), 5);
        let all: BTreeSet<usize> = batches.iter().flatten().copied().collect();
        assert_eq!(all.len(), 23);
        assert_eq!(batches.iter().map(Vec::len).sum::<usize>(), 23);
    }

    #[test]
    fn positives_and_walks() {
        let g = star(8);
        let mut rng = seeded(4);
        assert_eq!(sample_positives(&g, 3, 10, &mut rng), vec![0]);
        let p = sample_positives(&g, 0, 3, &mut rng);
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|&u| g.has_edge(0, u)));
        for _ in 0..50 {
            let u = random_walk_positive(&g, 2, &mut rng).unwrap();
            assert_ne!(u, 2);
        }
        assert_eq!(random_walk_positive(&SnapshotGraph::empty(3), 0, &mut rng), None);
    }
}
