//! Link recurrence, triad closure and attribute/structure correlation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use serde::Serialize;

use crate::error::{CoevoError, Result};
use crate::graph::{DynamicGraphSequence, SnapshotGraph};

/// Counts per interval `Δ`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Histogram {
    pub counts: BTreeMap<usize, usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn proportions(&self) -> Vec<(usize, f64)> {
        let total = self.total() as f64;
        self.counts.iter().map(|(&d, &c)| (d, c as f64 / total)).collect()
    }

    pub fn proportion(&self, delta: usize) -> f64 {
        match self.counts.get(&delta) {
            Some(&c) => c as f64 / self.total() as f64,
            None => 0.0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta,proportion\n");
        for (d, p) in self.proportions() {
            let _ = writeln!(out, "{d},{p}");
        }
        out
    }
}

fn check_range(seq: &DynamicGraphSequence, range: &RangeInclusive<usize>) -> Result<()> {
    if range.is_empty() || *range.end() >= seq.len() {
        return Err(CoevoError::Config(format!(
            "step range {range:?} outside 0..{}",
            seq.len()
        )));
    }
    Ok(())
}

/// For each edge at `t` in `range` seen at some earlier step, the smallest
/// gap back to an earlier occurrence.
pub fn link_recurrence_histogram(seq: &DynamicGraphSequence, range: RangeInclusive<usize>) -> Result<Histogram> {
    check_range(seq, &range)?;
    let mut last_seen: HashMap<(usize, usize), usize> = HashMap::new();
    let mut hist = Histogram::default();
    for t in 0..=*range.end() {
        for edge in seq.graph(t).undirected_edges() {
            if let Some(prev) = last_seen.insert(edge, t) {
                if range.contains(&t) {
                    *hist.counts.entry(t - prev).or_default() += 1;
                }
            }
        }
    }
    Ok(hist)
}

fn share_neighbor(g: &SnapshotGraph, u: usize, v: usize) -> bool {
    let (a, b) = (g.neighbors(u), g.neighbors(v));
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// For each edge first appearing at `t` in `range`, the smallest `Δ` such
/// that its endpoints had a common neighbor at `t - Δ`. Edges never closable
/// are left out.
pub fn triad_closure_histogram(seq: &DynamicGraphSequence, range: RangeInclusive<usize>) -> Result<Histogram> {
    check_range(seq, &range)?;
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut hist = Histogram::default();
    for t in 0..=*range.end() {
        let fresh: Vec<(usize, usize)> = seq.graph(t).undirected_edges().filter(|e| !seen.contains(e)).collect();
        if range.contains(&t) {
            for &(u, v) in &fresh {
                if let Some(delta) = (1..=t).find(|&d| share_neighbor(seq.graph(t - d), u, v)) {
                    *hist.counts.entry(delta).or_default() += 1;
                }
            }
        }
        seen.extend(fresh);
    }
    Ok(hist)
}

/// `|A ∩ B| / |A ∪ B|` over sorted distinct slices; two empty sets count as identical.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut common) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    common as f64 / (a.len() + b.len() - common) as f64
}

/// Pearson correlation, or `None` when either series has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Per node, the correlation between step-to-step Jaccard similarity of its
/// attribute support and of its neighbor set.
pub fn attribute_structure_correlation(seq: &DynamicGraphSequence) -> Result<Vec<Option<f64>>> {
    if seq.len() < 3 {
        return Err(CoevoError::Config(format!(
            "correlation needs at least 3 snapshots, got {}",
            seq.len()
        )));
    }
    let support = |t: usize, v: usize| -> Vec<usize> { seq.attributes(t).support(v).collect() };
    let neighbors = |t: usize, v: usize| -> Vec<usize> { seq.graph(t).neighbors(v).iter().map(|&u| u as usize).collect() };
    Ok((0..seq.node_count())
        .map(|v| {
            let (mut ja, mut js) = (Vec::new(), Vec::new());
            for t in 1..seq.len() {
                ja.push(jaccard(&support(t, v), &support(t - 1, v)));
                js.push(jaccard(&neighbors(t, v), &neighbors(t - 1, v)));
            }
            pearson(&ja, &js)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationSummary {
    pub nodes: usize,
    pub defined: usize,
    pub mean: Option<f64>,
    pub fraction_above_0_3: Option<f64>,
}

impl CorrelationSummary {
    pub fn new(values: &[Option<f64>]) -> Self {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        let k = defined.len() as f64;
        CorrelationSummary {
            nodes: values.len(),
            defined: defined.len(),
            mean: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / k),
            fraction_above_0_3: (!defined.is_empty()).then(|| defined.iter().filter(|&&c| c > 0.3).count() as f64 / k),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoEvolutionReport {
    pub recurrence: Histogram,
    pub triad_closure: Histogram,
    pub correlations: Vec<Option<f64>>,
    pub correlation_summary: CorrelationSummary,
}

/// All three diagnostics over steps `1..=T`.
pub fn analyze(seq: &DynamicGraphSequence) -> Result<CoEvolutionReport> {
    let correlations = attribute_structure_correlation(seq)?;
    let last = seq.len() - 1;
    Ok(CoEvolutionReport {
        recurrence: link_recurrence_histogram(seq, 1..=last)?,
        triad_closure: triad_closure_histogram(seq, 1..=last)?,
        correlation_summary: CorrelationSummary::new(&correlations),
        correlations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_synthetic, AttributeMatrix, Snapshot, SyntheticSpec};
    use crate::rng::seeded;
    use rand::Rng;

    fn sequence(graphs: Vec<SnapshotGraph>) -> DynamicGraphSequence {
        let n = graphs[0].node_count();
        let snapshots = graphs
            .into_iter()
            .map(|graph| Snapshot {
                graph,
                attributes: AttributeMatrix::zeros(n, 1),
            })
            .collect();
        DynamicGraphSequence::new(snapshots, None, None).unwrap()
    }

    fn brute_triads(seq: &DynamicGraphSequence, range: RangeInclusive<usize>) -> Histogram {
        let n = seq.node_count();
        let mut hist = Histogram::default();
        for t in range {
            for u in 0..n {
                for v in u + 1..n {
                    if !seq.graph(t).has_edge(u, v) || (0..t).any(|s| seq.graph(s).has_edge(u, v)) {
                        continue;
                    }
                    let closable = |d: usize| (0..n).any(|w| seq.graph(t - d).has_edge(u, w) && seq.graph(t - d).has_edge(w, v));
                    if let Some(d) = (1..=t).find(|&d| closable(d)) {
                        *hist.counts.entry(d).or_default() += 1;
                    }
                }
            }
        }
        hist
    }

    fn brute_recurrence(seq: &DynamicGraphSequence, range: RangeInclusive<usize>) -> Histogram {
        let n = seq.node_count();
        let mut hist = Histogram::default();
        for t in range {
            for u in 0..n {
                for v in u + 1..n {
                    if seq.graph(t).has_edge(u, v) {
                        if let Some(d) = (1..=t).find(|&d| seq.graph(t - d).has_edge(u, v)) {
                            *hist.counts.entry(d).or_default() += 1;
                        }
                    }
                }
            }
        }
        hist
    }

    #[test]
    fn recurrence_examples() {
        let g = |e: &[(usize, usize)]| SnapshotGraph::from_undirected(4, e.iter().copied()).unwrap();
        let steady = sequence(vec![g(&[(0, 1)]), g(&[(0, 1)]), g(&[(0, 1)])]);
        let h = link_recurrence_histogram(&steady, 1..=2).unwrap();
        assert_eq!(h.proportions(), vec![(1, 1.0)]);
        let gap = sequence(vec![g(&[(0, 1)]), g(&[]), g(&[]), g(&[(0, 1)])]);
        assert_eq!(link_recurrence_histogram(&gap, 1..=3).unwrap().counts, BTreeMap::from([(3, 1)]));
        assert!(link_recurrence_histogram(&gap, 1..=4).is_err());
        assert_eq!(h.to_csv(), "delta,proportion\n1,1\n");
    }

    #[test]
    fn triad_examples() {
        let g = |e: &[(usize, usize)]| SnapshotGraph::from_undirected(4, e.iter().copied()).unwrap();
        let path = sequence(vec![g(&[(0, 1), (1, 2)]), g(&[(0, 2)])]);
        assert_eq!(triad_closure_histogram(&path, 1..=1).unwrap().counts, BTreeMap::from([(1, 1)]));
        let lonely = sequence(vec![g(&[]), g(&[(0, 3)])]);
        assert_eq!(triad_closure_histogram(&lonely, 1..=1).unwrap().total(), 0);
    }

    #[test]
    fn optimized_histograms_match_brute_force() {
        let mut rng = seeded(8);
        for _ in 0..20 {
            let graphs = (0..6)
                .map(|_| {
                    let pairs: Vec<(usize, usize)> =
                        (0..18).map(|_| (rng.random_range(0..15), rng.random_range(0..15))).collect();
                    SnapshotGraph::from_undirected(15, pairs).unwrap()
                })
                .collect();
            let seq = sequence(graphs);
            let tri = triad_closure_histogram(&seq, 1..=5).unwrap();
            assert_eq!(tri, brute_triads(&seq, 1..=5));
            let rec = link_recurrence_histogram(&seq, 2..=5).unwrap();
            assert_eq!(rec, brute_recurrence(&seq, 2..=5));
            for h in [tri, rec] {
                if h.total() > 0 {
                    let mass: f64 = h.proportions().iter().map(|p| p.1).sum();
                    assert!((mass - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lag_two_generator_recurs_at_two() {
        let seq = generate_synthetic(&SyntheticSpec {
            n: 60,
            horizon: 20,
            lag_weights: vec![0.0, 1.0, 0.0],
            ..Default::default()
        })
        .unwrap();
        let h = link_recurrence_histogram(&seq, 1..=20).unwrap();
        assert!(h.proportion(2) > 0.8, "{:?}", h.proportions());
    }

    #[test]
    fn correlation_examples() {
        let x = [1.0, 0.5, 0.25];
        let y = [0.9, 0.4, 0.2];
        let (mx, my) = (1.75 / 3.0, 1.5 / 3.0);
        let num: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let dx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let dy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        assert!((pearson(&x, &y).unwrap() - num / (dx * dy).sqrt()).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &x), None);
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(jaccard(&[1, 2, 3], &[2, 3, 4]), 0.5);
        assert_eq!(jaccard(&[], &[]), 1.0);
    }

    #[test]
    fn node_correlations() {
        // Node 0 gains and loses attributes and neighbors in lockstep; node 3 never changes.
        let n = 4;
        let plan: [(&[usize], &[(usize, usize)]); 4] = [
            (&[0, 1], &[(0, 1), (0, 2)]),
            (&[0, 1], &[(0, 1), (0, 2)]),
            (&[0], &[(0, 1)]),
            (&[2], &[(0, 2)]),
        ];
        let snapshots = plan
            .iter()
            .map(|(attrs, edges)| {
                let mut x = AttributeMatrix::zeros(n, 3);
                for &a in *attrs {
                    x.set(0, a, 1.0).unwrap();
                }
                x.set(3, 0, 1.0).unwrap();
                Snapshot {
                    graph: SnapshotGraph::from_undirected(n, edges.iter().copied()).unwrap(),
                    attributes: x,
                }
            })
            .collect();
        let seq = DynamicGraphSequence::new(snapshots, None, None).unwrap();
        let c = attribute_structure_correlation(&seq).unwrap();
        assert!((c[0].unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(c[3], None);
        let summary = CorrelationSummary::new(&c);
        assert_eq!(summary.defined, c.iter().flatten().count());
        assert!(c.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
    }
}
