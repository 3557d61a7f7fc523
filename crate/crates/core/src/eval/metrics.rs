//! Attribute error metrics and ranking metrics for link prediction.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::tape::sigmoid;
use crate::autodiff::Tensor;
use crate::error::{CoevoError, Result};
use crate::graph::SnapshotGraph;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttributeEvalReport {
    pub mae: f64,
    pub rmse: f64,
    /// Whether the near-zero subsampling protocol was applied.
    pub subsampled: bool,
    pub kept_near_zero: usize,
    pub kept_large: usize,
    pub entries: usize,
}

/// MAE and RMSE over paired values.
pub fn mae_rmse(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(CoevoError::Contract(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let e = p - t;
        abs += e.abs();
        sq += e * e;
    }
    let (mae, rmse) = (abs / n, (sq / n).sqrt());
    debug_assert!(rmse >= mae * (1.0 - 1e-12), "rmse {rmse} < mae {mae}");
    Ok((mae, rmse))
}

/// Compares predicted attributes with the truth. With `subsample`, all
/// entries predicted above 1 are kept together with an equal number drawn
/// uniformly from entries predicted at most `near_zero`.
pub fn eval_attributes<R: Rng + ?Sized>(
    pred: &Tensor,
    truth: &Tensor,
    subsample: bool,
    near_zero: f64,
    rng: &mut R,
) -> Result<AttributeEvalReport> {
    if pred.shape() != truth.shape() {
        return Err(CoevoError::shape("eval_attributes", pred.shape(), truth.shape()));
    }
    let (p, t) = (pred.values(), truth.values());
    let large: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 1.0).collect();
    if subsample && !large.is_empty() {
        let small: Vec<usize> = (0..p.len()).filter(|&i| p[i] <= near_zero).collect();
        let take = large.len().min(small.len());
        let mut keep: Vec<usize> = index::sample(rng, small.len(), take).into_iter().map(|i| small[i]).collect();
        keep.extend(&large);
        keep.sort_unstable();
        let kp: Vec<f64> = keep.iter().map(|&i| p[i]).collect();
        let kt: Vec<f64> = keep.iter().map(|&i| t[i]).collect();
        let (mae, rmse) = mae_rmse(&kp, &kt)?;
        return Ok(AttributeEvalReport {
            mae,
            rmse,
            subsampled: true,
            kept_near_zero: take,
            kept_large: large.len(),
            entries: keep.len(),
        });
    }
    if subsample {
        log::warn!("no prediction exceeds 1; evaluating all attribute entries");
    }
    let (mae, rmse) = mae_rmse(p, t)?;
    Ok(AttributeEvalReport {
        mae,
        rmse,
        subsampled: false,
        kept_near_zero: 0,
        kept_large: large.len(),
        entries: p.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct LabeledPair {
    pub u: usize,
    pub v: usize,
    pub label: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScoredPair {
    pub u: usize,
    pub v: usize,
    pub label: bool,
    pub score: f64,
}

/// All edges of `graph` as positives plus `ratio` times as many uniformly
/// drawn non-edges, sorted by pair.
pub fn build_link_candidates<R: Rng + ?Sized>(graph: &SnapshotGraph, ratio: f64, rng: &mut R) -> Result<Vec<LabeledPair>> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(CoevoError::Config(format!("negative ratio must be positive, got {ratio}")));
    }
    let n = graph.node_count();
    let positives: Vec<(usize, usize)> = graph.undirected_edges().collect();
    let all_pairs = n * n.saturating_sub(1) / 2;
    let non_edges = all_pairs - positives.len();
    if non_edges == 0 {
        return Err(CoevoError::Sampling("the graph has no non-edges".into()));
    }
    let mut wanted = (positives.len() as f64 * ratio).round() as usize;
    if wanted > non_edges {
        log::warn!("only {non_edges} non-edges available, {wanted} requested");
        wanted = non_edges;
    }
    let negatives: Vec<(usize, usize)> = if wanted * 2 <= non_edges {
        let mut seen = HashSet::with_capacity(wanted);
        let mut out = Vec::with_capacity(wanted);
        while out.len() < wanted {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            let pair = (a.min(b), a.max(b));
            if a != b && !graph.has_edge(a, b) && seen.insert(pair) {
                out.push(pair);
            }
        }
        out
    } else {
        let pool: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .filter(|&(a, b)| !graph.has_edge(a, b))
            .collect();
        index::sample(rng, pool.len(), wanted).into_iter().map(|i| pool[i]).collect()
    };
    let mut pairs: Vec<LabeledPair> = positives
        .into_iter()
        .map(|(u, v)| LabeledPair { u, v, label: true })
        .chain(negatives.into_iter().map(|(u, v)| LabeledPair { u, v, label: false }))
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// `σ(h_uᵀ h_v)` for each pair, rows of `h` being node embeddings.
pub fn score_links(h: &Tensor, pairs: &[LabeledPair]) -> Vec<ScoredPair> {
    pairs
        .iter()
        .map(|p| {
            let dot: f64 = h.row(p.u).iter().zip(h.row(p.v)).map(|(a, b)| a * b).sum();
            ScoredPair {
                u: p.u,
                v: p.v,
                label: p.label,
                score: sigmoid(dot),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Mode {
    /// Threshold maximizing F1 over the candidates.
    #[default]
    Best,
    /// Scores at or above 0.5 are predicted links.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkEvalReport {
    pub pr_auc: f64,
    pub f1: f64,
    pub f1_threshold: f64,
    /// Keyed by `k`; a `k` beyond the candidate count is omitted.
    pub precision_at: BTreeMap<usize, f64>,
    pub positives: usize,
    pub negatives: usize,
}

fn f1_score(tp: usize, fp: usize, positives: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / positives as f64;
    2.0 * precision * recall / (precision + recall)
}

/// PR-AUC by trapezoids over all distinct thresholds, F1 and precision at `ks`.
pub fn link_metrics(scored: &[ScoredPair], ks: &[usize], mode: F1Mode) -> Result<LinkEvalReport> {
    let positives = scored.iter().filter(|p| p.label).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(CoevoError::Contract(format!(
            "link metrics need both classes, got {positives} positives and {negatives} negatives"
        )));
    }
    if let Some(p) = scored.iter().find(|p| p.score.is_nan()) {
        return Err(CoevoError::Contract(format!("NaN score for pair ({}, {})", p.u, p.v)));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].score.total_cmp(&scored[a].score));

    // One point per distinct threshold, taken after its whole tie group.
    let mut points: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (rank, &i) in order.iter().enumerate() {
        if scored[i].label {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order
            .get(rank + 1)
            .is_none_or(|&j| scored[j].score != scored[i].score);
        if last_of_group {
            points.push((scored[i].score, tp, fp));
        }
    }

    let p = positives as f64;
    let precision = |tp: usize, fp: usize| tp as f64 / (tp + fp) as f64;
    let mut auc = 0.0;
    let (mut prev_recall, mut prev_precision) = (0.0, precision(points[0].1, points[0].2));
    for &(_, tp, fp) in &points {
        let (r, pr) = (tp as f64 / p, precision(tp, fp));
        auc += (r - prev_recall) * (pr + prev_precision) / 2.0;
        prev_recall = r;
        prev_precision = pr;
    }

    let (f1, f1_threshold) = match mode {
        F1Mode::Best => points.iter().fold((0.0, points[0].0), |best, &(s, tp, fp)| {
            let f = f1_score(tp, fp, positives);
            if f > best.0 {
                (f, s)
            } else {
                best
            }
        }),
        F1Mode::Fixed => {
            let tp = scored.iter().filter(|p| p.label && p.score >= 0.5).count();
            let fp = scored.iter().filter(|p| !p.label && p.score >= 0.5).count();
            (f1_score(tp, fp, positives), 0.5)
        }
    };

    let mut precision_at = BTreeMap::new();
    for &k in ks {
        if k == 0 || k > scored.len() {
            log::warn!("P@{k} omitted: {} candidates", scored.len());
            continue;
        }
        let hits = order[..k].iter().filter(|&&i| scored[i].label).count();
        precision_at.insert(k, hits as f64 / k as f64);
    }
    Ok(LinkEvalReport {
        pr_auc: auc,
        f1,
        f1_threshold,
        precision_at,
        positives,
        negatives,
    })
}
