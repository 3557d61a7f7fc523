use std::ops::RangeInclusive;
use std::sync::OnceLock;

use super::snapshot::{AttributeMatrix, SnapshotGraph};
use crate::autodiff::Tensor;
use crate::error::{CoevoError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub graph: SnapshotGraph,
    pub attributes: AttributeMatrix,
}

/// Snapshots `(G^t, X^t)` for `t = 0..=T` over a shared node universe.
#[derive(Clone, Debug)]
pub struct DynamicGraphSequence {
    n: usize,
    r: usize,
    snapshots: Vec<Snapshot>,
    window: Option<f64>,
    ids: Vec<String>,
    dense: Vec<OnceLock<Tensor>>,
}

impl PartialEq for DynamicGraphSequence {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.r == other.r
            && self.snapshots == other.snapshots
            && self.window.map(f64::to_bits) == other.window.map(f64::to_bits)
            && self.ids == other.ids
    }
}

impl DynamicGraphSequence {
    /// Validates that every snapshot shares `n` and `r`. Node ids default to
    /// `"0".."n-1"` when `ids` is `None`.
    pub fn new(snapshots: Vec<Snapshot>, window: Option<f64>, ids: Option<Vec<String>>) -> Result<Self> {
        let first = snapshots
            .first()
            .ok_or_else(|| CoevoError::Contract("a sequence needs at least one snapshot".into()))?;
        let n = first.graph.node_count();
        let r = first.attributes.attribute_count();
        for (t, s) in snapshots.iter().enumerate() {
            if s.graph.node_count() != n || s.attributes.node_count() != n || s.attributes.attribute_count() != r {
                return Err(CoevoError::Contract(format!(
                    "snapshot {t} does not share n={n}, r={r}"
                )));
            }
        }
        let ids = ids.unwrap_or_else(|| (0..n).map(|i| i.to_string()).collect());
        if ids.len() != n {
            return Err(CoevoError::Contract(format!("{} ids for {n} nodes", ids.len())));
        }
        let dense = (0..snapshots.len()).map(|_| OnceLock::new()).collect();
        Ok(DynamicGraphSequence {
            n,
            r,
            snapshots,
            window,
            ids,
            dense,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn attribute_count(&self) -> usize {
        self.r
    }

    /// Number of snapshots, `T + 1`.
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Index of the last snapshot, `T`.
    pub fn horizon(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn window(&self) -> Option<f64> {
        self.window
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn graph(&self, t: usize) -> &SnapshotGraph {
        &self.snapshots[t].graph
    }

    pub fn attributes(&self, t: usize) -> &AttributeMatrix {
        &self.snapshots[t].attributes
    }

    /// Dense `n x r` attribute matrix of snapshot `t`, built once.
    pub fn dense_attributes(&self, t: usize) -> &Tensor {
        self.dense[t].get_or_init(|| {
            Tensor::new(self.n, self.r, self.snapshots[t].attributes.dense())
                .expect("dense attribute shape")
        })
    }

    /// Snapshots `range`, re-indexed from zero.
    pub fn range(&self, range: RangeInclusive<usize>) -> Result<Self> {
        let (a, b) = (*range.start(), *range.end());
        if a > b || b > self.horizon() {
            return Err(CoevoError::Contract(format!(
                "range {a}..{b} outside snapshots 0..{}",
                self.horizon()
            )));
        }
        Self::new(self.snapshots[a..=b].to_vec(), self.window, Some(self.ids.clone()))
    }

    /// First `count` snapshots.
    pub fn prefix(&self, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(CoevoError::Contract("empty prefix".into()));
        }
        self.range(0..=count - 1)
    }

    pub fn with_attributes(self, attributes: Vec<AttributeMatrix>) -> Result<Self> {
        if attributes.len() != self.snapshots.len() {
            return Err(CoevoError::Contract(format!(
                "{} attribute matrices for {} snapshots",
                attributes.len(),
                self.snapshots.len()
            )));
        }
        let snapshots = self
            .snapshots
            .into_iter()
            .zip(attributes)
            .map(|(s, attributes)| Snapshot {
                graph: s.graph,
                attributes,
            })
            .collect();
        Self::new(snapshots, self.window, Some(self.ids))
    }
}
