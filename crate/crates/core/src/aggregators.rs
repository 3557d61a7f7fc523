//! Depth-`L` structural aggregation over one snapshot.
//!
//! Each layer maps the previous depth's node states to `d` dimensions and
//! the result is l2-normalized per node before it feeds the next layer. The
//! output row of a node concatenates its normalized states at depths
//! `1..=L`, giving `d * L` columns.
//!
//! Batches are evaluated on their receptive field only: depth `l` is
//! computed for the nodes needed at depth `l + 1` and their neighbors.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{glorot, uniform, SparseMatrix, Tape, Tensor};
use crate::error::{CoevoError, Result};
use crate::graph::SnapshotGraph;
use crate::rng::{stream, PortableRng};

pub const GAT_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Gcn,
    Gat,
    #[default]
    SageMean,
}

impl AggregatorKind {
    /// Rows of the layer weight for a given input width.
    pub fn weight_rows(self, input_dim: usize) -> usize {
        match self {
            AggregatorKind::SageMean => 2 * input_dim,
            AggregatorKind::Gcn | AggregatorKind::Gat => input_dim,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub weight: Tensor,
    /// `2d x 1` scoring vector, gat only.
    pub attention: Option<Tensor>,
}

impl LayerParams {
    pub fn init(kind: AggregatorKind, input_dim: usize, d: usize, rng: &mut PortableRng) -> Self {
        let weight = glorot(kind.weight_rows(input_dim), d, rng);
        let attention = (kind == AggregatorKind::Gat).then(|| uniform(2 * d, 1, 0.1, rng));
        LayerParams { weight, attention }
    }
}

/// One stack's aggregation function.
#[derive(Clone, Copy)]
pub struct Aggregator<'a> {
    pub kind: AggregatorKind,
    pub layers: &'a [LayerParams],
    /// Neighbor sample size per layer for `sage_mean`; the last entry repeats.
    pub sample_sizes: &'a [usize],
}

/// Per-layer neighborhood structure of a receptive field.
struct Level {
    /// Nodes whose state this layer produces; a prefix of the input level.
    targets: usize,
    /// Source rows (into the input level) and coefficients, per target.
    sources: Vec<Vec<(usize, f64)>>,
}

impl<'a> Aggregator<'a> {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    fn sample_size(&self, layer: usize) -> usize {
        self.sample_sizes
            .get(layer)
            .or(self.sample_sizes.last())
            .copied()
            .unwrap_or(usize::MAX)
    }

    /// Neighbors of `v` used at `layer` (0-based), with their coefficients.
    /// For gcn and gat `v` itself comes first.
    fn sources(&self, graph: &SnapshotGraph, v: usize, layer: usize, key: &[u64]) -> Vec<(usize, f64)> {
        let nb = graph.neighbors(v);
        match self.kind {
            AggregatorKind::Gcn => {
                let dv = (graph.degree(v) + 1) as f64;
                std::iter::once(v)
                    .chain(nb.iter().map(|&u| u as usize))
                    .map(|u| (u, 1.0 / (dv * (graph.degree(u) + 1) as f64).sqrt()))
                    .collect()
            }
            AggregatorKind::Gat => std::iter::once(v)
                .chain(nb.iter().map(|&u| u as usize))
                .map(|u| (u, 1.0))
                .collect(),
            AggregatorKind::SageMean => {
                let s = self.sample_size(layer);
                let picked: Vec<usize> = if nb.len() <= s {
                    nb.iter().map(|&u| u as usize).collect()
                } else {
                    let mut path = key.to_vec();
                    path.extend([layer as u64, v as u64]);
                    let mut rng = stream(path[0], &path[1..]);
                    (0..s).map(|_| nb[rng.random_range(0..nb.len())] as usize).collect()
                };
                let w = 1.0 / picked.len().max(1) as f64;
                picked.into_iter().map(|u| (u, w)).collect()
            }
        }
    }

    /// Builds node lists per depth, outermost first. `lists[0]` holds the
    /// raw-attribute inputs and `lists[L]` the requested nodes; every list
    /// starts with the next one in the same order.
    fn receptive_field(&self, graph: &SnapshotGraph, nodes: &[usize], key: &[u64]) -> (Vec<Vec<usize>>, Vec<Level>) {
        let n = graph.node_count();
        let depth = self.depth();
        let mut lists = vec![Vec::new(); depth + 1];
        lists[depth] = nodes.to_vec();
        let mut raw_levels = Vec::with_capacity(depth);
        for layer in (0..depth).rev() {
            let targets = &lists[layer + 1];
            let mut position = vec![usize::MAX; n];
            let mut input = targets.clone();
            for (i, &v) in input.iter().enumerate() {
                position[v] = i;
            }
            let mut sources = Vec::with_capacity(targets.len());
            for &v in targets {
                let src = self.sources(graph, v, layer, key);
                let mapped = src
                    .into_iter()
                    .map(|(u, c)| {
                        if position[u] == usize::MAX {
                            position[u] = input.len();
                            input.push(u);
                        }
                        (position[u], c)
                    })
                    .collect();
                sources.push(mapped);
            }
            raw_levels.push(Level {
                targets: targets.len(),
                sources,
            });
            lists[layer] = input;
        }
        raw_levels.reverse();
        (lists, raw_levels)
    }

    fn layer(&self, tape: &Tape, params: &LayerParams, level: &Level, input: &Tensor) -> Result<Tensor> {
        let m = level.targets;
        let out = match self.kind {
            AggregatorKind::Gcn => {
                let a = Arc::new(SparseMatrix::from_rows(input.rows(), &level.sources));
                let mixed = tape.spmm(&a, input)?;
                tape.relu(&tape.matmul(&mixed, &params.weight)?)
            }
            AggregatorKind::SageMean => {
                let own: Vec<usize> = (0..m).collect();
                let own = tape.gather_rows(input, own)?;
                let a = Arc::new(SparseMatrix::from_rows(input.rows(), &level.sources));
                let mean = tape.spmm(&a, input)?;
                let both = tape.concat_cols(&[&own, &mean])?;
                tape.relu(&tape.matmul(&both, &params.weight)?)
            }
            AggregatorKind::Gat => {
                let attention = params
                    .attention
                    .as_ref()
                    .ok_or_else(|| CoevoError::Contract("gat layer without attention vector".into()))?;
                let d = params.weight.cols();
                let z = tape.matmul(input, &params.weight)?;
                let a_self = tape.gather_rows(attention, (0..d).collect::<Vec<_>>())?;
                let a_other = tape.gather_rows(attention, (d..2 * d).collect::<Vec<_>>())?;
                let p = tape.matmul(&z, &a_self)?;
                let q = tape.matmul(&z, &a_other)?;
                let mut dst = Vec::new();
                let mut src = Vec::new();
                let mut offsets = vec![0];
                for (i, s) in level.sources.iter().enumerate() {
                    for &(u, _) in s {
                        dst.push(i);
                        src.push(u);
                    }
                    offsets.push(src.len());
                }
                let scores = tape.add(&tape.gather_rows(&p, dst)?, &tape.gather_rows(&q, src.clone())?)?;
                let scores = tape.leaky_relu(&scores, GAT_SLOPE);
                let offsets: Arc<[usize]> = offsets.into();
                let alpha = tape.segment_softmax(&scores, offsets.clone())?;
                let messages = tape.scale_rows(&tape.gather_rows(&z, src)?, &alpha)?;
                tape.relu(&tape.segment_sum(&messages, offsets)?)
            }
        };
        Ok(tape.l2_normalize_rows(&out))
    }

    /// Rows `[h_v^(1); ...; h_v^(L)]` for each requested node, in order.
    ///
    /// `x` is the dense `n x r` attribute matrix of the snapshot; `key`
    /// identifies the random stream for neighbor sampling. A node's row does
    /// not depend on which other nodes share the batch.
    pub fn batch(&self, tape: &Tape, graph: &SnapshotGraph, x: &Tensor, nodes: &[usize], key: &[u64]) -> Result<Tensor> {
        if self.layers.is_empty() {
            return Err(CoevoError::Contract("aggregation needs at least one layer".into()));
        }
        if x.rows() != graph.node_count() {
            return Err(CoevoError::shape("aggregate", x.shape(), [graph.node_count(), x.cols()]));
        }
        if let Some(&v) = nodes.iter().find(|&&v| v >= graph.node_count()) {
            return Err(CoevoError::Contract(format!("node {v} out of range")));
        }
        if key.is_empty() {
            return Err(CoevoError::Contract("empty random-stream key".into()));
        }
        let mut unique = Vec::with_capacity(nodes.len());
        let mut slot = vec![usize::MAX; graph.node_count()];
        let rows: Vec<usize> = nodes
            .iter()
            .map(|&v| {
                if slot[v] == usize::MAX {
                    slot[v] = unique.len();
                    unique.push(v);
                }
                slot[v]
            })
            .collect();

        let (lists, levels) = self.receptive_field(graph, &unique, key);
        let mut state = x.select_rows(&lists[0]);
        let mut blocks = Vec::with_capacity(self.depth());
        for (params, level) in self.layers.iter().zip(&levels) {
            state = self.layer(tape, params, level, &state)?;
            blocks.push(state.clone());
        }
        let u = unique.len();
        let heads: Vec<Tensor> = blocks
            .iter()
            .map(|b| if b.rows() == u { Ok(b.clone()) } else { tape.gather_rows(b, (0..u).collect::<Vec<_>>()) })
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor> = heads.iter().collect();
        let stacked = if refs.len() == 1 { heads[0].clone() } else { tape.concat_cols(&refs)? };
        if rows.iter().enumerate().all(|(i, &r)| i == r) && rows.len() == u {
            Ok(stacked)
        } else {
            tape.gather_rows(&stacked, rows)
        }
    }

    /// Column vector `ĥ_v` of length `d * L`.
    pub fn single(&self, tape: &Tape, graph: &SnapshotGraph, x: &Tensor, v: usize, key: &[u64]) -> Result<Tensor> {
        let row = self.batch(tape, graph, x, &[v], key)?;
        Ok(tape.transpose(&row))
    }
}
