//! Evolutionary embedding generation with S-stack temporal self-attention.
//!
//! `h_v^t` fuses the `k = min(t, S)` pairs `(h_v^{t-s}, ĥ_v^{t-s})`, where
//! `ĥ_v^{t-s}` is stack `s`'s structural aggregation over snapshot `t - s`.
//! Each pair is transformed by `σ(W_s [h; ĥ])`; the attention variant mixes
//! the transforms with `softmax_s(h^{t-s}ᵀ Γ ĥ_s)`, the max and avg variants
//! pool them elementwise. The fused vector is l2-normalized. Only snapshots
//! before `t` are read, so the same cascade yields `H^{T+1}` for forecasting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregators::{Aggregator, AggregatorKind, LayerParams};
use crate::autodiff::{glorot, Tape, Tensor};
use crate::error::{CoevoError, Result};
use crate::graph::DynamicGraphSequence;
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &Tape, x: &Tensor) -> Tensor {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionVariant {
    #[default]
    Attention,
    Max,
    Avg,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    /// Temporal evolution span `S`.
    pub stacks: usize,
    /// Structural depth `L`.
    pub depth: usize,
    /// Embedding size `d`.
    pub dim: usize,
    /// Attribute count `r`.
    pub attrs: usize,
    pub aggregator: AggregatorKind,
    pub fusion: FusionVariant,
    pub fusion_activation: Activation,
    pub decode_activation: Activation,
    pub sample_sizes: Vec<usize>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stacks == 0 || self.depth == 0 || self.dim == 0 {
            return Err(CoevoError::Config(format!(
                "S, L and d must be positive (S={}, L={}, d={})",
                self.stacks, self.depth, self.dim
            )));
        }
        if self.attrs == 0 {
            return Err(CoevoError::Config("the sequence has no attributes".into()));
        }
        if self.aggregator == AggregatorKind::SageMean && self.sample_sizes.contains(&0) {
            return Err(CoevoError::Config("sample sizes must be positive".into()));
        }
        Ok(())
    }

    /// Width `d * L` of a stacked structural embedding.
    pub fn stacked_dim(&self) -> usize {
        self.dim * self.depth
    }
}

/// All trainable tensors of one model.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub spec: ModelSpec,
    /// `W_s`, each `d x (d + dL)`.
    pub fusion: Vec<Tensor>,
    /// `Γ`, `d x dL`, shared by all stacks.
    pub gamma: Tensor,
    /// `M`, `r x d`.
    pub decode: Tensor,
    /// Aggregator layers per stack.
    pub stacks: Vec<Vec<LayerParams>>,
}

impl ModelParams {
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded(derive_seed(seed, &[0x1417]));
        let (d, dl) = (spec.dim, spec.stacked_dim());
        let fusion = (0..spec.stacks).map(|_| glorot(d, d + dl, &mut rng)).collect();
        let gamma = glorot(d, dl, &mut rng);
        let decode = glorot(spec.attrs, d, &mut rng);
        let stacks = (0..spec.stacks)
            .map(|_| {
                (0..spec.depth)
                    .map(|l| LayerParams::init(spec.aggregator, if l == 0 { spec.attrs } else { d }, d, &mut rng))
                    .collect()
            })
            .collect();
        Ok(ModelParams {
            spec,
            fusion,
            gamma,
            decode,
            stacks,
        })
    }

    /// Parameter names in canonical order.
    pub fn names(&self) -> Vec<String> {
        let mut out: Vec<String> = (1..=self.spec.stacks).map(|s| format!("W{s}")).collect();
        out.push("Gamma".into());
        out.push("M".into());
        for (s, layers) in self.stacks.iter().enumerate() {
            for (l, p) in layers.iter().enumerate() {
                out.push(format!("agg{}.layer{}.weight", s + 1, l + 1));
                if p.attention.is_some() {
                    out.push(format!("agg{}.layer{}.attention", s + 1, l + 1));
                }
            }
        }
        out
    }

    pub fn is_aggregator_param(name: &str) -> bool {
        name.starts_with("agg")
    }

    /// Tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.fusion.iter().collect();
        out.push(&self.gamma);
        out.push(&self.decode);
        for layers in &self.stacks {
            for p in layers {
                out.push(&p.weight);
                if let Some(a) = &p.attention {
                    out.push(a);
                }
            }
        }
        out
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        self.names().into_iter().zip(self.tensors().into_iter().cloned()).collect()
    }

    /// Rebuilds parameters from tensors in canonical order, checking shapes.
    pub fn from_tensors(spec: ModelSpec, tensors: Vec<Tensor>) -> Result<Self> {
        let template = ModelParams::init(spec.clone(), 0)?;
        let expected = template.tensors();
        if tensors.len() != expected.len() {
            return Err(CoevoError::Contract(format!(
                "{} tensors for a model with {}",
                tensors.len(),
                expected.len()
            )));
        }
        for (t, e) in tensors.iter().zip(&expected) {
            if t.shape() != e.shape() {
                return Err(CoevoError::shape("parameter", e.shape(), t.shape()));
            }
        }
        Ok(template.map_tensors(tensors))
    }

    pub(crate) fn map_tensors(&self, tensors: Vec<Tensor>) -> Self {
        let mut it = tensors.into_iter();
        let fusion = self.fusion.iter().map(|_| it.next().unwrap()).collect();
        let gamma = it.next().unwrap();
        let decode = it.next().unwrap();
        let stacks = self
            .stacks
            .iter()
            .map(|layers| {
                layers
                    .iter()
                    .map(|p| LayerParams {
                        weight: it.next().unwrap(),
                        attention: p.attention.as_ref().map(|_| it.next().unwrap()),
                    })
                    .collect()
            })
            .collect();
        ModelParams {
            spec: self.spec.clone(),
            fusion,
            gamma,
            decode,
            stacks,
        }
    }

    /// Copy whose tensors are leaves on `tape`.
    pub fn watched(&self, tape: &Tape) -> Self {
        self.map_tensors(self.tensors().into_iter().map(|t| tape.watch(t)).collect())
    }

    /// Copy without tape tracking.
    pub fn detached(&self) -> Self {
        self.map_tensors(self.tensors().into_iter().map(Tensor::detached).collect())
    }

    fn imported(&self, tape: &Tape, stack: usize) -> Vec<LayerParams> {
        self.stacks[stack]
            .iter()
            .map(|p| LayerParams {
                weight: tape.import(&p.weight),
                attention: p.attention.as_ref().map(|a| tape.import(a)),
            })
            .collect()
    }

    pub fn aggregator(&self, stack: usize) -> Aggregator<'_> {
        Aggregator {
            kind: self.spec.aggregator,
            layers: &self.stacks[stack],
            sample_sizes: &self.spec.sample_sizes,
        }
    }
}

/// `h_prevᵀ Γ ĥ` for one node.
pub fn pre_attention_energy(tape: &Tape, h_prev: &Tensor, gamma: &Tensor, h_hat: &Tensor) -> Result<Tensor> {
    if !h_prev.is_column() || !h_hat.is_column() {
        return Err(CoevoError::shape("pre_attention_energy", h_prev.shape(), h_hat.shape()));
    }
    let projected = tape.matmul(gamma, h_hat)?;
    tape.matmul(&tape.transpose(h_prev), &projected)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionEntry {
    pub node: usize,
    pub t: usize,
    /// Weights for stacks `1..=min(t, S)`.
    pub weights: Vec<f64>,
    pub energies: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionTrace {
    pub entries: Vec<AttentionEntry>,
}

impl AttentionTrace {
    /// Mean weight per stack over entries with `t >= min_t` that use all stacks.
    pub fn mean_weights(&self, stacks: usize, min_t: usize) -> Vec<f64> {
        let mut sum = vec![0.0; stacks];
        let mut count = 0usize;
        for e in self.entries.iter().filter(|e| e.t >= min_t && e.weights.len() == stacks) {
            for (s, w) in sum.iter_mut().zip(&e.weights) {
                *s += w;
            }
            count += 1;
        }
        sum.iter().map(|s| s / count.max(1) as f64).collect()
    }
}

/// Embeddings `H^0..=H^through` for a node list, rows in list order.
#[derive(Clone, Debug)]
pub struct Embeddings {
    pub nodes: Vec<usize>,
    pub h: Vec<Tensor>,
    pub trace: AttentionTrace,
}

/// Output of one fusion step for a batch of nodes.
pub struct Fused {
    pub h: Tensor,
    /// `u x k` attention weights and energies.
    pub weights: Vec<f64>,
    pub energies: Vec<f64>,
}

fn softmax_values(e: &[f64]) -> Vec<f64> {
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = e.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = ex.iter().sum();
    ex.iter().map(|x| x / total).collect()
}

impl ModelParams {
    /// Fuses `prev[s-1] = H^{t-s}` with `hats[s-1] = ĥ^{t-s}` for `s = 1..=k`.
    pub fn fuse(&self, tape: &Tape, prev: &[&Tensor], hats: &[&Tensor]) -> Result<Fused> {
        let k = prev.len();
        if k == 0 || k != hats.len() || k > self.spec.stacks {
            return Err(CoevoError::Contract(format!(
                "fusion over {k} stacks with {} structural inputs (S = {})",
                hats.len(),
                self.spec.stacks
            )));
        }
        let u = prev[0].rows();
        let mut energies = Vec::with_capacity(k);
        let mut transformed = Vec::with_capacity(k);
        for s in 0..k {
            let e = tape.row_dot(&tape.matmul(prev[s], &self.gamma)?, hats[s])?;
            energies.push(e);
            let joined = tape.concat_cols(&[prev[s], hats[s]])?;
            let z = tape.matmul(&joined, &tape.transpose(&self.fusion[s]))?;
            transformed.push(self.spec.fusion_activation.apply(tape, &z));
        }
        let energy_refs: Vec<&Tensor> = energies.iter().collect();
        let e = tape.concat_cols(&energy_refs)?;
        let (fused, weights) = match self.spec.fusion {
            FusionVariant::Attention => {
                let a = tape.softmax_rows(&e)?;
                let mut acc: Option<Tensor> = None;
                for (s, z) in transformed.iter().enumerate() {
                    let part = tape.scale_rows(z, &tape.column(&a, s)?)?;
                    acc = Some(match acc {
                        None => part,
                        Some(total) => tape.add(&total, &part)?,
                    });
                }
                (acc.unwrap(), a.values().to_vec())
            }
            FusionVariant::Max => {
                let refs: Vec<&Tensor> = transformed.iter().collect();
                (tape.max_elementwise(&refs)?, Vec::new())
            }
            FusionVariant::Avg => {
                let mut acc = transformed[0].clone();
                for z in &transformed[1..] {
                    acc = tape.add(&acc, z)?;
                }
                (tape.scale(&acc, 1.0 / k as f64), Vec::new())
            }
        };
        let weights = if weights.is_empty() {
            e.values().chunks(k).flat_map(softmax_values).collect()
        } else {
            weights
        };
        debug_assert_eq!(weights.len(), u * k);
        Ok(Fused {
            h: tape.l2_normalize_rows(&fused),
            weights,
            energies: e.values().to_vec(),
        })
    }

    fn check_nodes(&self, seq: &DynamicGraphSequence, nodes: &[usize]) -> Result<()> {
        if seq.attribute_count() != self.spec.attrs {
            return Err(CoevoError::Contract(format!(
                "model expects {} attributes, sequence has {}",
                self.spec.attrs,
                seq.attribute_count()
            )));
        }
        if let Some(&v) = nodes.iter().find(|&&v| v >= seq.node_count()) {
            return Err(CoevoError::Contract(format!("node {v} out of range")));
        }
        Ok(())
    }

    /// `H^0`: depth-1 aggregation of stack 1 over snapshot 0.
    pub fn init_embeddings(&self, tape: &Tape, seq: &DynamicGraphSequence, nodes: &[usize], key: &[u64]) -> Result<Tensor> {
        self.check_nodes(seq, nodes)?;
        let agg = Aggregator {
            layers: &self.stacks[0][..1],
            ..self.aggregator(0)
        };
        let mut path = key.to_vec();
        path.extend([1, 0]);
        agg.batch(tape, seq.graph(0), seq.dense_attributes(0), nodes, &path)
    }

    /// Runs the cascade for `t = 0..=through`. Snapshot `t` itself is never
    /// read when producing `H^t`, so `through` may equal `seq.len()`.
    ///
    /// With `parallel`, the structural aggregations are evaluated
    /// concurrently on separate tapes and merged in a fixed order.
    pub fn embed(
        &self,
        tape: &Tape,
        seq: &DynamicGraphSequence,
        nodes: &[usize],
        through: usize,
        key: &[u64],
        parallel: bool,
    ) -> Result<Embeddings> {
        self.check_nodes(seq, nodes)?;
        if through > seq.len() {
            return Err(CoevoError::Contract(format!(
                "cannot embed step {through} from {} snapshots",
                seq.len()
            )));
        }
        let stacks = self.spec.stacks;
        let mut jobs = Vec::new();
        for t in 1..=through {
            for s in 1..=t.min(stacks) {
                jobs.push((s, t - s));
            }
        }
        let run = |tape: &Tape, layers: &[LayerParams], s: usize, tau: usize| {
            let agg = Aggregator {
                layers,
                ..self.aggregator(s - 1)
            };
            let mut path = key.to_vec();
            path.extend([s as u64, tau as u64]);
            agg.batch(tape, seq.graph(tau), seq.dense_attributes(tau), nodes, &path)
        };
        let hats: Vec<Tensor> = if parallel {
            let parts: Vec<Result<(Tape, Tensor)>> = jobs
                .par_iter()
                .map(|&(s, tau)| {
                    let sub = Tape::new();
                    let layers = self.imported(&sub, s - 1);
                    let out = run(&sub, &layers, s, tau)?;
                    Ok((sub, out))
                })
                .collect();
            let mut hats = Vec::with_capacity(parts.len());
            for part in parts {
                let (sub, out) = part?;
                let remap = tape.absorb(sub);
                hats.push(remap.apply(&out));
            }
            hats
        } else {
            jobs.iter()
                .map(|&(s, tau)| run(tape, &self.stacks[s - 1], s, tau))
                .collect::<Result<_>>()?
        };

        let mut h = vec![self.init_embeddings(tape, seq, nodes, key)?];
        let mut trace = AttentionTrace::default();
        let mut job = 0;
        for t in 1..=through {
            let k = t.min(stacks);
            let prev: Vec<&Tensor> = (1..=k).map(|s| &h[t - s]).collect();
            let hat: Vec<&Tensor> = hats[job..job + k].iter().collect();
            job += k;
            let fused = self.fuse(tape, &prev, &hat)?;
            for (i, &node) in nodes.iter().enumerate() {
                trace.entries.push(AttentionEntry {
                    node,
                    t,
                    weights: fused.weights[i * k..(i + 1) * k].to_vec(),
                    energies: fused.energies[i * k..(i + 1) * k].to_vec(),
                });
            }
            h.push(fused.h);
        }
        Ok(Embeddings {
            nodes: nodes.to_vec(),
            h,
            trace,
        })
    }

    /// `H^{T+1}` for all nodes from snapshots `0..=T` and untracked parameters.
    pub fn infer_future(&self, seq: &DynamicGraphSequence, key: &[u64], parallel: bool) -> Result<(Tensor, Embeddings)> {
        let tape = Tape::new();
        let params = self.detached();
        let nodes: Vec<usize> = (0..seq.node_count()).collect();
        let emb = params.embed(&tape, seq, &nodes, seq.len(), key, parallel)?;
        Ok((emb.h[seq.len()].clone(), emb))
    }

    /// Decoded attributes `σ(H Mᵀ)`.
    pub fn decode_attributes(&self, tape: &Tape, h: &Tensor) -> Result<Tensor> {
        let z = tape.matmul(h, &tape.transpose(&self.decode))?;
        Ok(self.spec.decode_activation.apply(tape, &z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_synthetic, SyntheticSpec};
    use crate::rng::seeded;
    use rand::Rng;

    fn spec(stacks: usize, fusion: FusionVariant, attrs: usize) -> ModelSpec {
        ModelSpec {
            stacks,
            depth: 2,
            dim: 4,
            attrs,
            aggregator: AggregatorKind::SageMean,
            fusion,
            fusion_activation: Activation::Relu,
            decode_activation: Activation::Relu,
            sample_sizes: vec![3, 2],
        }
    }

    fn small_seq(seed: u64) -> DynamicGraphSequence {
        generate_synthetic(&SyntheticSpec {
            n: 12,
            horizon: 5,
            r: 5,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn energy_examples() {
        let tape = Tape::new();
        let e = pre_attention_energy(&tape, &Tensor::scalar(2.0), &Tensor::scalar(3.0), &Tensor::scalar(4.0)).unwrap();
        assert_eq!(e.item(), 24.0);
        let mut rng = seeded(1);
        let h = Tensor::from_fn(3, 1, |_, _| rng.random_range(-1.0..1.0));
        let g = Tensor::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0));
        let hat = Tensor::from_fn(6, 1, |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(pre_attention_energy(&tape, &h, &Tensor::zeros(3, 6), &hat).unwrap().item(), 0.0);
        let mut brute = 0.0;
        for i in 0..3 {
            for j in 0..6 {
                brute += h.get(i, 0) * g.get(i, j) * hat.get(j, 0);
            }
        }
        assert!((pre_attention_energy(&tape, &h, &g, &hat).unwrap().item() - brute).abs() < 1e-12);
        assert!(pre_attention_energy(&tape, &Tensor::zeros(1, 3), &g, &hat).is_err());
    }

    #[test]
    fn parameter_layout() {
        let p = ModelParams::init(spec(2, FusionVariant::Attention, 5), 3).unwrap();
        let names = p.names();
        assert_eq!(&names[..4], &["W1", "W2", "Gamma", "M"]);
        assert_eq!(names.len(), 4 + 2 * 2);
        assert_eq!(p.fusion[0].shape(), [4, 12]);
        assert_eq!(p.gamma.shape(), [4, 8]);
        assert_eq!(p.decode.shape(), [5, 4]);
        assert_eq!(p.stacks[0][0].weight.shape(), [10, 4]);
        assert_eq!(p.stacks[1][1].weight.shape(), [8, 4]);
        let back = ModelParams::from_tensors(p.spec.clone(), p.tensors().into_iter().cloned().collect()).unwrap();
        assert_eq!(back.tensors(), p.tensors());
    }

    #[test]
    fn truncated_history_and_unit_rows() {
        let seq = small_seq(1);
        let p = ModelParams::init(spec(5, FusionVariant::Attention, 5), 2).unwrap();
        let nodes: Vec<usize> = (0..12).collect();
        let emb = p.embed(&Tape::new(), &seq, &nodes, 2, &[9], false).unwrap();
        assert_eq!(emb.h.len(), 3);
        for e in &emb.trace.entries {
            assert_eq!(e.weights.len(), e.t);
            assert!((e.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for t in 1..3 {
            for v in 0..12 {
                let norm: f64 = emb.h[t].row(v).iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-9);
            }
        }
        let only_h0 = p.embed(&Tape::new(), &seq, &nodes, 0, &[9], false).unwrap();
        assert_eq!(only_h0.h.len(), 1);
        assert_eq!(only_h0.h[0], emb.h[0]);
    }

    #[test]
    fn init_embeddings_match_depth_one_aggregation() {
        let seq = small_seq(2);
        let p = ModelParams::init(spec(2, FusionVariant::Attention, 5), 4).unwrap();
        let nodes = [0, 5, 7];
        let h0 = p.init_embeddings(&Tape::new(), &seq, &nodes, &[3]).unwrap();
        let agg = Aggregator { layers: &p.stacks[0][..1], ..p.aggregator(0) };
        let direct = agg.batch(&Tape::new(), seq.graph(0), seq.dense_attributes(0), &nodes, &[3, 1, 0]).unwrap();
        assert_eq!(h0, direct);
        assert_eq!(h0.shape(), [3, 4]);
    }

    #[test]
    fn first_step_variants_coincide() {
        let seq = small_seq(3);
        let nodes: Vec<usize> = (0..12).collect();
        let mut outputs = Vec::new();
        for fusion in [FusionVariant::Attention, FusionVariant::Max, FusionVariant::Avg] {
            let p = ModelParams::init(spec(3, fusion, 5), 5).unwrap();
            let emb = p.embed(&Tape::new(), &seq, &nodes, 1, &[1], false).unwrap();
            assert!(emb.trace.entries.iter().all(|e| e.weights == vec![1.0]));
            outputs.push(emb.h[1].clone());
        }
        assert_eq!(outputs[0], outputs[1]);
        assert_eq!(outputs[0], outputs[2]);
    }

    #[test]
    fn equal_energies_make_attention_an_average() {
        let seq = small_seq(4);
        let nodes: Vec<usize> = (0..6).collect();
        let mut att = ModelParams::init(spec(3, FusionVariant::Attention, 5), 6).unwrap();
        att.gamma = Tensor::zeros(4, 8);
        let avg = ModelParams { spec: ModelSpec { fusion: FusionVariant::Avg, ..att.spec.clone() }, ..att.clone() };
        let a = att.embed(&Tape::new(), &seq, &nodes, 4, &[2], false).unwrap();
        let b = avg.embed(&Tape::new(), &seq, &nodes, 4, &[2], false).unwrap();
        for e in a.trace.entries.iter().filter(|e| e.t >= 3) {
            for w in &e.weights {
                assert!((w - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        for (x, y) in a.h[4].values().iter().zip(b.h[4].values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_cascade_matches_sequential() {
        let seq = small_seq(5);
        let p = ModelParams::init(spec(3, FusionVariant::Attention, 5), 7).unwrap();
        let nodes = [1, 4, 6, 11];
        let grads = |parallel: bool| {
            let tape = Tape::new();
            let w = p.watched(&tape);
            let emb = w.embed(&tape, &seq, &nodes, 5, &[8], parallel).unwrap();
            let loss = tape.sum(&tape.square(&emb.h[5]));
            let g = tape.backward(&loss).unwrap();
            (emb.h[5].clone(), w.tensors().iter().map(|t| g.wrt(t)).collect::<Vec<_>>())
        };
        let (h_seq, g_seq) = grads(false);
        let (h_par, g_par) = grads(true);
        assert_eq!(h_seq, h_par);
        assert_eq!(g_seq, g_par);
    }

    #[test]
    fn future_step_reads_only_the_past() {
        let seq = small_seq(6);
        let p = ModelParams::init(spec(2, FusionVariant::Attention, 5), 8).unwrap();
        let (future, emb) = p.infer_future(&seq, &[4], false).unwrap();
        assert_eq!(emb.h.len(), seq.len() + 1);
        let truncated = seq.prefix(seq.len()).unwrap();
        let (again, _) = p.infer_future(&truncated, &[4], false).unwrap();
        assert_eq!(future, again);
        // Adding a later snapshot changes nothing before it.
        let longer = small_seq(6);
        let emb2 = p
            .embed(&Tape::new(), &longer, &(0..12).collect::<Vec<_>>(), seq.len() - 1, &[4], false)
            .unwrap();
        assert_eq!(emb2.h[seq.len() - 1], emb.h[seq.len() - 1]);
    }
}
