//! Attribute reconstruction and skip-gram structure losses.

use rand::Rng;

use super::{PositiveMode, TrainConfig};
use crate::autodiff::{Tape, Tensor};
use crate::error::{CoevoError, Result};
use crate::graph::{random_walk_positive, sample_positives, DynamicGraphSequence, NegativeSampler};
use crate::model::{Activation, Embeddings, ModelParams};

/// `‖σ(M h) − x‖²` for one node.
pub fn attribute_loss(tape: &Tape, h: &Tensor, x: &Tensor, m: &Tensor, act: Activation) -> Result<Tensor> {
    if !h.is_column() || !x.is_column() || m.shape() != [x.rows(), h.rows()] {
        return Err(CoevoError::shape("attribute_loss", m.shape(), [x.rows(), h.rows()]));
    }
    let decoded = act.apply(tape, &tape.matmul(m, h)?);
    Ok(tape.sum(&tape.square(&tape.sub(&decoded, x)?)))
}

/// `−log σ(h_vᵀh_u) − Σ_q log σ(−h_vᵀh_q)` for one positive pair.
pub fn structure_loss(tape: &Tape, h_v: &Tensor, h_u: &Tensor, negatives: &[Tensor]) -> Result<Tensor> {
    let dot = |a: &Tensor, b: &Tensor| tape.matmul(&tape.transpose(a), b);
    let mut loss = tape.scale(&tape.log(&tape.sigmoid(&dot(h_v, h_u)?)), -1.0);
    for neg in negatives {
        let term = tape.log(&tape.sigmoid(&tape.scale(&dot(h_v, neg)?, -1.0)));
        loss = tape.sub(&loss, &term)?;
    }
    Ok(loss)
}

/// One positive pair with its negatives at step `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureTerm {
    pub t: usize,
    pub v: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// The sampled pairs for one batch, fixed before the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LossPlan {
    pub batch: Vec<usize>,
    /// Loss steps are `1..=last`.
    pub last: usize,
    pub terms: Vec<StructureTerm>,
    /// `(v, t)` pairs without a structure term.
    pub skipped: usize,
}

impl LossPlan {
    pub fn sample<R: Rng + ?Sized>(
        seq: &DynamicGraphSequence,
        batch: &[usize],
        last: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if last >= seq.len() {
            return Err(CoevoError::Contract(format!("loss step {last} beyond {} snapshots", seq.len())));
        }
        let mut terms = Vec::new();
        let mut skipped = 0;
        for t in 1..=last {
            let graph = seq.graph(t);
            let sampler = NegativeSampler::new(graph, cfg.negative_distribution);
            for &v in batch {
                let positives = match cfg.positive_mode {
                    PositiveMode::Neighbors => sample_positives(graph, v, cfg.positives, rng),
                    PositiveMode::RandomWalk => {
                        (0..cfg.positives).filter_map(|_| random_walk_positive(graph, v, rng)).collect()
                    }
                };
                if positives.is_empty() {
                    skipped += 1;
                    continue;
                }
                for positive in positives {
                    match sampler.sample(v, cfg.negatives, rng) {
                        Ok(negatives) => terms.push(StructureTerm { t, v, positive, negatives }),
                        Err(CoevoError::Sampling(msg)) => {
                            log::warn!("t={t}: {msg}; structure term skipped");
                            skipped += 1;
                            break;
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        Ok(LossPlan {
            batch: batch.to_vec(),
            last,
            terms,
            skipped,
        })
    }

    /// Every node whose embedding the loss reads, ascending.
    pub fn nodes(&self) -> Vec<usize> {
        let mut out = self.batch.clone();
        for term in &self.terms {
            out.push(term.v);
            out.push(term.positive);
            out.extend(&term.negatives);
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Loss tensors on the tape.
pub struct LossParts {
    pub total: Tensor,
    pub attribute: Tensor,
    pub structure: Tensor,
}

fn rows_of(nodes: &[usize], wanted: impl Iterator<Item = usize>) -> Result<Vec<usize>> {
    wanted
        .map(|v| {
            nodes
                .binary_search(&v)
                .map_err(|_| CoevoError::Contract(format!("node {v} has no embedding row")))
        })
        .collect()
}

/// `Σ_t Σ_v α J_X + (1 − α) J_G` over the plan, reading rows of `emb`.
pub fn overall_loss(
    tape: &Tape,
    params: &ModelParams,
    emb: &Embeddings,
    seq: &DynamicGraphSequence,
    plan: &LossPlan,
    alpha: f64,
) -> Result<LossParts> {
    if !emb.nodes.windows(2).all(|w| w[0] < w[1]) {
        return Err(CoevoError::Contract("embedding rows must be sorted and distinct".into()));
    }
    if emb.h.len() <= plan.last {
        return Err(CoevoError::Contract(format!(
            "embeddings cover {} steps, loss needs {}",
            emb.h.len(),
            plan.last + 1
        )));
    }
    let batch_rows = rows_of(&emb.nodes, plan.batch.iter().copied())?;
    let mut attribute: Option<Tensor> = None;
    let mut structure: Option<Tensor> = None;
    let accumulate = |acc: &mut Option<Tensor>, part: Tensor| -> Result<()> {
        *acc = Some(match acc.take() {
            None => part,
            Some(total) => tape.add(&total, &part)?,
        });
        Ok(())
    };
    for t in 1..=plan.last {
        let h = tape.gather_rows(&emb.h[t], batch_rows.clone())?;
        let decoded = params.decode_attributes(tape, &h)?;
        let truth = seq.dense_attributes(t).select_rows(&plan.batch);
        accumulate(&mut attribute, tape.sum(&tape.square(&tape.sub(&decoded, &truth)?)))?;

        let terms: Vec<&StructureTerm> = plan.terms.iter().filter(|s| s.t == t).collect();
        if terms.is_empty() {
            continue;
        }
        let mut left = Vec::new();
        let mut right = Vec::new();
        let mut sign = Vec::new();
        for term in terms {
            left.push(term.v);
            right.push(term.positive);
            sign.push(1.0);
            for &q in &term.negatives {
                left.push(term.v);
                right.push(q);
                sign.push(-1.0);
            }
        }
        let hl = tape.gather_rows(&emb.h[t], rows_of(&emb.nodes, left.into_iter())?)?;
        let hr = tape.gather_rows(&emb.h[t], rows_of(&emb.nodes, right.into_iter())?)?;
        let scores = tape.mul(&tape.row_dot(&hl, &hr)?, &Tensor::column(sign))?;
        let part = tape.scale(&tape.sum(&tape.log(&tape.sigmoid(&scores))), -1.0);
        accumulate(&mut structure, part)?;
    }
    let attribute = attribute.unwrap_or_else(|| Tensor::scalar(0.0));
    let structure = structure.unwrap_or_else(|| Tensor::scalar(0.0));
    let total = tape.add(&tape.scale(&attribute, alpha), &tape.scale(&structure, 1.0 - alpha))?;
    Ok(LossParts {
        total,
        attribute,
        structure,
    })
}
