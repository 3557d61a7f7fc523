//! Multi-task training with Adam over minibatches of nodes.

pub mod checkpoint;
pub mod loss;
pub mod verify;

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregators::AggregatorKind;
use crate::autodiff::{OptimizerKind, OptimizerState, Tape, Tensor};
use crate::error::{CoevoError, Result};
use crate::graph::{epoch_batches, DynamicGraphSequence, NegativeDistribution};
use crate::model::{Activation, AttentionTrace, FusionVariant, ModelParams, ModelSpec};
use crate::rng::stream;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use loss::{attribute_loss, overall_loss, structure_loss, LossParts, LossPlan, StructureTerm};
pub use verify::{gradient_check, GRADCHECK_TOLERANCE};

/// Key for the aggregator sampling stream used outside training batches.
pub const INFERENCE_KEY: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveMode {
    /// Up to `positives` distinct neighbors in the same snapshot.
    #[default]
    Neighbors,
    /// `positives` draws from short random walks.
    RandomWalk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Temporal evolution span `S`.
    pub span: usize,
    /// Structural depth `L`.
    pub depth: usize,
    /// Embedding size `d`.
    pub dim: usize,
    /// Weight of the attribute term.
    pub alpha: f64,
    /// Negatives per positive pair (`Q`).
    pub negatives: usize,
    /// Positive pairs per node and step (`K`).
    pub positives: usize,
    pub positive_mode: PositiveMode,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Clamped to the node count.
    pub batch_size: usize,
    pub aggregator: AggregatorKind,
    pub sample_sizes: Vec<usize>,
    pub fusion: FusionVariant,
    pub fusion_activation: Activation,
    pub decode_activation: Activation,
    pub negative_distribution: NegativeDistribution,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub freeze_aggregators: bool,
    pub stack_parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            span: 3,
            depth: 2,
            dim: 32,
            alpha: 0.5,
            negatives: 5,
            positives: 10,
            positive_mode: PositiveMode::Neighbors,
            learning_rate: 0.03,
            epochs: 50,
            batch_size: 64,
            aggregator: AggregatorKind::SageMean,
            sample_sizes: vec![10, 5],
            fusion: FusionVariant::Attention,
            fusion_activation: Activation::Relu,
            decode_activation: Activation::Relu,
            negative_distribution: NegativeDistribution::Degree34,
            optimizer: OptimizerKind::Adam,
            seed: 42,
            freeze_aggregators: false,
            stack_parallel: false,
        }
    }
}

impl TrainConfig {
    /// Checks every field; `epochs` must be positive.
    pub fn validate(&self) -> Result<()> {
        self.validate_model()?;
        if self.epochs == 0 {
            return Err(CoevoError::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    fn validate_model(&self) -> Result<()> {
        let fail = |msg: String| Err(CoevoError::Config(msg));
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.negatives == 0 {
            return fail("negatives must be at least 1".into());
        }
        if self.positives == 0 {
            return fail("positives must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.aggregator == AggregatorKind::SageMean && self.sample_sizes.len() < self.depth {
            return fail(format!(
                "{} sample sizes for depth {}",
                self.sample_sizes.len(),
                self.depth
            ));
        }
        OptimizerState::new(self.optimizer, self.learning_rate)?;
        self.model_spec(1).validate()
    }

    pub fn model_spec(&self, attrs: usize) -> ModelSpec {
        ModelSpec {
            stacks: self.span,
            depth: self.depth,
            dim: self.dim,
            attrs,
            aggregator: self.aggregator,
            fusion: self.fusion,
            fusion_activation: self.fusion_activation,
            decode_activation: self.decode_activation,
            sample_sizes: self.sample_sizes.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub attribute: f64,
    pub structure: f64,
    pub seconds: f64,
    /// `(v, t)` pairs without a structure term.
    pub skipped: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub epochs: Vec<EpochLoss>,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "epoch,total,attr,struct,seconds";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{},{:.6}", e.epoch, e.total, e.attribute, e.structure, e.seconds);
        }
        out
    }

    /// The CSV without the timing column, for content comparisons.
    pub fn losses_csv(&self) -> String {
        let mut out = String::from("epoch,total,attr,struct\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.total, e.attribute, e.structure);
        }
        out
    }
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub report: LossReport,
    /// Attention over all nodes and steps under the final parameters.
    pub trace: AttentionTrace,
    /// Optimizer updates applied.
    pub steps: u64,
}

/// Trains on steps `1..=T` of `seq`. `epochs = 0` returns the initial parameters.
pub fn train(seq: &DynamicGraphSequence, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(seq, cfg, ModelParams::init(cfg.model_spec(seq.attribute_count()), cfg.seed)?)
}

/// Trains starting from `params`.
pub fn train_from(seq: &DynamicGraphSequence, cfg: &TrainConfig, mut params: ModelParams) -> Result<TrainOutcome> {
    cfg.validate_model()?;
    if seq.len() < 2 {
        return Err(CoevoError::Config(format!(
            "training needs at least 2 snapshots, got {}",
            seq.len()
        )));
    }
    if params.spec != cfg.model_spec(seq.attribute_count()) {
        return Err(CoevoError::Contract("parameters do not match the configuration".into()));
    }
    let n = seq.node_count();
    let last = seq.len() - 1;
    let batch_size = cfg.batch_size.min(n);
    if batch_size < cfg.batch_size {
        log::info!("batch size {} clamped to {n} nodes", cfg.batch_size);
    }
    let names = params.names();
    let frozen: Vec<bool> = names
        .iter()
        .map(|name| cfg.freeze_aggregators && ModelParams::is_aggregator_param(name))
        .collect();
    let mut optimizer = OptimizerState::new(cfg.optimizer, cfg.learning_rate)?;
    let mut report = LossReport::default();
    log::info!("training on {last} transitions, {n} nodes, {} epochs", cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut rng = stream(cfg.seed, &[0x7EA1, epoch as u64]);
        let batches = epoch_batches(n, batch_size, &mut rng)?;
        let mut totals = EpochLoss {
            epoch,
            total: 0.0,
            attribute: 0.0,
            structure: 0.0,
            seconds: 0.0,
            skipped: 0,
        };
        for (b, batch) in batches.iter().enumerate() {
            let plan = LossPlan::sample(seq, batch, last, cfg, &mut rng)?;
            let tape = Tape::new();
            let watched = params.watched(&tape);
            let key = [cfg.seed, epoch as u64, b as u64];
            let emb = watched.embed(&tape, seq, &plan.nodes(), last, &key, cfg.stack_parallel)?;
            let parts = overall_loss(&tape, &watched, &emb, seq, &plan, cfg.alpha)?;
            let total = parts.total.item();
            if !total.is_finite() {
                return Err(CoevoError::Divergence {
                    epoch,
                    detail: format!("batch {b} produced total loss {total}"),
                });
            }
            totals.total += total;
            totals.attribute += parts.attribute.item();
            totals.structure += parts.structure.item();
            totals.skipped += plan.skipped;

            let grads = tape.backward(&parts.total)?;
            let tensors = watched.tensors();
            let values: Vec<Vec<f64>> = tensors
                .iter()
                .zip(&frozen)
                .map(|(t, &f)| if f { vec![0.0; t.len()] } else { grads.wrt(t) })
                .collect();
            if let Some(i) = values.iter().position(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(CoevoError::Divergence {
                    epoch,
                    detail: format!("batch {b} produced a non-finite gradient for {}", names[i]),
                });
            }
            let mut current: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
            let refs: Vec<Option<&[f64]>> = values.iter().map(|g| Some(g.as_slice())).collect();
            optimizer.step(&mut current, &refs)?;
            for (i, (new, old)) in current.iter_mut().zip(params.tensors()).enumerate() {
                if frozen[i] {
                    *new = old.clone();
                }
            }
            params = params.map_tensors(current);
        }
        totals.seconds = start.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: total {:.6} attr {:.6} struct {:.6} ({:.3}s)",
            totals.total,
            totals.attribute,
            totals.structure,
            totals.seconds
        );
        report.epochs.push(totals);
    }

    let tape = Tape::new();
    let all: Vec<usize> = (0..n).collect();
    let trace = params
        .embed(&tape, seq, &all, last, &[cfg.seed, INFERENCE_KEY], cfg.stack_parallel)?
        .trace;
    Ok(TrainOutcome {
        params,
        report,
        trace,
        steps: optimizer.steps(),
    })
}
