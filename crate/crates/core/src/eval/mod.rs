//! Next-snapshot forecasting metrics and co-evolution diagnostics.

pub mod analysis;
pub mod metrics;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{CoevoError, Result};
use crate::graph::DynamicGraphSequence;
use crate::model::ModelParams;
use crate::rng::stream;
use crate::training::INFERENCE_KEY;

pub use analysis::{
    analyze, attribute_structure_correlation, jaccard, link_recurrence_histogram, pearson, triad_closure_histogram,
    CoEvolutionReport, CorrelationSummary, Histogram,
};
pub use metrics::{
    build_link_candidates, eval_attributes, link_metrics, mae_rmse, score_links, AttributeEvalReport, F1Mode,
    LabeledPair, LinkEvalReport, ScoredPair,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Near-zero subsampling for attribute errors.
    pub subsample: bool,
    /// Cutoff below which a prediction counts as near zero.
    pub near_zero: f64,
    /// Sampled non-edges per true edge.
    pub negative_ratio: f64,
    pub ks: Vec<usize>,
    pub f1: F1Mode,
    /// Also report a model with untrained parameters.
    pub random_baseline: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            subsample: true,
            near_zero: 0.1,
            negative_ratio: 1.0,
            ks: vec![50, 100, 200],
            f1: F1Mode::Best,
            random_baseline: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HoldoutReport {
    pub attributes: AttributeEvalReport,
    pub links: LinkEvalReport,
}

impl HoldoutReport {
    /// Aligned plain-text rendering.
    pub fn to_text(&self, label: &str) -> String {
        let a = &self.attributes;
        let l = &self.links;
        let mut out = String::new();
        let _ = writeln!(out, "[{label}]");
        let _ = writeln!(out, "  {:<12} {:>10.6}", "MAE", a.mae);
        let _ = writeln!(out, "  {:<12} {:>10.6}", "RMSE", a.rmse);
        let _ = writeln!(out, "  {:<12} {:>10}", "entries", a.entries);
        let _ = writeln!(out, "  {:<12} {:>10.6}", "PR-AUC", l.pr_auc);
        let _ = writeln!(out, "  {:<12} {:>10.6}", "F1", l.f1);
        let _ = writeln!(out, "  {:<12} {:>10.6}", "threshold", l.f1_threshold);
        for (k, p) in &l.precision_at {
            let _ = writeln!(out, "  {:<12} {:>10.6}", format!("P@{k}"), p);
        }
        let _ = writeln!(out, "  {:<12} {:>10}", "pairs", format!("{}+/{}-", l.positives, l.negatives));
        out
    }
}

/// Decoded attributes for embedding rows, without tape tracking.
pub fn predict_attributes(params: &ModelParams, h: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    Ok(params.detached().decode_attributes(&tape, h)?.detached())
}

/// Holds out the last snapshot, forecasts it from the rest, and scores the
/// forecast. Sampling draws from streams of `seed`.
pub fn evaluate_holdout(
    params: &ModelParams,
    seq: &DynamicGraphSequence,
    settings: &EvalSettings,
    seed: u64,
) -> Result<HoldoutReport> {
    if seq.len() < 3 {
        return Err(CoevoError::Config(format!(
            "holdout evaluation needs at least 3 snapshots, got {}",
            seq.len()
        )));
    }
    let last = seq.len() - 1;
    let observed = seq.prefix(last)?;
    let (future, _) = params.infer_future(&observed, &[seed, INFERENCE_KEY], false)?;
    let pred = predict_attributes(params, &future)?;
    let attributes = eval_attributes(
        &pred,
        seq.dense_attributes(last),
        settings.subsample,
        settings.near_zero,
        &mut stream(seed, &[0xA77]),
    )?;
    let candidates = build_link_candidates(seq.graph(last), settings.negative_ratio, &mut stream(seed, &[0x11C]))?;
    let links = link_metrics(&score_links(&future, &candidates), &settings.ks, settings.f1)?;
    Ok(HoldoutReport { attributes, links })
}
