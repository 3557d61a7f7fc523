//! Finite-difference check of the full training objective.

use super::{overall_loss, LossPlan, TrainConfig};
use crate::autodiff::gradcheck::{check_gradients, GradCheckReport};
use crate::autodiff::OpKind;
use crate::error::Result;
use crate::graph::{generate_synthetic, SyntheticSpec};
use crate::model::ModelParams;
use crate::rng::stream;

/// Maximum relative error accepted by [`gradient_check`].
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;
const STEP: f64 = 1e-6;

/// Checks every parameter gradient of the overall loss on a 12-node,
/// 5-snapshot fixture with `S = 2`, `d = 4`, `r = 5`, `Q = 2` and fixed
/// negatives. Aggregator, fusion, activations, depth and `α` come from `cfg`.
pub fn gradient_check(cfg: &TrainConfig, fault: Option<OpKind>) -> Result<GradCheckReport> {
    let seq = generate_synthetic(&SyntheticSpec {
        n: 12,
        horizon: 4,
        r: 5,
        seed: cfg.seed,
        ..Default::default()
    })?;
    let cfg = TrainConfig {
        span: 2,
        dim: 4,
        negatives: 2,
        positives: 3,
        ..cfg.clone()
    };
    let params = ModelParams::init(cfg.model_spec(seq.attribute_count()), cfg.seed)?;
    let last = seq.len() - 1;
    let batch: Vec<usize> = (0..seq.node_count()).collect();
    let plan = LossPlan::sample(&seq, &batch, last, &cfg, &mut stream(cfg.seed, &[0x6C4E]))?;
    let nodes = plan.nodes();
    let named = params.named();
    check_gradients(
        &named,
        |tape, tensors| {
            let p = params.map_tensors(tensors.to_vec());
            let emb = p.embed(tape, &seq, &nodes, last, &[cfg.seed], false)?;
            Ok(overall_loss(tape, &p, &emb, &seq, &plan, cfg.alpha)?.total)
        },
        STEP,
        fault,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregators::AggregatorKind;
    use crate::model::FusionVariant;

    #[test]
    fn default_objective_passes() {
        let report = gradient_check(&TrainConfig::default(), None).unwrap();
        let names: Vec<&str> = report.tensors.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(&names[..4], &["W1", "W2", "Gamma", "M"]);
        assert_eq!(names.len(), 8);
        assert!(report.max_rel_err() <= GRADCHECK_TOLERANCE, "{:?}", report.worst());
        let gamma = &report.tensors[2];
        assert!(gamma.analytic != 0.0 || gamma.numeric != 0.0);
    }

    #[test]
    fn other_configurations_pass() {
        for cfg in [
            TrainConfig { aggregator: AggregatorKind::Gat, ..Default::default() },
            TrainConfig { aggregator: AggregatorKind::Gcn, fusion: FusionVariant::Max, ..Default::default() },
            TrainConfig { fusion: FusionVariant::Avg, alpha: 0.2, ..Default::default() },
        ] {
            let report = gradient_check(&cfg, None).unwrap();
            assert!(report.max_rel_err() <= GRADCHECK_TOLERANCE, "{cfg:?}: {:?}", report.worst());
        }
    }

    #[test]
    fn corrupted_backward_is_detected() {
        let report = gradient_check(&TrainConfig::default(), Some(OpKind::MatMul)).unwrap();
        assert!(report.max_rel_err() > GRADCHECK_TOLERANCE);
    }
}
