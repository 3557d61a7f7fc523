//! Cascade and holdout properties on a frozen-dynamics fixture.

use coevo::aggregators::AggregatorKind;
use coevo::autodiff::Tensor;
use coevo::eval::{evaluate_holdout, EvalSettings};
use coevo::graph::{generate_synthetic, DynamicGraphSequence, SyntheticSpec};
use coevo::model::ModelParams;
use coevo::training::{train, TrainConfig};

fn frozen(horizon: usize) -> DynamicGraphSequence {
    let seq = generate_synthetic(&SyntheticSpec {
        n: 30,
        horizon,
        r: 8,
        seed: 3,
        lag_weights: vec![0.0, 0.0],
        drift_rate: 0.0,
        closure_rate: 0.0,
        death_rate: 0.0,
        ..Default::default()
    })
    .unwrap();
    for t in 1..seq.len() {
        assert_eq!(seq.graph(t), seq.graph(0));
        assert_eq!(seq.dense_attributes(t), seq.dense_attributes(0));
    }
    seq
}

fn config() -> TrainConfig {
    TrainConfig {
        aggregator: AggregatorKind::Gcn,
        span: 2,
        dim: 8,
        epochs: 60,
        ..Default::default()
    }
}

/// Scales the block of each `W_s` that multiplies the previous state.
fn scale_recurrence(params: &mut ModelParams, factor: f64) {
    let d = params.spec.dim;
    for w in &mut params.fusion {
        *w = Tensor::from_fn(w.rows(), w.cols(), |i, j| if j < d { factor * w.get(i, j) } else { w.get(i, j) });
    }
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn state_free_fusion_is_stationary_after_span_steps() {
    let seq = frozen(6);
    let cfg = config();
    let mut params = train(&seq.prefix(6).unwrap(), &cfg).unwrap().params;
    scale_recurrence(&mut params, 0.0);
    params.gamma = Tensor::zeros(params.gamma.rows(), params.gamma.cols());
    let (future, emb) = params.infer_future(&seq, &[1], false).unwrap();
    for t in cfg.span..seq.len() {
        assert_eq!(emb.h[t], emb.h[cfg.span], "t = {t}");
    }
    assert!(max_diff(&future, &emb.h[seq.len() - 1]) <= 1e-9);
}

#[test]
fn contractive_recurrence_reaches_a_fixed_point() {
    let seq = frozen(40);
    let mut params = train(&seq.prefix(8).unwrap(), &config()).unwrap().params;
    scale_recurrence(&mut params, 0.05);
    let (future, emb) = params.infer_future(&seq, &[1], false).unwrap();
    let gap = max_diff(&future, &emb.h[seq.len() - 1]);
    assert!(gap <= 1e-9, "gap {gap:e}");
    for i in 0..future.rows() {
        let norm = future.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-9);
    }
}

#[test]
fn trained_model_beats_untrained_on_frozen_holdout() {
    let seq = frozen(8);
    let settings = EvalSettings::default();
    for seed in [1, 2] {
        let cfg = TrainConfig { seed, epochs: 80, ..config() };
        let trained = train(&seq.prefix(8).unwrap(), &cfg).unwrap().params;
        let untrained = ModelParams::init(trained.spec.clone(), seed).unwrap();
        let a = evaluate_holdout(&trained, &seq, &settings, seed).unwrap();
        let b = evaluate_holdout(&untrained, &seq, &settings, seed).unwrap();
        assert!(a.attributes.rmse < b.attributes.rmse, "seed {seed}: {} vs {}", a.attributes.rmse, b.attributes.rmse);
    }
}
