//! Central finite-difference verification of tape gradients.

use super::tape::{OpKind, Tape};
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor for the relative error, so gradients that are zero up
/// to rounding do not report huge ratios.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Compares the tape gradient of `loss` against central differences with step `h`.
///
/// `loss` must be a deterministic function of the parameter values. It is
/// called once on watched parameters and `2 * elements` times on constants.
pub fn check_gradients<F>(
    params: &[(String, Tensor)],
    loss: F,
    h: f64,
    fault: Option<OpKind>,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    let tape = Tape::new();
    tape.inject_fault(fault);
    let watched: Vec<Tensor> = params.iter().map(|(_, t)| tape.watch(t)).collect();
    let value = loss(&tape, &watched)?;
    let grads = tape.backward(&value)?;

    let mut current: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut tensors = Vec::with_capacity(params.len());
    for (k, (name, base)) in params.iter().enumerate() {
        let analytic = grads.wrt(&watched[k]);
        let mut check = TensorCheck {
            name: name.clone(),
            elements: base.len(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for j in 0..base.len() {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut v = base.values().to_vec();
                v[j] += delta;
                current[k] = base.with_values(v)?;
                let probe = Tape::new();
                Ok(loss(&probe, &current)?.item())
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            let err = relative_error(analytic[j], numeric);
            if err > check.max_rel_err || j == 0 {
                check.max_rel_err = err;
                check.worst_index = j;
                check.analytic = analytic[j];
                check.numeric = numeric;
            }
        }
        current[k] = base.clone();
        tensors.push(check);
    }
    Ok(GradCheckReport { tensors })
}
