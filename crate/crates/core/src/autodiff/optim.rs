use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{CoevoError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// First-order optimizer with per-parameter Adam moments.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(CoevoError::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(OptimizerState {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates `params` in place. A missing gradient counts as zero.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<&[f64]>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(CoevoError::Contract(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        if self.first.len() != params.len() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);

        for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            let zeros;
            let g = match grad {
                Some(g) => {
                    if g.len() != param.len() {
                        return Err(CoevoError::Contract(format!(
                            "gradient {i} has {} values for a parameter of {}",
                            g.len(),
                            param.len()
                        )));
                    }
                    *g
                }
                None => {
                    log::warn!("parameter {i} received no gradient; treating it as zero");
                    zeros = vec![0.0; param.len()];
                    &zeros
                }
            };
            let mut values = param.values().to_vec();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, gi) in values.iter_mut().zip(g) {
                        *p -= self.learning_rate * gi;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for j in 0..values.len() {
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                        let m_hat = m[j] / bias1;
                        let v_hat = v[j] / bias2;
                        values[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                    }
                }
            }
            *param = param.with_values(values)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1).unwrap();
        let mut p = vec![Tensor::scalar(1.0)];
        opt.step(&mut p, &[Some(&[2.0])]).unwrap();
        assert!((p[0].item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut opt = OptimizerState::new(kind, 0.05).unwrap();
            let mut p = vec![Tensor::new(1, 3, vec![0.3, -1.0, 2.0]).unwrap()];
            let before = p[0].clone();
            opt.step(&mut p, &[Some(&[0.0; 3])]).unwrap();
            opt.step(&mut p, &[None]).unwrap();
            assert_eq!(p[0], before);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // m_hat = g and v_hat = g^2 after bias correction, so |update| = lr * g / (g + eps).
        let lr = 0.01;
        let mut opt = OptimizerState::new(OptimizerKind::Adam, lr).unwrap();
        let mut p = vec![Tensor::filled(2, 2, 0.5)];
        opt.step(&mut p, &[Some(&[1.0; 4])]).unwrap();
        let expected = 0.5 - lr * 1.0 / (1.0 + 1e-8);
        for &v in p[0].values() {
            assert!((v - expected).abs() < 1e-15);
        }
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn rejects_bad_learning_rate_and_misaligned_gradients() {
        assert!(OptimizerState::new(OptimizerKind::Sgd, 0.0).is_err());
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1).unwrap();
        let mut p = vec![Tensor::zeros(1, 2)];
        assert!(opt.step(&mut p, &[]).is_err());
        assert!(opt.step(&mut p, &[Some(&[1.0])]).is_err());
    }
}
