use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    AdamW { beta1: f64, beta2: f64, eps: f64 },
}

/// Optimizer hyperparameters. The learning rate is supplied per step by the
/// schedule; weight decay is decoupled from the gradient in both kinds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn sgd(momentum: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd { momentum },
            weight_decay,
        }
    }

    pub fn adamw(weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::AdamW {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Rejects non-finite gradients before touching anything.
    pub fn step(&mut self, mut params: Vec<&mut [f64]>, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::shape(format!(
                    "tensor {i}: {} parameters, {} gradients",
                    p.len(),
                    g.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of tensor {i}")));
            }
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            if matches!(self.config.kind, OptimizerKind::AdamW { .. }) {
                self.second = self.first.clone();
            }
        }
        self.step += 1;
        let wd = self.config.weight_decay;
        match self.config.kind {
            OptimizerKind::Sgd { momentum } => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((pj, gj), vj) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                        *vj = momentum * *vj + gj;
                        *pj -= lr * (*vj + wd * *pj);
                    }
                }
            }
            OptimizerKind::AdamW { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step as i32);
                let c2 = 1.0 - beta2.powi(self.step as i32);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((pj, gj), mj), vj) in
                        p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mj = beta1 * *mj + (1.0 - beta1) * gj;
                        *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
                        let update = (*mj / c1) / ((*vj / c2).sqrt() + eps);
                        *pj -= lr * (update + wd * *pj);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_step() {
        let mut p = vec![1.0];
        let mut s = OptimizerState::new(OptimizerConfig::sgd(0.0, 0.0));
        s.step(vec![&mut p], &[vec![1.0]], 0.1).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adamw_first_step_is_lr_sized() {
        let mut p = vec![1.0, -2.0];
        let mut s = OptimizerState::new(OptimizerConfig::adamw(0.0));
        s.step(vec![&mut p], &[vec![3.0, -0.5]], 0.01).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-8);
        assert!((p[1] + 1.99).abs() < 1e-8);
    }

    #[test]
    fn non_finite_gradient_leaves_params_untouched() {
        let mut p = vec![1.0, 1.0];
        let mut s = OptimizerState::new(OptimizerConfig::sgd(0.9, 0.0));
        let err = s
            .step(vec![&mut p], &[vec![0.5, f64::NAN]], 0.1)
            .unwrap_err();
        assert!(err.is_numeric());
        assert_eq!(p, vec![1.0, 1.0]);
    }
}
