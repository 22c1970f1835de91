//! First-order optimizers over a flat parameter vector.

use crate::config::{OptimizerConfig, OptimizerKind};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Optimizer<F> {
    kind: OptimizerKind,
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(config: &OptimizerConfig, num_params: usize) -> Self {
        Self {
            kind: config.kind,
            lr: F::lit(config.learning_rate),
            beta1: F::lit(config.beta1),
            beta2: F::lit(config.beta2),
            eps: F::lit(config.epsilon),
            m: vec![F::zero(); num_params],
            v: vec![F::zero(); num_params],
            t: 0,
        }
    }

    /// One descent step on `params` along `-grad`.
    pub fn step(&mut self, params: &mut [F], grad: &[F]) {
        assert_eq!(params.len(), grad.len(), "parameter / gradient length mismatch");
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p = *p - self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let one = F::one();
                let bias1 = one - self.beta1.powi(self.t);
                let bias2 = one - self.beta2.powi(self.t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
                    let m_hat = self.m[i] / bias1;
                    let v_hat = self.v[i] / bias2;
                    params[i] = params[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
    }
}
