//! First-order optimizers behind one interface.
//!
//! Plain SGD and Adam-style adaptive moments share [`OptimizerState`]; the
//! default configuration is Adam with learning rate 0.001 and global-norm
//! gradient clipping at 3 (applied by the caller via
//! [`clip_gradients`](super::clip_gradients) before [`OptimizerState::apply`]).

use serde::{Deserialize, Serialize};

use super::{Grads, Mlp};
use crate::error::{Error, Result};

/// Update rule selector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer hyper-parameters plus per-parameter moment accumulators.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub step_count: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// Moments are shaped from `net` and start at zero.
    pub fn new(kind: OptimizerKind, learning_rate: f64, clip_norm: f64, net: &Mlp) -> Result<Self> {
        if learning_rate <= 0.0 {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        if clip_norm <= 0.0 {
            return Err(Error::Config(format!("clip norm must be positive, got {clip_norm}")));
        }
        let zeros = Grads::zeros_like(net);
        Ok(OptimizerState {
            kind,
            learning_rate,
            clip_norm,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m_w: zeros.w.clone(),
            m_b: zeros.b.clone(),
            v_w: zeros.w,
            v_b: zeros.b,
        })
    }

    /// Apply one update. Errors on non-finite gradients, and verifies that the
    /// updated parameters stay finite.
    pub fn apply(&mut self, net: &mut Mlp, grads: &Grads) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient; aborting the update".into()));
        }
        assert_eq!(grads.w.len(), net.layers.len(), "gradient/network layer count mismatch");
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (l, layer) in net.layers.iter_mut().enumerate() {
                    for (p, g) in layer.w.iter_mut().zip(&grads.w[l]) {
                        *p -= self.learning_rate * g;
                    }
                    for (p, g) in layer.b.iter_mut().zip(&grads.b[l]) {
                        *p -= self.learning_rate * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for l in 0..net.layers.len() {
                    Self::adam_update(
                        &mut net.layers[l].w,
                        &grads.w[l],
                        &mut self.m_w[l],
                        &mut self.v_w[l],
                        self.learning_rate,
                        self.beta1,
                        self.beta2,
                        self.eps,
                        bc1,
                        bc2,
                    );
                    Self::adam_update(
                        &mut net.layers[l].b,
                        &grads.b[l],
                        &mut self.m_b[l],
                        &mut self.v_b[l],
                        self.learning_rate,
                        self.beta1,
                        self.beta2,
                        self.eps,
                        bc1,
                        bc2,
                    );
                }
            }
        }
        if !net.is_finite() {
            return Err(Error::Numeric("parameters became non-finite after an update".into()));
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn adam_update(
        params: &mut [f64],
        grads: &[f64],
        m: &mut [f64],
        v: &mut [f64],
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        bc1: f64,
        bc2: f64,
    ) {
        assert_eq!(params.len(), grads.len(), "gradient shape mismatch");
        for k in 0..params.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * grads[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * grads[k] * grads[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{clip_gradients, Activation};
    use crate::rng::stream;
    use rand::Rng;

    fn single_weight_net() -> Mlp {
        let mut rng = stream(0, "opt");
        let mut net = Mlp::init(&[1, 1], &[Activation::Linear], &[false], &mut rng).unwrap();
        net.layers[0].w[0] = 1.0;
        net.layers[0].b[0] = 0.0;
        net
    }

    #[test]
    fn sgd_step_is_plain_descent() {
        let mut net = single_weight_net();
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, 3.0, &net).unwrap();
        let grads = Grads { w: vec![vec![1.0]], b: vec![vec![0.0]] };
        opt.apply(&mut net, &grads).unwrap();
        assert!((net.layers[0].w[0] - 0.9).abs() < 1e-15, "w = 1, lr = 0.1, g = 1 gives 0.9");
        assert_eq!(opt.step_count, 1);
    }

    #[test]
    fn identical_updates_from_identical_state() {
        let run = || {
            let mut net = single_weight_net();
            let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.001, 3.0, &net).unwrap();
            let grads = Grads { w: vec![vec![0.5]], b: vec![vec![-0.25]] };
            for _ in 0..10 {
                opt.apply(&mut net, &grads).unwrap();
            }
            (net.layers[0].w[0], net.layers[0].b[0])
        };
        assert_eq!(run(), run(), "optimization must be deterministic");
    }

    #[test]
    fn rejects_non_finite_grads() {
        let mut net = single_weight_net();
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.001, 3.0, &net).unwrap();
        let grads = Grads { w: vec![vec![f64::NAN]], b: vec![vec![0.0]] };
        assert!(opt.apply(&mut net, &grads).is_err(), "NaN gradients must abort");
    }

    #[test]
    fn long_random_sequence_keeps_parameters_finite() {
        let mut rng = stream(17, "optfuzz");
        let mut net = Mlp::init(
            &[4, 8, 2],
            &[Activation::Relu, Activation::Tanh],
            &[false, false],
            &mut rng,
        )
        .unwrap();
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.001, 3.0, &net).unwrap();
        for _ in 0..2000 {
            let mut grads = Grads::zeros_like(&net);
            for v in grads.w.iter_mut().chain(grads.b.iter_mut()) {
                for g in v.iter_mut() {
                    *g = rng.gen_range(-10.0..10.0);
                }
            }
            clip_gradients(&mut grads, 3.0);
            opt.apply(&mut net, &grads).unwrap();
        }
        assert!(net.is_finite(), "parameters must stay finite under random updates");
    }
}
