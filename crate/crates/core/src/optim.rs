//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{Mlp, MlpGrads};
use crate::tensor::Tensor2;

/// Optimizer hyperparameters. The decay term is decoupled from the gradient
/// moments: `p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators shaped like the parameters they track.
#[derive(Debug, Clone)]
pub struct OptimState {
    step: u64,
    m: Vec<TensorPair>,
    v: Vec<TensorPair>,
}

#[derive(Debug, Clone)]
struct TensorPair {
    weight: Tensor2,
    bias: Vec<f64>,
}

impl OptimState {
    pub fn new(mlp: &Mlp) -> Self {
        let zeros = |m: &Mlp| -> Vec<TensorPair> {
            m.layers
                .iter()
                .map(|l| TensorPair {
                    weight: Tensor2::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect()
        };
        Self {
            step: 0,
            m: zeros(mlp),
            v: zeros(mlp),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One AdamW update. Rejects non-finite gradients before touching parameters.
pub fn adamw_step(
    params: &mut Mlp,
    grads: &MlpGrads,
    state: &mut OptimState,
    cfg: &AdamWConfig,
) -> Result<()> {
    if cfg.learning_rate <= 0.0 {
        return Err(Error::Config("learning_rate must be > 0".into()));
    }
    if grads.layers.len() != params.layers.len() || state.m.len() != params.layers.len() {
        return Err(Error::Shape("optimizer state/gradient layer count mismatch".into()));
    }
    if !grads.is_finite() {
        return Err(Error::Divergence("non-finite gradient in adamw_step".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    for (k, layer) in params.layers.iter_mut().enumerate() {
        let g = &grads.layers[k];
        if !layer.weight.same_shape(&g.d_weight) || layer.bias.len() != g.d_bias.len() {
            return Err(Error::Shape(format!("gradient shape mismatch at layer {k}")));
        }
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        update_slice(
            layer.weight.as_mut_slice(),
            g.d_weight.as_slice(),
            m.weight.as_mut_slice(),
            v.weight.as_mut_slice(),
            cfg,
            bc1,
            bc2,
        );
        update_slice(&mut layer.bias, &g.d_bias, &mut m.bias, &mut v.bias, cfg, bc1, bc2);
    }
    Ok(())
}

#[inline]
fn update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &AdamWConfig,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -=
            cfg.learning_rate * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * params[i]);
    }
}
