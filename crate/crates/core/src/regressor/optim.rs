//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        AdamWHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2 }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamWState {
    pub fn new(n: usize) -> Self {
        AdamWState { step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// One AdamW update in place:
/// `θ ← θ − lr·wd·θ`, then `θ ← θ − lr·m̂/(√v̂ + ε)` with bias-corrected moments.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut AdamWState, hyper: &AdamWHyper) {
    assert_eq!(params.len(), grads.len(), "gradient length must match parameters");
    assert_eq!(params.len(), state.m.len(), "optimizer state length must match parameters");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let decay = 1.0 - hyper.lr * hyper.weight_decay;
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *p *= decay;
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
}
