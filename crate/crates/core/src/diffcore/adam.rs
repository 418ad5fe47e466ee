use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-15,
        }
    }
}

/// First/second moment estimates for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    /// Parameter updates skipped because their gradient was not finite.
    pub skipped: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |(_, t): (&str, &Tensor)| Tensor::zeros(t.shape());
        Self {
            config,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            step: 0,
            skipped: 0,
        }
    }
}

/// One bias-corrected Adam update.
///
/// `grads` and `lrs` are indexed like the store. A missing gradient leaves
/// the parameter and its moments untouched; a non-finite one skips the
/// parameter and is counted in `state.skipped`.
pub fn adam_step(params: &mut ParamStore, grads: &[Option<Tensor>], lrs: &[f64], state: &mut AdamState) {
    assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
    assert_eq!(lrs.len(), params.len(), "one learning rate per parameter");
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let i = id.index();
        let Some(grad) = &grads[i] else { continue };
        let param = params.get_mut(id);
        assert_eq!(grad.shape(), param.shape(), "gradient shape for {i}");
        if !grad.is_finite() {
            state.skipped += 1;
            log::warn!("adam: non-finite gradient for parameter {i}, update skipped");
            continue;
        }
        let lr = lrs[i];
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (((p, &g), mi), vi) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *mi = beta1 * *mi + (1.0 - beta1) * g;
            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
