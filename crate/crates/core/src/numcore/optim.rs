use super::params::{Grads, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 6e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamWState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        AdamWState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One update: `theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)`.
pub fn optimizer_step(
    params: &mut ParamStore,
    grads: &Grads,
    state: &mut AdamWState,
    cfg: &AdamWConfig,
) -> Result<()> {
    if state.m.len() != params.len() || grads.tensors.len() != params.len() {
        return Err(Error::Config(format!(
            "optimizer state for {} tensors, grads for {}, params {}",
            state.m.len(),
            grads.tensors.len(),
            params.len()
        )));
    }
    for (id, g) in params.ids().zip(grads.iter()) {
        if g.shape() != params.get(id).shape() || state.m[id.index()].shape() != g.shape() {
            return Err(Error::Shape {
                op: "optimizer_step",
                left: params.get(id).shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", params.name(id))));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let i = id.index();
        let g = grads.get(id).data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let theta = params.get_mut(id).data_mut();
        for k in 0..g.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            theta[k] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * theta[k]);
        }
    }
    Ok(())
}
