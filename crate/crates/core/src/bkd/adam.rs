use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one parameter tensor.
///
/// Each lane keeps its own step count. Lanes masked out by `touched` are
/// skipped entirely (moments and value untouched), which is how timestep
/// parameters absent from a batch stay bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: Vec<u32>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: vec![0; n],
        }
    }

    pub fn step(
        &mut self,
        params: &mut [f32],
        grads: &[f64],
        touched: Option<&[bool]>,
        lr: f64,
        cfg: &AdamConfig,
    ) {
        debug_assert_eq!(params.len(), grads.len());
        debug_assert_eq!(params.len(), self.m.len());
        for i in 0..params.len() {
            if touched.is_some_and(|t| !t[i]) {
                continue;
            }
            let g = grads[i];
            self.t[i] += 1;
            let t = self.t[i] as i32;
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / (1.0 - cfg.beta1.powi(t));
            let v_hat = self.v[i] / (1.0 - cfg.beta2.powi(t));
            let update = lr * m_hat / (v_hat.sqrt() + cfg.eps);
            params[i] = (params[i] as f64 - update) as f32;
        }
    }
}
