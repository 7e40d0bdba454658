use std::collections::{BTreeMap, HashMap};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-6,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    first: Tensor,
    second: Tensor,
    steps: i32,
}

/// Adam with decoupled weight decay. Moment state is kept per parameter,
/// so parameters that sit out a phase resume with their own step count.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    state: HashMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: HashMap::new(),
        }
    }

    /// Applies one update to every parameter that has a gradient and passes
    /// `trainable`. All gradients are checked for finiteness before anything
    /// is touched.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<()> {
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        for (name, grad) in grads {
            if !trainable(name) {
                continue;
            }
            let param = params
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
            if !param.same_shape(grad) {
                return Err(Error::Dimension {
                    op: "adam_step",
                    lhs: param.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
            let m = self.state.entry(name.clone()).or_insert_with(|| Moments {
                first: Tensor::zeros(grad.rows(), grad.cols()),
                second: Tensor::zeros(grad.rows(), grad.cols()),
                steps: 0,
            });
            m.steps += 1;
            let bias1 = 1.0 - beta1.powi(m.steps);
            let bias2 = 1.0 - beta2.powi(m.steps);
            let p = param.data_mut();
            let (m1, m2) = (m.first.data_mut(), m.second.data_mut());
            for (i, &g) in grad.data().iter().enumerate() {
                p[i] -= lr * weight_decay * p[i];
                m1[i] = beta1 * m1[i] + (1.0 - beta1) * g;
                m2[i] = beta2 * m2[i] + (1.0 - beta2) * g * g;
                let m_hat = m1[i] / bias1;
                let v_hat = m2[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let factor = max_norm / norm;
        grads.values_mut().for_each(|g| g.scale_in_place(factor));
    }
    norm
}
