//! Bias-corrected Adam.

use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// lr 0.0002 and beta1 0.5 as used for both adversarial networks.
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F = f32> {
    pub m: Tensor<F>,
    pub v: Tensor<F>,
    pub t: u64,
}

impl<F: Float> AdamState<F> {
    pub fn new(param: &Tensor<F>) -> Self {
        AdamState {
            m: param.zeros_like(),
            v: param.zeros_like(),
            t: 0,
        }
    }
}

/// One Adam update of `param` in place. Moments are accumulated in the
/// element type; bias corrections are computed in `f64`.
pub fn adam_step<F: Float>(
    name: &str,
    param: &mut Tensor<F>,
    grad: &Tensor<F>,
    state: &mut AdamState<F>,
    cfg: &AdamConfig,
) -> Result<()> {
    check_step(name, param, grad, state)?;
    apply(param, grad, state, cfg);
    Ok(())
}

fn check_step<F: Float>(name: &str, param: &Tensor<F>, grad: &Tensor<F>, state: &AdamState<F>) -> Result<()> {
    if grad.shape() != param.shape() {
        return Err(TensorError::Contract(format!(
            "adam: gradient extents {} differ from parameter `{name}` extents {}",
            grad.shape(),
            param.shape()
        )));
    }
    if state.m.shape() != param.shape() || state.v.shape() != param.shape() {
        return Err(TensorError::Contract(format!(
            "adam: optimizer state extents differ from parameter `{name}`"
        )));
    }
    if !grad.all_finite() {
        return Err(TensorError::NonFiniteGradient { name: name.to_string() });
    }
    Ok(())
}

fn apply<F: Float>(param: &mut Tensor<F>, grad: &Tensor<F>, state: &mut AdamState<F>, cfg: &AdamConfig) {
    state.t += 1;
    let t = state.t as i32;
    let b1 = F::from_f64(cfg.beta1);
    let b2 = F::from_f64(cfg.beta2);
    let c1 = F::from_f64(1.0 - cfg.beta1.powi(t));
    let c2 = F::from_f64(1.0 - cfg.beta2.powi(t));
    let lr = F::from_f64(cfg.lr);
    let eps = F::from_f64(cfg.eps);
    let one = F::one();
    let (m, v) = (state.m.data_mut(), state.v.data_mut());
    for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam over a named parameter collection.
#[derive(Debug, Clone)]
pub struct Adam<F = f32> {
    pub config: AdamConfig,
    states: BTreeMap<String, AdamState<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            states: BTreeMap::new(),
        }
    }

    pub fn states(&self) -> &BTreeMap<String, AdamState<F>> {
        &self.states
    }

    pub fn restore(config: AdamConfig, states: BTreeMap<String, AdamState<F>>) -> Self {
        Adam { config, states }
    }

    /// Updates every parameter that has a gradient. All gradients are
    /// validated before any parameter moves, so a failed step leaves the
    /// collection untouched.
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor<F>>, grads: &BTreeMap<String, Tensor<F>>) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| TensorError::Contract(format!("adam: gradient for unknown parameter `{name}`")))?;
            let fresh;
            let state = match self.states.get(name) {
                Some(s) => s,
                None => {
                    fresh = AdamState::new(p);
                    &fresh
                }
            };
            check_step(name, p, g, state)?;
        }
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let state = self
                .states
                .entry(name.clone())
                .or_insert_with(|| AdamState::new(p));
            apply(p, g, state, &self.config);
        }
        Ok(())
    }
}
