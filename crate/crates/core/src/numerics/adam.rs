use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::ParameterStore;
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Vec<f32>>,
    second: BTreeMap<String, Vec<f32>>,
}

pub const FIRST_MOMENT_PREFIX: &str = "adam.m.";
pub const SECOND_MOMENT_PREFIX: &str = "adam.v.";

impl AdamState {
    pub fn new(params: &ParameterStore, config: AdamConfig) -> Self {
        let zeros = |t: &Tensor| vec![0.0f32; t.len()];
        Self {
            config,
            step: 0,
            first: params.iter().map(|(n, t)| (n.to_string(), zeros(t))).collect(),
            second: params.iter().map(|(n, t)| (n.to_string(), zeros(t))).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update using the grad buffers in `params`.
    pub fn step(&mut self, params: &mut ParameterStore, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::contract(format!("learning rate must be positive, got {lr}")));
        }
        for (name, t) in params.iter() {
            if t.grad().is_none() {
                return Err(Error::contract(format!("parameter `{name}` has no gradient")));
            }
            if !self.first.contains_key(name) {
                return Err(Error::contract(format!("parameter `{name}` unknown to optimizer")));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (beta1 as f32, beta2 as f32);
        let step_size = (lr / bc1) as f32;
        let inv_sqrt_bc2 = (1.0 / bc2.sqrt()) as f32;
        let eps = eps as f32;
        for (name, tensor) in params.iter_mut() {
            let grad = tensor.grad().expect("checked above").to_vec();
            let m = self.first.get_mut(name).expect("checked above");
            let v = self.second.get_mut(name).expect("checked above");
            for (((p, &g), mi), vi) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                *p -= step_size * *mi / (vi.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }

    /// Moment buffers as named tensors (`adam.m.*`, `adam.v.*`) shaped like
    /// their parameters.
    pub fn export(&self, params: &ParameterStore) -> Result<Vec<(String, Tensor)>> {
        let mut out = Vec::with_capacity(2 * params.len());
        for (prefix, map) in [(FIRST_MOMENT_PREFIX, &self.first), (SECOND_MOMENT_PREFIX, &self.second)] {
            for (name, t) in params.iter() {
                let data = map
                    .get(name)
                    .ok_or_else(|| Error::contract(format!("no moments for `{name}`")))?
                    .clone();
                out.push((format!("{prefix}{name}"), Tensor::new(t.shape(), data)?));
            }
        }
        Ok(out)
    }

    /// Rebuilds optimizer state from exported moment tensors.
    pub fn import(
        params: &ParameterStore,
        config: AdamConfig,
        step: u64,
        tensors: &BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        let mut state = Self::new(params, config);
        state.step = step;
        for (name, t) in params.iter() {
            for (prefix, map) in [(FIRST_MOMENT_PREFIX, &mut state.first), (SECOND_MOMENT_PREFIX, &mut state.second)] {
                let key = format!("{prefix}{name}");
                let m = tensors
                    .get(&key)
                    .ok_or_else(|| Error::contract(format!("missing optimizer tensor `{key}`")))?;
                if m.shape() != t.shape() {
                    return Err(Error::Shape {
                        op: "adam import",
                        lhs: t.shape().to_vec(),
                        rhs: m.shape().to_vec(),
                    });
                }
                map.insert(name.to_string(), m.data().to_vec());
            }
        }
        Ok(state)
    }
}
