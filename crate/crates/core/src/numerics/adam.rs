use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// Moments and step counter of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamSlot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

/// Adam optimizer state keyed by parameter name.
///
/// A tensor whose gradient is absent or identically zero is left untouched and
/// its step counter does not advance, so a zero gradient is the identity.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub slots: BTreeMap<String, AdamSlot>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            slots: BTreeMap::new(),
        }
    }

    /// Updates a single tensor in place.
    pub fn step_tensor<R: Real>(&mut self, name: &str, param: &mut Tensor<R>, grad: &[R], lr: f64) -> Result<()> {
        if grad.len() != param.len() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: param.shape().to_vec(),
                rhs: vec![grad.len()],
            });
        }
        if grad.iter().all(|g| *g == R::zero()) {
            return Ok(());
        }
        let n = param.len();
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| AdamSlot {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        });
        if slot.m.len() != n {
            return Err(Error::Shape {
                op: "adam_step state",
                lhs: param.shape().to_vec(),
                rhs: vec![slot.m.len()],
            });
        }
        slot.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(slot.step as i32);
        let c2 = 1.0 - beta2.powi(slot.step as i32);
        for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad).zip(&mut slot.m).zip(&mut slot.v) {
            let g = g.f64();
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            *p = R::lit(p.f64() - update);
        }
        Ok(())
    }

    /// Updates every parameter that has a gradient entry.
    pub fn step<R: Real>(
        &mut self,
        params: &mut BTreeMap<String, Tensor<R>>,
        grads: &BTreeMap<String, Vec<R>>,
        lr: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::invalid(format!("adam_step: gradient for unknown parameter {name}")))?;
            self.step_tensor(name, p, g, lr)?;
        }
        Ok(())
    }
}
