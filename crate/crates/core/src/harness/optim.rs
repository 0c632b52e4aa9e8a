//! Adam with per-parameter bias correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.step_size > 0.0 && unit(self.beta1) && unit(self.beta2) && self.eps > 0.0) {
            return Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )));
        }
        Ok(())
    }
}

/// First and second moments of one parameter and its update count.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(dims),
            v: Tensor::zeros(dims),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut Moments<T>,
    hp: &AdamConfig,
) -> Result<()> {
    if param.dims() != grad.dims() || param.dims() != state.m.dims() {
        return Err(shape_err!(
            "adam: param {:?}, grad {:?}, moments {:?}",
            param.dims(),
            grad.dims(),
            state.m.dims()
        ));
    }
    state.t += 1;
    let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
    let one = T::one();
    let c1 = T::lit(1.0 - hp.beta1.powf(state.t as f64));
    let c2 = T::lit(1.0 - hp.beta2.powf(state.t as f64));
    let (lr, eps) = (T::lit(hp.step_size), T::lit(hp.eps));
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *p -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

/// Optimizer state for named parameters of a graph.
#[derive(Clone, Debug, Default)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub moments: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            moments: BTreeMap::new(),
        }
    }

    /// Updates each `params[i]` with the already evaluated `grads[i]`.
    pub fn step(&mut self, g: &mut Graph<T>, params: &[NodeId], grads: &[NodeId]) -> Result<()> {
        let grad_values: Vec<Tensor<T>> = grads
            .iter()
            .map(|&id| {
                g.value(id)
                    .cloned()
                    .ok_or_else(|| Error::Graph("gradient not evaluated".into()))
            })
            .collect::<Result<_>>()?;
        for (&p, grad) in params.iter().zip(&grad_values) {
            let name = g
                .name(p)
                .ok_or_else(|| Error::Graph("unnamed parameter".into()))?
                .to_string();
            let state = self
                .moments
                .entry(name)
                .or_insert_with(|| Moments::zeros(grad.dims()));
            let value = g.leaf_value_mut(p)?;
            adam_step(value, grad, state, &self.config)?;
        }
        Ok(())
    }
}
