use std::collections::BTreeMap;

use super::tensor::{ParamStore, Tensor};
use super::NumError;

/// Parameter group of a tensor name: the text before the first `.`.
pub fn param_group(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Heavy-ball momentum state with one learning rate per parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    momentum: f32,
    learning_rates: BTreeMap<String, f32>,
    velocity: BTreeMap<String, Tensor>,
}

impl OptimState {
    pub fn new(momentum: f32) -> Result<Self, NumError> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(NumError::InvalidArgument(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            momentum,
            learning_rates: BTreeMap::new(),
            velocity: BTreeMap::new(),
        })
    }

    pub fn with_lr(mut self, group: impl Into<String>, lr: f32) -> Self {
        self.set_lr(group, lr);
        self
    }

    pub fn set_lr(&mut self, group: impl Into<String>, lr: f32) {
        self.learning_rates.insert(group.into(), lr);
    }

    pub fn lr(&self, group: &str) -> Option<f32> {
        self.learning_rates.get(group).copied()
    }

    pub fn momentum(&self) -> f32 {
        self.momentum
    }

    pub fn velocity(&self) -> &BTreeMap<String, Tensor> {
        &self.velocity
    }

    pub fn set_velocity(&mut self, name: impl Into<String>, v: Tensor) {
        self.velocity.insert(name.into(), v);
    }

    /// Classical momentum: `v ← μ·v + g`, `p ← p − lr·v`.
    ///
    /// Only parameters present in `grads` move. Velocities start at zero.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<(), NumError> {
        for (name, g) in grads {
            let lr = self
                .lr(param_group(name))
                .ok_or_else(|| NumError::InvalidArgument(format!("no learning rate for {name}")))?;
            let p = params
                .get_mut(name)
                .ok_or_else(|| NumError::MissingParam(name.clone()))?;
            if !p.same_shape(g) {
                return Err(NumError::ShapeMismatch(format!(
                    "gradient {:?} for parameter {name} {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            if !v.same_shape(g) {
                return Err(NumError::ShapeMismatch(format!("velocity for {name}")));
            }
            let mu = self.momentum;
            for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = mu * *vv + gv;
                *pv -= lr * *vv;
            }
        }
        Ok(())
    }
}

/// Functional form of [`OptimState::step`].
pub fn sgd_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimState,
) -> Result<(), NumError> {
    state.step(params, grads)
}
