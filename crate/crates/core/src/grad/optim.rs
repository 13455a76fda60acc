use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{GradError, Tensor};

/// Named gradient tensors, one per trainable parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients(BTreeMap<String, Tensor>);

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, g: Tensor) {
        self.0.insert(name.to_string(), g);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `self += alpha * other`; entries missing from `self` are created.
    pub fn axpy(&mut self, alpha: f64, other: &Gradients) {
        for (name, g) in &other.0 {
            match self.0.get_mut(name) {
                Some(acc) => acc.axpy(alpha, g),
                None => {
                    let mut t = g.clone();
                    t.scale(alpha);
                    self.0.insert(name.clone(), t);
                }
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for g in self.0.values_mut() {
            g.scale(alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(Tensor::is_finite)
    }

    /// Concatenation of all entries in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.0.values().flat_map(|t| t.data().iter().copied()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Slot {
    value: Tensor,
    first: Tensor,
    second: Tensor,
}

/// Trainable parameters together with their Adam moment estimates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    slots: BTreeMap<String, Slot>,
    step: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds (or replaces) a parameter with zeroed moments.
    pub fn insert(&mut self, name: &str, value: Tensor) {
        let first = Tensor::zeros(value.shape());
        let second = Tensor::zeros(value.shape());
        self.slots.insert(name.to_string(), Slot { value, first, second });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.slots.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k, &s.value))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// First and second Adam moments of a parameter.
    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        self.slots.get(name).map(|s| (&s.first, &s.second))
    }

    /// Restores optimizer state, e.g. from a checkpoint.
    pub fn restore_moments(&mut self, name: &str, first: Tensor, second: Tensor) -> Result<(), GradError> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| GradError::Missing(format!("parameter `{name}`")))?;
        if first.shape() != slot.value.shape() || second.shape() != slot.value.shape() {
            return Err(GradError::Shape(format!("moments of `{name}` do not match its shape")));
        }
        slot.first = first;
        slot.second = second;
        Ok(())
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Flattened parameter values in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.slots.values().flat_map(|s| s.value.data().iter().copied()).collect()
    }

    pub fn zero_gradients(&self) -> Gradients {
        let mut g = Gradients::new();
        for (name, s) in &self.slots {
            g.insert(name, Tensor::zeros(s.value.shape()));
        }
        g
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient entry are
/// left untouched (their moments are not decayed either).
pub fn adam_step(params: &mut ParamSet, grads: &Gradients, lr: f64, cfg: AdamConfig) -> Result<(), GradError> {
    if !(lr > 0.0) {
        return Err(GradError::Config(format!("learning rate must be positive, got {lr}")));
    }
    for (name, g) in grads.iter() {
        let slot = params
            .slots
            .get(name)
            .ok_or_else(|| GradError::Missing(format!("gradient for unknown parameter `{name}`")))?;
        if slot.value.shape() != g.shape() {
            return Err(GradError::Shape(format!(
                "gradient of `{name}` has shape {:?}, parameter has {:?}",
                g.shape(),
                slot.value.shape()
            )));
        }
    }
    params.step += 1;
    let t = params.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads.iter() {
        let slot = params.slots.get_mut(name).expect("checked above");
        let (value, first, second) = (slot.value.data_mut(), slot.first.data_mut(), slot.second.data_mut());
        for i in 0..value.len() {
            let gi = g.data()[i];
            first[i] = cfg.beta1 * first[i] + (1.0 - cfg.beta1) * gi;
            second[i] = cfg.beta2 * second[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = first[i] / c1;
            let v_hat = second[i] / c2;
            value[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Step decay: `base_lr * decay^floor(epoch / step_size)`.
pub fn lr_schedule(base_lr: f64, epoch: usize, step_size: usize, decay: f64) -> f64 {
    let k = epoch / step_size.max(1);
    base_lr * decay.powi(k as i32)
}
