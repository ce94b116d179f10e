//! Named parameter storage with per-parameter Adam state.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum ParamError {
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
}

/// One named tensor plus its optimizer state.
///
/// Non-trainable entries (batch-norm running statistics) carry empty
/// `m`/`v` and are skipped by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Option<Vec<Real>>,
    pub m: Vec<Real>,
    pub v: Vec<Real>,
    pub trainable: bool,
}

/// All parameters of a network, keyed by hierarchical name.
///
/// A `BTreeMap` keeps iteration order deterministic; the Adam update is
/// per-parameter independent, so the order never affects values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: BTreeMap<String, ParamEntry>,
    step: u64,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter. Names must be unique.
    pub fn insert_trainable(&mut self, name: &str, value: Tensor) {
        let n = value.numel();
        let prev = self.entries.insert(
            name.to_string(),
            ParamEntry { value, grad: None, m: vec![0.0; n], v: vec![0.0; n], trainable: true },
        );
        assert!(prev.is_none(), "duplicate parameter name `{name}`");
    }

    /// Registers a non-trainable buffer (running statistics).
    pub fn insert_buffer(&mut self, name: &str, value: Tensor) {
        let prev = self.entries.insert(
            name.to_string(),
            ParamEntry { value, grad: None, m: Vec::new(), v: Vec::new(), trainable: false },
        );
        assert!(prev.is_none(), "duplicate parameter name `{name}`");
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn entry_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    /// Entries in name order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total element count over trainable parameters.
    pub fn trainable_param_count(&self) -> usize {
        self.entries.values().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    pub fn grad(&self, name: &str) -> Option<&[Real]> {
        self.entries.get(name).and_then(|e| e.grad.as_deref())
    }

    /// Adds `delta` into the gradient of `name`, allocating zeros first if
    /// the parameter has no gradient yet. Unknown names are ignored after a
    /// debug assertion: backward only reaches names the graph got from this
    /// set.
    pub fn accumulate_grad(&mut self, name: &str, delta: &[Real]) {
        debug_assert!(self.entries.contains_key(name), "gradient for unregistered parameter `{name}`");
        if let Some(e) = self.entries.get_mut(name) {
            let g = e.grad.get_or_insert_with(|| vec![0.0; e.value.numel()]);
            for (d, s) in g.iter_mut().zip(delta) {
                *d += *s;
            }
        }
    }

    /// Resets every trainable gradient to zeros (present but zero, so a
    /// following `adam_step` treats untouched parameters as zero-gradient).
    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            if e.trainable {
                e.grad = Some(vec![0.0; e.value.numel()]);
            }
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, t: u64) {
        self.step = t;
    }

    /// One Adam update over all trainable parameters:
    /// `t += 1; m = b1*m + (1-b1)*g; v = b2*v + (1-b2)*g^2;`
    /// `theta -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
    /// Gradients are left untouched.
    pub fn adam_step(&mut self, lr: Real, beta1: Real, beta2: Real, eps: Real) -> Result<(), ParamError> {
        self.step += 1;
        let t = self.step.min(i32::MAX as u64) as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (name, e) in self.entries.iter_mut() {
            if !e.trainable {
                continue;
            }
            let g = e.grad.as_ref().ok_or_else(|| ParamError::MissingGradient(name.clone()))?;
            let theta = e.value.data_mut();
            for i in 0..theta.len() {
                e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * g[i];
                e.v[i] = beta2 * e.v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = e.m[i] / bias1;
                let v_hat = e.v[i] / bias2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Default Adam hyperparameters (original Adam defaults with a conservative
/// learning rate for segmentation).
pub mod adam_defaults {
    use crate::tensor::Real;

    pub const LR: Real = 1e-4;
    pub const BETA1: Real = 0.9;
    pub const BETA2: Real = 0.999;
    pub const EPSILON: Real = 1e-8;
}

/// He-style fan-in scaled normal initialization: `N(0, sqrt(2 / fan_in))`.
///
/// Samples are drawn in f64 and cast, so the stream of values for a given
/// seed is identical across scalar-type builds.
pub fn he_normal<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let numel: usize = shape.iter().product();
    let std = (2.0 / fan_in as f64).sqrt();
    let data = (0..numel)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (z * std) as Real
        })
        .collect();
    Tensor::from_vec(shape, data)
}
