//! Named parameter storage with bias-corrected Adam updates.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use rand::Rng;

use super::{Real, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug)]
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

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub frozen: bool,
}

/// Named parameter tensors plus per-parameter Adam moments and a shared
/// step counter. Frozen entries are carried for checkpointing but never
/// updated and never enter a training graph.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Param<T>>,
    step: u64,
    adam: AdamConfig,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
            step: 0,
            adam: AdamConfig::default(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn register(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        self.insert(name, value, false)
    }

    pub fn register_frozen(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        self.insert(name, value, true)
    }

    fn insert(&mut self, name: &str, value: Tensor<T>, frozen: bool) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(TensorError::Contract(format!(
                "parameter '{name}' already registered"
            )));
        }
        let shape = value.shape().to_vec();
        self.entries.insert(
            name.to_string(),
            Param {
                value,
                m: Tensor::zeros(&shape),
                v: Tensor::zeros(&shape),
                frozen,
            },
        );
        Ok(())
    }

    /// Register an affine layer `{prefix}.w` / `{prefix}.b` with weights
    /// uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` and zero bias.
    pub fn register_affine(
        &mut self,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Tensor::from_fn(&[fan_in, fan_out], |_| {
            T::from_f64(rng.gen_range(-bound..bound))
        });
        self.register(&format!("{prefix}.w"), w)?;
        self.register(&format!("{prefix}.b"), Tensor::zeros(&[fan_out]))
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| TensorError::Contract(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| TensorError::Contract(format!("unknown parameter '{name}'")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.get(name)?.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// One bias-corrected Adam step over every trainable parameter.
    /// Every trainable parameter must have a gradient; gradients for
    /// frozen or unknown parameters are contract errors.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor<T>>, lr: T) -> Result<()> {
        for name in grads.keys() {
            let p = self.get(name)?;
            if p.frozen {
                return Err(TensorError::Contract(format!(
                    "gradient supplied for frozen parameter '{name}'"
                )));
            }
        }
        for (name, p) in &self.entries {
            if p.frozen {
                continue;
            }
            let g = grads.get(name).ok_or_else(|| {
                TensorError::Contract(format!("missing gradient for parameter '{name}'"))
            })?;
            if g.shape() != p.value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    expected: p.value.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(TensorError::NonFinite("adam_step gradient"));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(self.adam.beta1);
        let b2 = T::from_f64(self.adam.beta2);
        let eps = T::from_f64(self.adam.eps);
        let c1 = T::one() - T::from_f64(self.adam.beta1.powi(t));
        let c2 = T::one() - T::from_f64(self.adam.beta2.powi(t));
        for (name, p) in self.entries.iter_mut() {
            if p.frozen {
                continue;
            }
            let g = &grads[name];
            for k in 0..g.len() {
                let gv = g.data()[k];
                let m = b1 * p.m.data()[k] + (T::one() - b1) * gv;
                let v = b2 * p.v.data()[k] + (T::one() - b2) * gv * gv;
                p.m.data_mut()[k] = m;
                p.v.data_mut()[k] = v;
                let update = lr * (m / c1) / ((v / c2).sqrt() + eps);
                p.value.data_mut()[k] = p.value.data()[k] - update;
            }
        }
        Ok(())
    }
}
