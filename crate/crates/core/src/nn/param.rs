//! Named parameters, initializers, and the Adam optimizer.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tape::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    Uniform {
        fan_in: usize,
    },
    Normal {
        std: f64,
    },
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub init: Init,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Parameter {
    /// Adam first and second moments.
    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    names: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let n = rows * cols;
        let data: Vec<f64> = match init {
            Init::Uniform { fan_in } => {
                if fan_in == 0 {
                    return Err(Error::Config(format!("parameter {name:?} has fan_in 0")));
                }
                let a = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..=a)).collect()
            }
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        self.insert(name, Tensor { rows, cols, data }, init)
    }

    /// Adds a parameter with an explicit value.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, init: Init) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = self.params.len();
        let n = value.len();
        self.params.push(Parameter {
            grad: Tensor::zeros(value.rows, value.cols),
            value,
            init,
            name: name.clone(),
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        self.names.insert(name, id);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `scale` times the parameter gradients in `grads`.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        let mut pairs: Vec<_> = grads.params().collect();
        pairs.sort_by_key(|(id, _)| *id);
        for (id, g) in pairs {
            if let Some(g) = g {
                for (o, d) in self.params[id.0].grad.data.iter_mut().zip(g) {
                    *o += scale * d;
                }
            }
        }
    }
}

/// Bias-corrected adaptive moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0 }
    }

    /// One update of every parameter from its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for p in &mut store.params {
            for i in 0..p.value.len() {
                let g = p.grad.data[i];
                p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
                p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
                let mhat = p.m[i] / c1;
                let vhat = p.v[i] / c2;
                p.value.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
