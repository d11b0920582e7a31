use std::collections::BTreeMap;

use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    /// Adam first moment.
    pub m: Tensor,
    /// Adam second moment.
    pub v: Tensor,
}

/// Named trainable tensors together with their optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: BTreeMap<String, ParamId>,
    step: u64,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            params: Vec::new(),
            index: BTreeMap::new(),
            step: 0,
            seed,
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter {name:?}")));
        }
        let id = ParamId(self.params.len());
        let shape = value.shape().to_vec();
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Glorot-uniform matrix: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot(&mut self, name: &str, rows: usize, cols: usize, rng: &mut Rng) -> Result<ParamId> {
        let value = glorot(rows, cols, rng)?;
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    /// Restores a parameter with explicit optimizer moments (checkpoint loading).
    pub(crate) fn push_raw(&mut self, param: Parameter) -> Result<ParamId> {
        let shape = param.value.shape();
        if param.m.shape() != shape || param.v.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "moment shapes of {:?} do not match its value",
                param.name
            )));
        }
        let name = param.name.clone();
        let id = self.add(&name, param.value)?;
        self.params[id.0].m = param.m;
        self.params[id.0].v = param.v;
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::Validation(format!("missing parameter {name:?}")))
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub(crate) fn param_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Result<Tensor> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::matrix(rows, cols, data)
}

/// Per-parameter gradient buffers, indexed like the store they were made for.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Empty slots; parameters not reached by a backward pass stay missing.
    pub fn new(store: &ParamStore) -> Self {
        Gradients {
            grads: vec![None; store.len()],
        }
    }

    pub fn zeros(store: &ParamStore) -> Self {
        Gradients {
            grads: store
                .iter()
                .map(|(_, p)| Some(Tensor::zeros(p.value.shape())))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn set(&mut self, id: ParamId, grad: Tensor) {
        self.grads[id.0] = Some(grad);
    }

    pub(crate) fn slot(&mut self, id: ParamId, shape: &[usize]) -> &mut Tensor {
        self.grads[id.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(Tensor::norm_sq)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their joint L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for g in self.grads.iter_mut().flatten() {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
        }
        norm
    }
}
