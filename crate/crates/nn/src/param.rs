//! Named trainable parameters and their gradient/optimizer state.

use std::collections::BTreeMap;
use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;

use crate::error::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    pub m: Array2<f64>,
    pub v: Array2<f64>,
    pub step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Array2<f64>) -> Self {
        let dim = value.raw_dim();
        Self {
            name: name.into(),
            value,
            grad: Array2::zeros(dim),
            m: Array2::zeros(dim),
            v: Array2::zeros(dim),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name, which is a
    /// programming error in model construction.
    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        id
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    /// Glorot-uniform initialisation.
    pub fn xavier<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit));
        self.add(name, value)
    }

    /// Uniform initialisation in `[-scale, scale)`.
    pub fn uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut R,
    ) -> ParamId {
        let value = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale));
        self.add(name, value)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Adds `grads` into every parameter's accumulator.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in &grads.0 {
            self.params[id.0].grad += g;
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Overwrites the value of a named parameter, checking its shape.
    pub fn set_value(&mut self, name: &str, value: Array2<f64>) -> Result<()> {
        let id = self.id(name)?;
        let p = &mut self.params[id.0];
        if p.value.dim() != value.dim() {
            return Err(NnError::ShapeMismatch {
                op: "set_value",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }
}

/// Gradients produced by one backward pass, keyed by parameter.
///
/// Parameters that were not reachable from the loss are absent and
/// treated as zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients(pub BTreeMap<ParamId, Array2<f64>>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.0.get(&id)
    }

    /// Gradient for `id`, or zeros shaped like the parameter.
    pub fn get_or_zero(&self, store: &ParamStore, id: ParamId) -> Array2<f64> {
        self.0
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(store.value(id).raw_dim()))
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (id, g) in &other.0 {
            match self.0.get_mut(id) {
                Some(acc) => *acc += g,
                None => {
                    self.0.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.0.values_mut() {
            g.mapv_inplace(|x| x * factor);
        }
    }
}
