use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DiffError, Tensor};
use crate::scalar::Scalar;

/// Handle to a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

/// Named parameters with deterministic, seeded initialization.
///
/// Registration order is significant: every initializer draws from one
/// generator seeded with `rng_seed`, so the same sequence of `add_*` calls
/// always produces the same values.
#[derive(Clone, Debug)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
    rng_seed: u64,
    rng: ChaCha8Rng,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Registers an explicit tensor.
    pub fn add_tensor(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
        trainable: bool,
    ) -> Result<ParamId, DiffError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(DiffError::DuplicateParam(name));
        }
        let id = self.params.len();
        let (r, c) = value.shape();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            grad: Tensor::zeros(r, c),
            trainable,
        });
        Ok(ParamId(id))
    }

    /// Uniform in ±sqrt(6 / (rows + cols)).
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
    ) -> Result<ParamId, DiffError> {
        let bound = (6.0 / (rows + cols).max(1) as f64).sqrt();
        self.add_uniform(name, rows, cols, bound)
    }

    /// Uniform in ±`bound`, drawn from the set's generator.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
    ) -> Result<ParamId, DiffError> {
        let data = (0..rows * cols)
            .map(|_| T::lit(self.rng.gen_range(-bound..=bound)))
            .collect();
        self.add_tensor(name, Tensor::from_vec(rows, cols, data), true)
    }

    pub fn add_zeros(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
    ) -> Result<ParamId, DiffError> {
        self.add_tensor(name, Tensor::zeros(rows, cols), true)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of trainable scalars.
    pub fn trainable_scalars(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Adds `grads` onto the stored gradients.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (i, g) in grads.by_param.iter().enumerate() {
            if let Some(g) = g {
                self.params[i].grad.add_assign(g);
            }
        }
    }

    /// Replaces every value with the one of the same name in `other`.
    pub fn load_values_from(&mut self, other: &ParamSet<T>) -> Result<(), DiffError> {
        for p in &mut self.params {
            let src = other
                .index
                .get(&p.name)
                .map(|&i| &other.params[i])
                .ok_or_else(|| DiffError::MissingParam(p.name.clone()))?;
            if src.value.shape() != p.value.shape() {
                return Err(DiffError::Shape {
                    op: "load_values",
                    left: p.value.shape(),
                    right: src.value.shape(),
                });
            }
            p.value = src.value.clone();
        }
        Ok(())
    }
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub(crate) by_param: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `id`, `None` when the parameter was not reachable from the loss.
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.by_param.get(id.0).and_then(Option::as_ref)
    }
}
