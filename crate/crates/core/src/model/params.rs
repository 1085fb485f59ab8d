use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ModelError;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Frozen parameters never enter the tape as differentiable leaves.
    pub trainable: bool,
}

/// Ordered, named collection of model weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Overwrites values by name, checking that every parameter is present
    /// with the expected shape.
    pub fn load<'a>(
        &mut self,
        values: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
    ) -> Result<(), ModelError> {
        let mut seen = vec![false; self.params.len()];
        for (name, value) in values {
            let Some(id) = self.find(name) else { continue };
            let p = &mut self.params[id.0];
            if p.value.shape() != value.shape() {
                return Err(ModelError::ShapeMismatch {
                    name: name.to_string(),
                    expected: p.value.shape().to_vec(),
                    found: value.shape().to_vec(),
                });
            }
            p.value = value.clone();
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(ModelError::MissingTensor(self.params[i].name.clone()));
        }
        Ok(())
    }

    /// Registers every trainable parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| p.trainable.then(|| tape.param(p.value.clone())))
            .collect();
        Bound { vars }
    }
}

/// Tape handles of the trainable parameters for one forward pass.
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    /// Panics when `id` is frozen; frozen weights are read from the store.
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0].expect("parameter is frozen and not bound to the tape")
    }

    /// Gradient per parameter (zeros for trainable params the loss never reached).
    pub fn grads(&self, tape: &Tape) -> Vec<Option<Tensor>> {
        self.vars
            .iter()
            .map(|v| v.map(|v| tape.grad_or_zeros(v)))
            .collect()
    }
}

/// Deterministic initialisers.
pub(crate) struct Init<'a> {
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    /// Glorot-uniform over the first and last axes.
    pub fn glorot(&mut self, shape: &[usize]) -> Tensor {
        let fan_in = shape[0] as f64;
        let fan_out = *shape.last().unwrap() as f64;
        let limit = (6.0 / (fan_in + fan_out)).sqrt();
        self.uniform(shape, limit)
    }

    pub fn uniform(&mut self, shape: &[usize], limit: f64) -> Tensor {
        Tensor::from_fn(shape.to_vec(), |_| self.rng.random_range(-limit..limit))
    }
}
