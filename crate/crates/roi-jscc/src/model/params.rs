//! Named parameter storage shared by every network in the crate.
//!
//! A [`ParamSet`] owns the raw `f64` arrays and hands out stable
//! [`ParamId`]s at registration time.  Layers keep ids, never arrays, so a
//! set can be bound onto a fresh tape for every forward pass
//! ([`ParamSet::bind`]) while the optimizer and the checkpoint writer
//! iterate the same storage by name.
//!
//! Initialisation is derived from the parameter's full name and the run
//! seed: each array gets its own [`Stream::Init`] generator keyed by
//! `hash_name(name)`, so values do not depend on registration order and
//! stay reproducible when unrelated layers are added or removed.

use std::collections::HashMap;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::util::{hash_name, stream_rng, Stream};

/// Handle to one parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// How a freshly registered parameter is filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform Glorot/Xavier: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    /// All zeros (output projections, biases, mask projections).
    Zeros,
    /// All ones (layer-norm gains).
    Ones,
}

/// Named collection of trainable arrays.
#[derive(Debug, Clone)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<ArrayD<f64>>,
    index: HashMap<String, usize>,
    seed: u64,
}

impl ParamSet {
    /// Empty set whose parameters will be initialised from `seed`.
    pub fn new(seed: u64) -> Self {
        Self { names: Vec::new(), values: Vec::new(), index: HashMap::new(), seed }
    }

    /// Registers a parameter and fills it according to `init`.
    ///
    /// # Panics
    ///
    /// Panics if `name` is already registered; duplicate names are a
    /// programming error in layer construction, not a runtime condition.
    pub fn register(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let value = match init {
            Init::Glorot { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = stream_rng(self.seed, Stream::Init, hash_name(name), 0);
                ArrayD::from_shape_simple_fn(IxDyn(shape), || {
                    rng.random_range(-bound..bound)
                })
            }
            Init::Zeros => ArrayD::zeros(IxDyn(shape)),
            Init::Ones => ArrayD::ones(IxDyn(shape)),
        };
        let id = ParamId(self.values.len());
        self.names.push(name.to_owned());
        self.values.push(value);
        self.index.insert(name.to_owned(), id.0);
        id
    }

    /// Number of parameters (arrays, not scalars).
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// True when no parameter has been registered.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Value of one parameter.
    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.values[id.0]
    }

    /// Mutable value, used by the optimizer update step.
    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.values[id.0]
    }

    /// Name of one parameter.
    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Looks a parameter up by its full name.
    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    /// All ids in registration order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    /// `(name, value)` pairs in registration order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    /// Replaces the value of the parameter called `name`.
    ///
    /// Fails when the name is unknown or the shape differs from the
    /// registered one; both indicate a checkpoint/model mismatch.
    pub fn set_value(&mut self, name: &str, value: ArrayD<f64>) -> Result<()> {
        let id = self
            .lookup(name)
            .ok_or_else(|| Error::protocol(format!("unknown parameter {name:?}")))?;
        let current = &self.values[id.0];
        if current.shape() != value.shape() {
            return Err(Error::protocol(format!(
                "parameter {name:?} has shape {:?} but checkpoint provides {:?}",
                current.shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Binds every parameter onto `tape` as a differentiable variable.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Binding<'t> {
        let tensors = self.values.iter().map(|v| tape.var(v.clone())).collect();
        Binding { tensors }
    }
}

/// One forward pass worth of tape variables, aligned with the
/// [`ParamSet`] that produced it.
pub struct Binding<'t> {
    tensors: Vec<Tensor<'t>>,
}

impl<'t> Binding<'t> {
    /// Builds a binding from explicit tensors (one per parameter, in
    /// registration order).  Used by gradient checks that need to feed
    /// externally perturbed weights through a layer.
    pub fn from_tensors(tensors: Vec<Tensor<'t>>) -> Self {
        Self { tensors }
    }

    /// Tape tensor for a parameter.
    pub fn get(&self, id: ParamId) -> Tensor<'t> {
        self.tensors[id.0]
    }

    /// All bound tensors in registration order.
    pub fn tensors(&self) -> &[Tensor<'t>] {
        &self.tensors
    }
}
