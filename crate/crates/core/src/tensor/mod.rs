//! Dense tensors with reverse-mode gradients.
//!
//! [`Graph`] is a define-by-run tape: every operation computes its output
//! eagerly and records what it needs for the backward pass. Parameters
//! live outside the tape in a [`ParamStore`] and are inserted as leaves
//! each forward pass; after `backward` their gradients are read back off
//! the tape.
//!
//! Everything is generic over [`Scalar`] (`f32` for runtime, `f64` for
//! tests and gradient checks).

mod checkpoint;
mod gradcheck;
mod graph;
mod kernels;

pub use checkpoint::{load_store, load_tensors, save_store};
pub use gradcheck::{grad_check, GradCheckOptions};
pub use graph::{Graph, VarId};
pub use kernels::{col2im, conv_out_dim, im2col, mm_nn, mm_nt, mm_tn};

use crate::error::{Error, Result};

/// Element type of the numeric stack. `f64` is the test/verification mode;
/// `f32` halves memory for day-to-day runs.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssignOps
    + Copy
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    const NAME: &'static str;

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f32(x: f32) -> Self;
    fn as_f32(self) -> f32;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn from_f32(x: f32) -> Self {
        x
    }

    fn as_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn from_f32(x: f32) -> Self {
        x as f64
    }

    fn as_f32(self) -> f32 {
        self as f32
    }
}

/// Handle to a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub(crate) fn index(self) -> usize {
        self.0
    }
}

/// One named tensor: parameters are trainable, buffers (batch-norm
/// running statistics) are not.
#[derive(Debug, Clone)]
pub struct ParamEntry<F: Scalar> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
    pub trainable: bool,
}

/// Named tensor container shared by the model, the loss head and the
/// optimizer. Entry order is creation order and is stable, which keeps
/// seeded initialization and checkpoints deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F: Scalar> {
    entries: Vec<ParamEntry<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<F>, trainable: bool) -> Result<ParamId> {
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "parameter {name:?}: shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape,
            data,
            trainable,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn add_param(&mut self, name: &str, shape: Vec<usize>, data: Vec<F>) -> Result<ParamId> {
        self.add(name, shape, data, true)
    }

    pub fn add_buffer(&mut self, name: &str, shape: Vec<usize>, data: Vec<F>) -> Result<ParamId> {
        self.add(name, shape, data, false)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry<F> {
        &mut self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<F>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Total number of trainable scalar parameters.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.data.len())
            .sum()
    }
}
