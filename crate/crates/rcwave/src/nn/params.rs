//! Named parameter storage shared by the generator and discriminators.
//!
//! Parameters are registered in a deterministic order at model
//! construction time; that order also fixes the initializer's RNG draws
//! and the checkpoint layout.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use super::graph::{Graph, Grads, TensorId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
}

#[derive(Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn set_all_zero(&mut self) {
        for p in &mut self.params {
            p.value.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// Insert every parameter into a graph as a leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Binding {
        let ids = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), trainable))
            .collect();
        Binding { ids }
    }

    /// Replace values with another set's values, verifying names and shapes.
    /// On mismatch, reports the first offending parameter.
    pub fn load_values_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Config(format!(
                "parameter count mismatch: expected {}, found {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (dst, src) in self.params.iter().zip(other.params.iter()) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::Config(format!(
                    "parameter mismatch at `{}`: expected shape {:?}, found `{}` with shape {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.name,
                    src.value.shape()
                )));
            }
        }
        for (dst, src) in self.params.iter_mut().zip(other.params.iter()) {
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

/// Per-graph handle mapping `ParamId`s to tensor ids.
pub struct Binding {
    ids: Vec<TensorId>,
}

impl Binding {
    pub fn id(&self, p: ParamId) -> TensorId {
        self.ids[p.0]
    }

    /// Collect gradients for every bound parameter (None where a parameter
    /// did not participate in the loss).
    pub fn collect_grads(&self, grads: &Grads) -> Vec<Option<ArrayD<f64>>> {
        self.ids.iter().map(|id| grads.get(*id).cloned()).collect()
    }
}

/// Standard normal draw (Box-Muller); deterministic given the RNG stream.
pub fn randn(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Tensor with entries drawn from N(0, std^2).
pub fn randn_tensor(rng: &mut impl Rng, shape: &[usize], std: f64) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| randn(rng) * std).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// Per-slice L2 norms along axis 0; the weight-norm gain initializer.
pub fn slice_norms(v: &ArrayD<f64>) -> ArrayD<f64> {
    let d0 = v.shape()[0];
    let per = v.len() / d0;
    let data = v.as_slice().unwrap();
    let norms: Vec<f64> = (0..d0)
        .map(|o| {
            data[o * per..(o + 1) * per]
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    ArrayD::from_shape_vec(IxDyn(&[d0]), norms).unwrap()
}
