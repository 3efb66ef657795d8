//! Weight-normalized convolution layers.
//!
//! Each layer stores parameter handles only; values live in a [`ParamSet`]
//! and are bound into a fresh graph per forward pass. Weight norm keeps the
//! direction tensor `v` and per-slice gain `g` as the trainable quantities,
//! with gains initialized to `||v||` so the initial effective weight equals
//! the raw draw.

use rand::Rng;

use super::conv::{Conv1dSpec, Conv2dSpec};
use super::graph::{Graph, TensorId};
use super::params::{randn_tensor, slice_norms, Binding, ParamId, ParamSet};

pub struct WnConv1d {
    v: ParamId,
    g: ParamId,
    b: Option<ParamId>,
    pub spec: Conv1dSpec,
}

impl WnConv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        spec: Conv1dSpec,
        init_std: f64,
        bias: bool,
    ) -> Self {
        let v = randn_tensor(rng, &[c_out, c_in / spec.groups, k], init_std);
        let g = slice_norms(&v);
        let v = ps.add(format!("{name}.v"), v);
        let g = ps.add(format!("{name}.g"), g);
        let b = bias.then(|| {
            ps.add(
                format!("{name}.b"),
                ndarray::ArrayD::zeros(ndarray::IxDyn(&[c_out])),
            )
        });
        WnConv1d { v, g, b, spec }
    }

    pub fn forward(&self, gr: &mut Graph, bind: &Binding, x: TensorId) -> TensorId {
        let w = gr.weight_norm(bind.id(self.v), bind.id(self.g));
        gr.conv1d(x, w, self.b.map(|b| bind.id(b)), self.spec)
    }
}

pub struct WnConvT1d {
    v: ParamId,
    g: ParamId,
    b: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl WnConvT1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        init_std: f64,
        bias: bool,
    ) -> Self {
        let v = randn_tensor(rng, &[c_in, c_out, k], init_std);
        let g = slice_norms(&v);
        let v = ps.add(format!("{name}.v"), v);
        let g = ps.add(format!("{name}.g"), g);
        let b = bias.then(|| {
            ps.add(
                format!("{name}.b"),
                ndarray::ArrayD::zeros(ndarray::IxDyn(&[c_out])),
            )
        });
        WnConvT1d {
            v,
            g,
            b,
            stride,
            padding,
        }
    }

    pub fn forward(&self, gr: &mut Graph, bind: &Binding, x: TensorId) -> TensorId {
        let w = gr.weight_norm(bind.id(self.v), bind.id(self.g));
        gr.conv_t1d(x, w, self.b.map(|b| bind.id(b)), self.stride, self.padding)
    }
}

pub struct WnConv2d {
    v: ParamId,
    g: ParamId,
    b: Option<ParamId>,
    pub spec: Conv2dSpec,
}

impl WnConv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        (kh, kw): (usize, usize),
        spec: Conv2dSpec,
        init_std: f64,
        bias: bool,
    ) -> Self {
        let v = randn_tensor(rng, &[c_out, c_in, kh, kw], init_std);
        let g = slice_norms(&v);
        let v = ps.add(format!("{name}.v"), v);
        let g = ps.add(format!("{name}.g"), g);
        let b = bias.then(|| {
            ps.add(
                format!("{name}.b"),
                ndarray::ArrayD::zeros(ndarray::IxDyn(&[c_out])),
            )
        });
        WnConv2d { v, g, b, spec }
    }

    pub fn forward(&self, gr: &mut Graph, bind: &Binding, x: TensorId) -> TensorId {
        let w = gr.weight_norm(bind.id(self.v), bind.id(self.g));
        gr.conv2d(x, w, self.b.map(|b| bind.id(b)), self.spec)
    }
}
