//! A small reverse-mode tape over `f64` tensors.
//!
//! The graph is rebuilt per forward pass (define-by-run). Every op stores
//! its inputs by id; `backward` walks the tape in reverse and accumulates
//! gradients only along paths that reach a trainable leaf, which is how
//! the discriminator update sees generated audio as a constant while the
//! generator update differentiates through it.
//!
//! Everything is single-threaded and evaluated in construction order, so
//! results are bit-reproducible across runs.

use ndarray::{ArrayD, IxDyn};

use super::conv::{self, Conv1dSpec, Conv2dSpec};
use crate::spectral::{MelAnalyzer, MelCtx};

pub const SQRT1_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const WN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Scale(TensorId, f64),
    LeakyRelu(TensorId, f64),
    Tanh(TensorId),
    Conv1d {
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
        spec: Conv1dSpec,
    },
    ConvT1d {
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
        stride: usize,
        padding: usize,
    },
    Conv2d {
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
        spec: Conv2dSpec,
    },
    WeightNorm {
        v: TensorId,
        g: TensorId,
    },
    RepeatTime {
        x: TensorId,
        factor: usize,
    },
    StretchRows {
        x: TensorId,
        out_h: usize,
    },
    ReflectPadTail {
        x: TensorId,
        pad: usize,
    },
    Reshape(TensorId),
    Dwt(TensorId),
    AvgPool2(TensorId),
    MeanAll(TensorId),
    SqMeanAgainst {
        x: TensorId,
        target: f64,
    },
    L1Mean {
        a: TensorId,
        b: TensorId,
    },
    WeightedSum(Vec<(TensorId, f64)>),
    MelSpec {
        x: TensorId,
        ctx: Box<MelCtx>,
    },
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one `backward` call, indexed by tensor id.
pub struct Grads {
    by_node: Vec<Option<ArrayD<f64>>>,
}

impl Grads {
    pub fn get(&self, id: TensorId) -> Option<&ArrayD<f64>> {
        self.by_node.get(id.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn value(&self, id: TensorId) -> &ArrayD<f64> {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v.as_slice().unwrap()[0]
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op, needs_grad: bool) -> TensorId {
        debug_assert!(value.is_standard_layout());
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn slice(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].value.as_slice().unwrap()
    }

    pub fn leaf(&mut self, value: ArrayD<f64>, needs_grad: bool) -> TensorId {
        self.push(value, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, value: ArrayD<f64>) -> TensorId {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        let value = self.nodes[x.0].value.mapv(|v| v * c);
        let ng = self.needs(x);
        self.push(value, Op::Scale(x, c), ng)
    }

    pub fn leaky_relu(&mut self, x: TensorId, slope: f64) -> TensorId {
        let value = self.nodes[x.0]
            .value
            .mapv(|v| if v >= 0.0 { v } else { slope * v });
        let ng = self.needs(x);
        self.push(value, Op::LeakyRelu(x, slope), ng)
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        let value = self.nodes[x.0].value.mapv(f64::tanh);
        let ng = self.needs(x);
        self.push(value, Op::Tanh(x), ng)
    }

    /// Weight-normalized weight: `w[o,..] = g[o] * v[o,..] / max(||v[o,..]||, eps)`,
    /// slices taken along axis 0.
    pub fn weight_norm(&mut self, v: TensorId, g: TensorId) -> TensorId {
        let vs = self.nodes[v.0].value.clone();
        let gs = self.slice(g);
        let d0 = vs.shape()[0];
        assert_eq!(gs.len(), d0, "weight_norm gain length");
        let per = vs.len() / d0;
        let vdata = vs.as_slice().unwrap();
        let mut out = vec![0.0; vs.len()];
        for o in 0..d0 {
            let row = &vdata[o * per..(o + 1) * per];
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(WN_EPS);
            let s = gs[o] / n;
            for (dst, src) in out[o * per..(o + 1) * per].iter_mut().zip(row) {
                *dst = s * src;
            }
        }
        let value = ArrayD::from_shape_vec(vs.raw_dim(), out).unwrap();
        let ng = self.needs(v) || self.needs(g);
        self.push(value, Op::WeightNorm { v, g }, ng)
    }

    pub fn conv1d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
        spec: Conv1dSpec,
    ) -> TensorId {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 2, "conv1d input must be (c, l)");
        assert_eq!(ws.len(), 3, "conv1d weight must be (c_out, c_in/g, k)");
        assert_eq!(ws[1] * spec.groups, xs[0], "conv1d channel mismatch");
        let (c_in, l) = (xs[0], xs[1]);
        let (c_out, c_in_pg, k) = (ws[0], ws[1], ws[2]);
        let l_out = spec.out_len(l, k);
        let mut out = vec![0.0; c_out * l_out];
        conv::conv1d_fwd(
            self.slice(x),
            (c_in, l),
            self.slice(w),
            (c_out, c_in_pg, k),
            b.map(|b| self.slice(b)),
            &spec,
            &mut out,
            l_out,
        );
        let value = ArrayD::from_shape_vec(IxDyn(&[c_out, l_out]), out).unwrap();
        let ng = self.needs(x) || self.needs(w) || b.map(|b| self.needs(b)).unwrap_or(false);
        self.push(value, Op::Conv1d { x, w, b, spec }, ng)
    }

    pub fn conv_t1d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
        stride: usize,
        padding: usize,
    ) -> TensorId {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(ws.len(), 3, "conv_t1d weight must be (c_in, c_out, k)");
        assert_eq!(ws[0], xs[0], "conv_t1d channel mismatch");
        let (c_in, l) = (xs[0], xs[1]);
        let (c_out, k) = (ws[1], ws[2]);
        let l_out = conv::conv_t1d_out_len(l, k, stride, padding);
        let mut out = vec![0.0; c_out * l_out];
        conv::conv_t1d_fwd(
            self.slice(x),
            (c_in, l),
            self.slice(w),
            (c_in, c_out, k),
            b.map(|b| self.slice(b)),
            stride,
            padding,
            &mut out,
            l_out,
        );
        let value = ArrayD::from_shape_vec(IxDyn(&[c_out, l_out]), out).unwrap();
        let ng = self.needs(x) || self.needs(w) || b.map(|b| self.needs(b)).unwrap_or(false);
        self.push(
            value,
            Op::ConvT1d {
                x,
                w,
                b,
                stride,
                padding,
            },
            ng,
        )
    }

    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
        spec: Conv2dSpec,
    ) -> TensorId {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 3, "conv2d input must be (c, h, w)");
        assert_eq!(ws.len(), 4, "conv2d weight must be (c_out, c_in, kh, kw)");
        assert_eq!(ws[1], xs[0], "conv2d channel mismatch");
        let (c_in, h, wdim) = (xs[0], xs[1], xs[2]);
        let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
        let (oh, ow) = spec.out_dims((h, wdim), (kh, kw));
        let mut out = vec![0.0; c_out * oh * ow];
        conv::conv2d_fwd(
            self.slice(x),
            (c_in, h, wdim),
            self.slice(w),
            (c_out, c_in, kh, kw),
            b.map(|b| self.slice(b)),
            &spec,
            &mut out,
            (oh, ow),
        );
        let value = ArrayD::from_shape_vec(IxDyn(&[c_out, oh, ow]), out).unwrap();
        let ng = self.needs(x) || self.needs(w) || b.map(|b| self.needs(b)).unwrap_or(false);
        self.push(value, Op::Conv2d { x, w, b, spec }, ng)
    }

    /// Nearest-neighbor upsampling along the last axis of a (c, l) tensor.
    pub fn repeat_time(&mut self, x: TensorId, factor: usize) -> TensorId {
        assert!(factor >= 1, "repeat factor must be >= 1");
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 2);
        let (c, l) = (xs[0], xs[1]);
        let src = self.slice(x);
        let mut out = vec![0.0; c * l * factor];
        for ci in 0..c {
            let row = &src[ci * l..(ci + 1) * l];
            let orow = &mut out[ci * l * factor..(ci + 1) * l * factor];
            for (t, v) in row.iter().enumerate() {
                orow[t * factor..(t + 1) * factor].fill(*v);
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[c, l * factor]), out).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::RepeatTime { x, factor }, ng)
    }

    /// Nearest-neighbor resize along the row (height) axis of a (c, h, w)
    /// tensor. Used to align wavelet residual branches with the period
    /// discriminators' stride-3 feature grids.
    pub fn stretch_rows(&mut self, x: TensorId, out_h: usize) -> TensorId {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3);
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let src = self.slice(x);
        let mut out = vec![0.0; c * out_h * w];
        for ci in 0..c {
            for j in 0..out_h {
                let sj = j * h / out_h;
                let s0 = (ci * h + sj) * w;
                let d0 = (ci * out_h + j) * w;
                out[d0..d0 + w].copy_from_slice(&src[s0..s0 + w]);
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[c, out_h, w]), out).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::StretchRows { x, out_h }, ng)
    }

    /// Reflect-pad the last axis of a (c, l) tensor at its end.
    pub fn reflect_pad_tail(&mut self, x: TensorId, pad: usize) -> TensorId {
        if pad == 0 {
            return x;
        }
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 2);
        let (c, l) = (xs[0], xs[1]);
        assert!(pad <= l.saturating_sub(1), "reflect pad longer than input");
        let src = self.slice(x);
        let mut out = vec![0.0; c * (l + pad)];
        for ci in 0..c {
            let row = &src[ci * l..(ci + 1) * l];
            let orow = &mut out[ci * (l + pad)..(ci + 1) * (l + pad)];
            orow[..l].copy_from_slice(row);
            for j in 0..pad {
                orow[l + j] = row[l - 2 - j];
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[c, l + pad]), out).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::ReflectPadTail { x, pad }, ng)
    }

    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> TensorId {
        let v = &self.nodes[x.0].value;
        assert_eq!(v.len(), shape.iter().product::<usize>(), "reshape size");
        let data = v.as_slice().unwrap().to_vec();
        let value = ArrayD::from_shape_vec(IxDyn(shape), data).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::Reshape(x), ng)
    }

    /// One level of the orthonormal Haar analysis bank applied channel-wise:
    /// (c, l) -> (2c, ceil(l/2)) with low sub-band at channel 2i and high at
    /// 2i+1. Odd lengths are zero-padded by one sample.
    pub fn dwt(&mut self, x: TensorId) -> TensorId {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 2);
        let (c, l) = (xs[0], xs[1]);
        assert!(l >= 2, "dwt input too short");
        let lh = l.div_ceil(2);
        let src = self.slice(x);
        let mut out = vec![0.0; 2 * c * lh];
        for ci in 0..c {
            let row = &src[ci * l..(ci + 1) * l];
            for n in 0..lh {
                let a = row[2 * n];
                let b = if 2 * n + 1 < l { row[2 * n + 1] } else { 0.0 };
                out[(2 * ci) * lh + n] = (a + b) * SQRT1_2;
                out[(2 * ci + 1) * lh + n] = (a - b) * SQRT1_2;
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[2 * c, lh]), out).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::Dwt(x), ng)
    }

    /// Factor-2 mean pooling along the last axis; a trailing odd sample
    /// becomes its own block so the output length matches `dwt`.
    pub fn avg_pool2(&mut self, x: TensorId) -> TensorId {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 2);
        let (c, l) = (xs[0], xs[1]);
        let lh = l.div_ceil(2);
        let src = self.slice(x);
        let mut out = vec![0.0; c * lh];
        for ci in 0..c {
            let row = &src[ci * l..(ci + 1) * l];
            for n in 0..lh {
                out[ci * lh + n] = if 2 * n + 1 < l {
                    0.5 * (row[2 * n] + row[2 * n + 1])
                } else {
                    row[2 * n]
                };
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[c, lh]), out).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::AvgPool2(x), ng)
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let v = &self.nodes[x.0].value;
        let m = v.sum() / v.len() as f64;
        let ng = self.needs(x);
        self.push(
            ArrayD::from_shape_vec(IxDyn(&[1]), vec![m]).unwrap(),
            Op::MeanAll(x),
            ng,
        )
    }

    /// mean((x - target)^2): the least-squares GAN building block.
    pub fn sq_mean_against(&mut self, x: TensorId, target: f64) -> TensorId {
        let v = self.slice(x);
        let m = v.iter().map(|a| (a - target) * (a - target)).sum::<f64>() / v.len() as f64;
        let ng = self.needs(x);
        self.push(
            ArrayD::from_shape_vec(IxDyn(&[1]), vec![m]).unwrap(),
            Op::SqMeanAgainst { x, target },
            ng,
        )
    }

    /// mean(|a - b|): feature-matching / spectrogram reconstruction term.
    pub fn l1_mean(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "l1_mean shape mismatch");
        let va = self.slice(a);
        let vb = self.slice(b);
        let m = va
            .iter()
            .zip(vb)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / va.len() as f64;
        let ng = self.needs(a) || self.needs(b);
        self.push(
            ArrayD::from_shape_vec(IxDyn(&[1]), vec![m]).unwrap(),
            Op::L1Mean { a, b },
            ng,
        )
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(TensorId, f64)]) -> TensorId {
        let mut acc = 0.0;
        let mut ng = false;
        for (id, w) in terms {
            debug_assert_eq!(self.value(*id).len(), 1);
            acc += w * self.scalar_value(*id);
            ng |= self.needs(*id);
        }
        self.push(
            ArrayD::from_shape_vec(IxDyn(&[1]), vec![acc]).unwrap(),
            Op::WeightedSum(terms.to_vec()),
            ng,
        )
    }

    /// Log-mel spectrogram of a (1, l) waveform, differentiable through the
    /// windowed DFT, mel projection, and floor clamp.
    pub fn mel_spec(&mut self, analyzer: &MelAnalyzer, x: TensorId) -> TensorId {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 2);
        assert_eq!(xs[0], 1, "mel_spec expects a mono (1, l) waveform");
        let (values, ctx) = analyzer.mel_with_ctx(self.slice(x));
        let value = values.into_dyn();
        let ng = self.needs(x);
        self.push(
            value,
            Op::MelSpec {
                x,
                ctx: Box::new(ctx),
            },
            ng,
        )
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&self, loss: TensorId, analyzer: &MelAnalyzer) -> Grads {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(ArrayD::from_shape_vec(IxDyn(&[1]), vec![1.0]).unwrap());
        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let dy = grads[i].take().unwrap();
            self.accumulate(i, &dy, &mut grads, analyzer);
            // Re-store the grad so callers can read interior grads too.
            grads[i] = Some(dy);
        }
        Grads { by_node: grads }
    }

    fn ensure<'a>(
        &self,
        grads: &'a mut [Option<ArrayD<f64>>],
        id: TensorId,
    ) -> &'a mut ArrayD<f64> {
        let slot = &mut grads[id.0];
        if slot.is_none() {
            *slot = Some(ArrayD::zeros(self.nodes[id.0].value.raw_dim()));
        }
        slot.as_mut().unwrap()
    }

    #[allow(clippy::too_many_lines)]
    fn accumulate(
        &self,
        i: usize,
        dy: &ArrayD<f64>,
        grads: &mut [Option<ArrayD<f64>>],
        analyzer: &MelAnalyzer,
    ) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.needs(*a) {
                    *self.ensure(grads, *a) += dy;
                }
                if self.needs(*b) {
                    *self.ensure(grads, *b) += dy;
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    *self.ensure(grads, *a) += dy;
                }
                if self.needs(*b) {
                    *self.ensure(grads, *b) -= dy;
                }
            }
            Op::Scale(x, c) => {
                if self.needs(*x) {
                    let c = *c;
                    self.ensure(grads, *x).zip_mut_with(dy, |g, d| *g += c * d);
                }
            }
            Op::LeakyRelu(x, slope) => {
                if self.needs(*x) {
                    let slope = *slope;
                    let xv = self.nodes[x.0].value.clone();
                    let gx = self.ensure(grads, *x);
                    let gxs = gx.as_slice_mut().unwrap();
                    let dys = dy.as_slice().unwrap();
                    for ((g, d), xv) in gxs.iter_mut().zip(dys).zip(xv.as_slice().unwrap()) {
                        *g += if *xv >= 0.0 { *d } else { slope * d };
                    }
                }
            }
            Op::Tanh(x) => {
                if self.needs(*x) {
                    let yv = self.nodes[i].value.clone();
                    let gx = self.ensure(grads, *x);
                    let gxs = gx.as_slice_mut().unwrap();
                    let dys = dy.as_slice().unwrap();
                    for ((g, d), y) in gxs.iter_mut().zip(dys).zip(yv.as_slice().unwrap()) {
                        *g += (1.0 - y * y) * d;
                    }
                }
            }
            Op::WeightNorm { v, g } => {
                let vv = self.nodes[v.0].value.clone();
                let gv = self.nodes[g.0].value.clone();
                let d0 = vv.shape()[0];
                let per = vv.len() / d0;
                let vdata = vv.as_slice().unwrap();
                let gdata = gv.as_slice().unwrap();
                let dys = dy.as_slice().unwrap();
                let needs_v = self.needs(*v);
                let needs_g = self.needs(*g);
                let mut dv = vec![0.0; if needs_v { vv.len() } else { 0 }];
                let mut dg = vec![0.0; if needs_g { d0 } else { 0 }];
                for o in 0..d0 {
                    let row = &vdata[o * per..(o + 1) * per];
                    let drow = &dys[o * per..(o + 1) * per];
                    let raw_n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let n = raw_n.max(WN_EPS);
                    let dw_dot_v = drow.iter().zip(row).map(|(d, x)| d * x).sum::<f64>();
                    if needs_g {
                        dg[o] = dw_dot_v / n;
                    }
                    if needs_v {
                        let s = gdata[o] / n;
                        let dst = &mut dv[o * per..(o + 1) * per];
                        if raw_n > WN_EPS {
                            let corr = dw_dot_v / (n * n);
                            for ((dvi, d), x) in dst.iter_mut().zip(drow).zip(row) {
                                *dvi = s * (d - corr * x);
                            }
                        } else {
                            for (dvi, d) in dst.iter_mut().zip(drow) {
                                *dvi = s * d;
                            }
                        }
                    }
                }
                if needs_v {
                    let gv_arr = ArrayD::from_shape_vec(vv.raw_dim(), dv).unwrap();
                    *self.ensure(grads, *v) += &gv_arr;
                }
                if needs_g {
                    let gg_arr = ArrayD::from_shape_vec(gv.raw_dim(), dg).unwrap();
                    *self.ensure(grads, *g) += &gg_arr;
                }
            }
            Op::Conv1d { x, w, b, spec } => {
                let xs = self.shape(*x).to_vec();
                let ws = self.shape(*w).to_vec();
                let l_out = self.shape(TensorId(i))[1];
                let needs_x = self.needs(*x);
                let needs_w = self.needs(*w);
                let needs_b = b.map(|b| self.needs(b)).unwrap_or(false);
                let mut dxb = vec![0.0; if needs_x { xs[0] * xs[1] } else { 0 }];
                let mut dwb = vec![0.0; if needs_w { ws[0] * ws[1] * ws[2] } else { 0 }];
                let mut dbb = vec![0.0; if needs_b { ws[0] } else { 0 }];
                conv::conv1d_bwd(
                    self.slice(*x),
                    (xs[0], xs[1]),
                    self.slice(*w),
                    (ws[0], ws[1], ws[2]),
                    spec,
                    dy.as_slice().unwrap(),
                    l_out,
                    needs_x.then_some(&mut dxb[..]),
                    needs_w.then_some(&mut dwb[..]),
                    needs_b.then_some(&mut dbb[..]),
                );
                if needs_x {
                    let arr = ArrayD::from_shape_vec(IxDyn(&xs), dxb).unwrap();
                    *self.ensure(grads, *x) += &arr;
                }
                if needs_w {
                    let arr = ArrayD::from_shape_vec(IxDyn(&ws), dwb).unwrap();
                    *self.ensure(grads, *w) += &arr;
                }
                if needs_b {
                    let arr = ArrayD::from_shape_vec(IxDyn(&[ws[0]]), dbb).unwrap();
                    *self.ensure(grads, b.unwrap()) += &arr;
                }
            }
            Op::ConvT1d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let xs = self.shape(*x).to_vec();
                let ws = self.shape(*w).to_vec();
                let l_out = self.shape(TensorId(i))[1];
                let needs_x = self.needs(*x);
                let needs_w = self.needs(*w);
                let needs_b = b.map(|b| self.needs(b)).unwrap_or(false);
                let mut dxb = vec![0.0; if needs_x { xs[0] * xs[1] } else { 0 }];
                let mut dwb = vec![0.0; if needs_w { ws[0] * ws[1] * ws[2] } else { 0 }];
                let mut dbb = vec![0.0; if needs_b { ws[1] } else { 0 }];
                conv::conv_t1d_bwd(
                    self.slice(*x),
                    (xs[0], xs[1]),
                    self.slice(*w),
                    (ws[0], ws[1], ws[2]),
                    *stride,
                    *padding,
                    dy.as_slice().unwrap(),
                    l_out,
                    needs_x.then_some(&mut dxb[..]),
                    needs_w.then_some(&mut dwb[..]),
                    needs_b.then_some(&mut dbb[..]),
                );
                if needs_x {
                    let arr = ArrayD::from_shape_vec(IxDyn(&xs), dxb).unwrap();
                    *self.ensure(grads, *x) += &arr;
                }
                if needs_w {
                    let arr = ArrayD::from_shape_vec(IxDyn(&ws), dwb).unwrap();
                    *self.ensure(grads, *w) += &arr;
                }
                if needs_b {
                    let arr = ArrayD::from_shape_vec(IxDyn(&[ws[1]]), dbb).unwrap();
                    *self.ensure(grads, b.unwrap()) += &arr;
                }
            }
            Op::Conv2d { x, w, b, spec } => {
                let xs = self.shape(*x).to_vec();
                let ws = self.shape(*w).to_vec();
                let os = self.shape(TensorId(i)).to_vec();
                let needs_x = self.needs(*x);
                let needs_w = self.needs(*w);
                let needs_b = b.map(|b| self.needs(b)).unwrap_or(false);
                let mut dxb = vec![0.0; if needs_x { xs.iter().product() } else { 0 }];
                let mut dwb = vec![0.0; if needs_w { ws.iter().product() } else { 0 }];
                let mut dbb = vec![0.0; if needs_b { ws[0] } else { 0 }];
                conv::conv2d_bwd(
                    self.slice(*x),
                    (xs[0], xs[1], xs[2]),
                    self.slice(*w),
                    (ws[0], ws[1], ws[2], ws[3]),
                    spec,
                    dy.as_slice().unwrap(),
                    (os[1], os[2]),
                    needs_x.then_some(&mut dxb[..]),
                    needs_w.then_some(&mut dwb[..]),
                    needs_b.then_some(&mut dbb[..]),
                );
                if needs_x {
                    let arr = ArrayD::from_shape_vec(IxDyn(&xs), dxb).unwrap();
                    *self.ensure(grads, *x) += &arr;
                }
                if needs_w {
                    let arr = ArrayD::from_shape_vec(IxDyn(&ws), dwb).unwrap();
                    *self.ensure(grads, *w) += &arr;
                }
                if needs_b {
                    let arr = ArrayD::from_shape_vec(IxDyn(&[ws[0]]), dbb).unwrap();
                    *self.ensure(grads, b.unwrap()) += &arr;
                }
            }
            Op::RepeatTime { x, factor } => {
                if self.needs(*x) {
                    let xs = self.shape(*x).to_vec();
                    let (c, l) = (xs[0], xs[1]);
                    let f = *factor;
                    let dys = dy.as_slice().unwrap();
                    let gx = self.ensure(grads, *x);
                    let gxs = gx.as_slice_mut().unwrap();
                    for ci in 0..c {
                        for t in 0..l {
                            let base = ci * l * f + t * f;
                            gxs[ci * l + t] += dys[base..base + f].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::StretchRows { x, out_h } => {
                if self.needs(*x) {
                    let xs = self.shape(*x).to_vec();
                    let (c, h, w) = (xs[0], xs[1], xs[2]);
                    let dys = dy.as_slice().unwrap();
                    let gx = self.ensure(grads, *x);
                    let gxs = gx.as_slice_mut().unwrap();
                    for ci in 0..c {
                        for j in 0..*out_h {
                            let sj = j * h / out_h;
                            let d0 = (ci * out_h + j) * w;
                            let s0 = (ci * h + sj) * w;
                            for q in 0..w {
                                gxs[s0 + q] += dys[d0 + q];
                            }
                        }
                    }
                }
            }
            Op::ReflectPadTail { x, pad } => {
                if self.needs(*x) {
                    let xs = self.shape(*x).to_vec();
                    let (c, l) = (xs[0], xs[1]);
                    let lp = l + pad;
                    let dys = dy.as_slice().unwrap();
                    let gx = self.ensure(grads, *x);
                    let gxs = gx.as_slice_mut().unwrap();
                    for ci in 0..c {
                        for t in 0..l {
                            gxs[ci * l + t] += dys[ci * lp + t];
                        }
                        for j in 0..*pad {
                            gxs[ci * l + (l - 2 - j)] += dys[ci * lp + l + j];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if self.needs(*x) {
                    let xs = self.shape(*x).to_vec();
                    let data = dy.as_slice().unwrap().to_vec();
                    let arr = ArrayD::from_shape_vec(IxDyn(&xs), data).unwrap();
                    *self.ensure(grads, *x) += &arr;
                }
            }
            Op::Dwt(x) => {
                if self.needs(*x) {
                    let xs = self.shape(*x).to_vec();
                    let (c, l) = (xs[0], xs[1]);
                    let lh = l.div_ceil(2);
                    let dys = dy.as_slice().unwrap();
                    let gx = self.ensure(grads, *x);
                    let gxs = gx.as_slice_mut().unwrap();
                    for ci in 0..c {
                        let dl = &dys[(2 * ci) * lh..(2 * ci + 1) * lh];
                        let dh = &dys[(2 * ci + 1) * lh..(2 * ci + 2) * lh];
                        for n in 0..lh {
                            gxs[ci * l + 2 * n] += (dl[n] + dh[n]) * SQRT1_2;
                            if 2 * n + 1 < l {
                                gxs[ci * l + 2 * n + 1] += (dl[n] - dh[n]) * SQRT1_2;
                            }
                        }
                    }
                }
            }
            Op::AvgPool2(x) => {
                if self.needs(*x) {
                    let xs = self.shape(*x).to_vec();
                    let (c, l) = (xs[0], xs[1]);
                    let lh = l.div_ceil(2);
                    let dys = dy.as_slice().unwrap();
                    let gx = self.ensure(grads, *x);
                    let gxs = gx.as_slice_mut().unwrap();
                    for ci in 0..c {
                        for n in 0..lh {
                            if 2 * n + 1 < l {
                                gxs[ci * l + 2 * n] += 0.5 * dys[ci * lh + n];
                                gxs[ci * l + 2 * n + 1] += 0.5 * dys[ci * lh + n];
                            } else {
                                gxs[ci * l + 2 * n] += dys[ci * lh + n];
                            }
                        }
                    }
                }
            }
            Op::MeanAll(x) => {
                if self.needs(*x) {
                    let n = self.nodes[x.0].value.len() as f64;
                    let d = dy.as_slice().unwrap()[0] / n;
                    self.ensure(grads, *x).mapv_inplace(move |g| g + d);
                }
            }
            Op::SqMeanAgainst { x, target } => {
                if self.needs(*x) {
                    let xv = self.nodes[x.0].value.clone();
                    let n = xv.len() as f64;
                    let d = dy.as_slice().unwrap()[0];
                    let t = *target;
                    let gx = self.ensure(grads, *x);
                    let gxs = gx.as_slice_mut().unwrap();
                    for (g, xi) in gxs.iter_mut().zip(xv.as_slice().unwrap()) {
                        *g += d * 2.0 * (xi - t) / n;
                    }
                }
            }
            Op::L1Mean { a, b } => {
                let va = self.nodes[a.0].value.clone();
                let vb = self.nodes[b.0].value.clone();
                let n = va.len() as f64;
                let d = dy.as_slice().unwrap()[0];
                if self.needs(*a) {
                    let ga = self.ensure(grads, *a);
                    let gas = ga.as_slice_mut().unwrap();
                    for ((g, x), y) in gas
                        .iter_mut()
                        .zip(va.as_slice().unwrap())
                        .zip(vb.as_slice().unwrap())
                    {
                        *g += d * (x - y).signum_or_zero() / n;
                    }
                }
                if self.needs(*b) {
                    let gb = self.ensure(grads, *b);
                    let gbs = gb.as_slice_mut().unwrap();
                    for ((g, x), y) in gbs
                        .iter_mut()
                        .zip(va.as_slice().unwrap())
                        .zip(vb.as_slice().unwrap())
                    {
                        *g -= d * (x - y).signum_or_zero() / n;
                    }
                }
            }
            Op::WeightedSum(terms) => {
                let d = dy.as_slice().unwrap()[0];
                for (id, w) in terms {
                    if self.needs(*id) {
                        let g = self.ensure(grads, *id);
                        g.as_slice_mut().unwrap()[0] += d * w;
                    }
                }
            }
            Op::MelSpec { x, ctx } => {
                if self.needs(*x) {
                    let xs = self.shape(*x).to_vec();
                    let mut dxb = vec![0.0; xs[1]];
                    analyzer.mel_backward(ctx, dy, &mut dxb);
                    let arr = ArrayD::from_shape_vec(IxDyn(&xs), dxb).unwrap();
                    *self.ensure(grads, *x) += &arr;
                }
            }
        }
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    #[inline]
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_arr(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> ArrayD<f64> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
    }

    /// Central-difference check of d(loss)/d(input_i) for every element of
    /// every input against the tape's analytic gradient.
    fn fd_check<F>(inputs: &mut [ArrayD<f64>], tol: f64, build: F)
    where
        F: Fn(&mut Graph, &[TensorId]) -> TensorId,
    {
        let analyzer = MelAnalyzer::global();
        let eval = |inputs: &[ArrayD<f64>]| -> f64 {
            let mut g = Graph::new();
            let ids: Vec<TensorId> = inputs.iter().map(|v| g.leaf(v.clone(), true)).collect();
            let loss = build(&mut g, &ids);
            g.scalar_value(loss)
        };
        let mut g = Graph::new();
        let ids: Vec<TensorId> = inputs.iter().map(|v| g.leaf(v.clone(), true)).collect();
        let loss = build(&mut g, &ids);
        let grads = g.backward(loss, analyzer);
        for i in 0..inputs.len() {
            let analytic = grads
                .get(ids[i])
                .cloned()
                .unwrap_or_else(|| ArrayD::zeros(inputs[i].raw_dim()));
            for j in 0..inputs[i].len() {
                let orig = inputs[i].as_slice().unwrap()[j];
                let h = 1e-5 * (1.0 + orig.abs());
                inputs[i].as_slice_mut().unwrap()[j] = orig + h;
                let lp = eval(inputs);
                inputs[i].as_slice_mut().unwrap()[j] = orig - h;
                let lm = eval(inputs);
                inputs[i].as_slice_mut().unwrap()[j] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let a = analytic.as_slice().unwrap()[j];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (a - numeric).abs() / denom < tol,
                    "input {i} elem {j}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn fd_conv1d_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut inputs = vec![
            rand_arr(&mut rng, &[2, 9], 1.0),
            rand_arr(&mut rng, &[3, 2, 3], 1.0),
            rand_arr(&mut rng, &[3], 1.0),
        ];
        fd_check(&mut inputs, 1e-6, |g, ids| {
            let y = g.conv1d(ids[0], ids[1], Some(ids[2]), Conv1dSpec::plain(1, 1));
            g.sq_mean_against(y, 0.3)
        });
    }

    #[test]
    fn fd_conv1d_strided_dilated_grouped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut inputs = vec![
            rand_arr(&mut rng, &[4, 17], 1.0),
            rand_arr(&mut rng, &[6, 2, 3], 1.0),
            rand_arr(&mut rng, &[6], 1.0),
        ];
        let spec = Conv1dSpec {
            stride: 2,
            padding: 3,
            dilation: 2,
            groups: 2,
        };
        fd_check(&mut inputs, 1e-6, move |g, ids| {
            let y = g.conv1d(ids[0], ids[1], Some(ids[2]), spec);
            g.sq_mean_against(y, -0.2)
        });
    }

    #[test]
    fn fd_conv_t1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut inputs = vec![
            rand_arr(&mut rng, &[3, 7], 1.0),
            rand_arr(&mut rng, &[3, 2, 8], 1.0),
            rand_arr(&mut rng, &[2], 1.0),
        ];
        fd_check(&mut inputs, 1e-6, |g, ids| {
            let y = g.conv_t1d(ids[0], ids[1], Some(ids[2]), 4, 2);
            g.sq_mean_against(y, 0.1)
        });
    }

    #[test]
    fn fd_conv2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut inputs = vec![
            rand_arr(&mut rng, &[2, 11, 3], 1.0),
            rand_arr(&mut rng, &[3, 2, 5, 1], 1.0),
            rand_arr(&mut rng, &[3], 1.0),
        ];
        let spec = Conv2dSpec {
            stride: (3, 1),
            padding: (2, 0),
        };
        fd_check(&mut inputs, 1e-6, move |g, ids| {
            let y = g.conv2d(ids[0], ids[1], Some(ids[2]), spec);
            g.sq_mean_against(y, 0.05)
        });
    }

    #[test]
    fn fd_weight_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut inputs = vec![
            rand_arr(&mut rng, &[3, 2, 4], 1.0),
            rand_arr(&mut rng, &[3], 1.0),
        ];
        fd_check(&mut inputs, 1e-6, |g, ids| {
            let w = g.weight_norm(ids[0], ids[1]);
            g.sq_mean_against(w, 0.7)
        });
    }

    #[test]
    fn fd_activations_and_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // keep values away from the leaky-relu kink
        let mut inputs = vec![rand_arr(&mut rng, &[2, 10], 1.0).mapv(|v| v + v.signum() * 0.1)];
        fd_check(&mut inputs, 1e-5, |g, ids| {
            let a = g.leaky_relu(ids[0], 0.1);
            let b = g.tanh(a);
            let c = g.reflect_pad_tail(b, 3);
            let d = g.repeat_time(c, 2);
            g.sq_mean_against(d, 0.2)
        });
    }

    #[test]
    fn fd_dwt_avgpool_stretch() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut inputs = vec![rand_arr(&mut rng, &[2, 12], 1.0)];
        fd_check(&mut inputs, 1e-6, |g, ids| {
            let d = g.dwt(ids[0]);
            let d2 = g.dwt(d);
            let r = g.reshape(d2, &[8, 3, 1]);
            let s = g.stretch_rows(r, 5);
            let p = g.avg_pool2(ids[0]);
            let l1 = g.sq_mean_against(s, 0.0);
            let l2 = g.sq_mean_against(p, 0.4);
            g.weighted_sum(&[(l1, 1.0), (l2, 2.0)])
        });
    }

    #[test]
    fn fd_l1_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut inputs = vec![
            rand_arr(&mut rng, &[3, 5], 1.0),
            rand_arr(&mut rng, &[3, 5], 1.0),
        ];
        fd_check(&mut inputs, 1e-5, |g, ids| g.l1_mean(ids[0], ids[1]));
    }

    #[test]
    fn fd_mel_spec() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut inputs = vec![rand_arr(&mut rng, &[1, 1100], 0.5)];
        fd_check(&mut inputs, 1e-4, |g, ids| {
            let m = g.mel_spec(MelAnalyzer::global(), ids[0]);
            g.sq_mean_against(m, -2.0)
        });
    }

    #[test]
    fn fd_composite_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut inputs = vec![
            rand_arr(&mut rng, &[2, 12], 0.8),
            rand_arr(&mut rng, &[3, 2, 3], 0.8),
            rand_arr(&mut rng, &[3, 1, 4], 0.8),
            rand_arr(&mut rng, &[1, 24], 0.8),
        ];
        fd_check(&mut inputs, 1e-5, |g, ids| {
            let c = g.conv1d(ids[0], ids[1], None, Conv1dSpec::plain(1, 1));
            let a = g.leaky_relu(c, 0.1);
            let t = g.conv_t1d(a, ids[2], None, 2, 1);
            let y = g.tanh(t);
            let d = g.dwt(y);
            let flat = g.reshape(d, &[1, 24]);
            let l1 = g.l1_mean(flat, ids[3]);
            let l2 = g.sq_mean_against(y, 1.0);
            g.weighted_sum(&[(l1, 2.0), (l2, 1.0)])
        });
    }

    #[test]
    fn detached_inputs_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xv = rand_arr(&mut rng, &[1, 8], 1.0);
        let wv = rand_arr(&mut rng, &[1, 1, 3], 1.0);
        let mut g = Graph::new();
        let x = g.leaf(xv, false); // constant
        let w = g.leaf(wv, true);
        let y = g.conv1d(x, w, None, Conv1dSpec::plain(1, 1));
        let loss = g.sq_mean_against(y, 0.0);
        let grads = g.backward(loss, MelAnalyzer::global());
        assert!(grads.get(x).is_none());
        assert!(grads.get(w).is_some());
    }

    #[test]
    fn repeat_time_values() {
        let mut g = Graph::new();
        let x = g.constant(ArrayD::from_shape_vec(IxDyn(&[1, 2]), vec![1.0, 2.0]).unwrap());
        let y = g.repeat_time(x, 2);
        assert_eq!(g.value(y).as_slice().unwrap(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn dwt_channel_order_is_low_then_high() {
        let mut g = Graph::new();
        let x = g.constant(
            ArrayD::from_shape_vec(IxDyn(&[1, 4]), vec![1.0, 1.0, 1.0, 1.0]).unwrap(),
        );
        let y = g.dwt(x);
        let v = g.value(y).as_slice().unwrap().to_vec();
        let s2 = std::f64::consts::SQRT_2;
        assert!((v[0] - s2).abs() < 1e-12 && (v[1] - s2).abs() < 1e-12);
        assert!(v[2].abs() < 1e-12 && v[3].abs() < 1e-12);
    }
}
