//! Direct convolution kernels over contiguous `f64` slices.
//!
//! These are the compute hot spots of the crate. All loops are written so
//! that the stride-1 inner loop runs over contiguous slices and
//! auto-vectorizes; strided variants fall back to index stepping.

/// Geometry of a 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv1dSpec {
    fn default() -> Self {
        Conv1dSpec {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl Conv1dSpec {
    pub fn plain(stride: usize, padding: usize) -> Self {
        Conv1dSpec {
            stride,
            padding,
            ..Default::default()
        }
    }

    pub fn out_len(&self, l: usize, k: usize) -> usize {
        let span = self.dilation * (k - 1) + 1;
        (l + 2 * self.padding).saturating_sub(span) / self.stride + 1
    }
}

/// Geometry of a 2-D convolution (no dilation or groups; the period
/// discriminators do not need them).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dSpec {
    pub fn out_dims(&self, (h, w): (usize, usize), (kh, kw): (usize, usize)) -> (usize, usize) {
        let oh = (h + 2 * self.padding.0).saturating_sub(kh) / self.stride.0 + 1;
        let ow = (w + 2 * self.padding.1).saturating_sub(kw) / self.stride.1 + 1;
        (oh, ow)
    }
}

/// Output index range `[t0, t1)` for which the input index
/// `i = t*stride + off - padding` stays inside `[0, l)`.
#[inline]
fn tap_range(l: usize, l_out: usize, stride: usize, padding: usize, off: usize) -> (usize, usize) {
    let t0 = if off >= padding {
        0
    } else {
        (padding - off).div_ceil(stride)
    };
    // need t*stride + off - padding <= l - 1
    let t1 = if l + padding <= off {
        0
    } else {
        ((l - 1 + padding - off) / stride + 1).min(l_out)
    };
    (t0, t1.max(t0))
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// out[oc][t] = b[oc] + sum_{ic,kk} w[oc][ic][kk] * x[ic][t*s + kk*d - p]
pub fn conv1d_fwd(
    x: &[f64],
    (c_in, l): (usize, usize),
    w: &[f64],
    (c_out, c_in_pg, k): (usize, usize, usize),
    bias: Option<&[f64]>,
    spec: &Conv1dSpec,
    out: &mut [f64],
    l_out: usize,
) {
    let c_out_pg = c_out / spec.groups;
    debug_assert_eq!(c_in_pg * spec.groups, c_in);
    for g in 0..spec.groups {
        for oc_local in 0..c_out_pg {
            let oc = g * c_out_pg + oc_local;
            let o_row = &mut out[oc * l_out..(oc + 1) * l_out];
            if let Some(b) = bias {
                o_row.fill(b[oc]);
            } else {
                o_row.fill(0.0);
            }
            for ic_local in 0..c_in_pg {
                let ic = g * c_in_pg + ic_local;
                let x_row = &x[ic * l..(ic + 1) * l];
                let w_base = (oc * c_in_pg + ic_local) * k;
                for kk in 0..k {
                    let wv = w[w_base + kk];
                    let off = kk * spec.dilation;
                    let (t0, t1) = tap_range(l, l_out, spec.stride, spec.padding, off);
                    if t0 >= t1 {
                        continue;
                    }
                    let i0 = t0 * spec.stride + off - spec.padding;
                    if spec.stride == 1 {
                        axpy(&mut o_row[t0..t1], wv, &x_row[i0..i0 + (t1 - t0)]);
                    } else {
                        let mut i = i0;
                        for o in o_row[t0..t1].iter_mut() {
                            *o += wv * x_row[i];
                            i += spec.stride;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of `conv1d_fwd`. Accumulates into `dx`/`dw`/`db`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_bwd(
    x: &[f64],
    (_c_in, l): (usize, usize),
    w: &[f64],
    (c_out, c_in_pg, k): (usize, usize, usize),
    spec: &Conv1dSpec,
    d_out: &[f64],
    l_out: usize,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let c_out_pg = c_out / spec.groups;
    if let Some(db) = db {
        for oc in 0..c_out {
            db[oc] += d_out[oc * l_out..(oc + 1) * l_out].iter().sum::<f64>();
        }
    }
    for g in 0..spec.groups {
        for oc_local in 0..c_out_pg {
            let oc = g * c_out_pg + oc_local;
            let do_row = &d_out[oc * l_out..(oc + 1) * l_out];
            for ic_local in 0..c_in_pg {
                let ic = g * c_in_pg + ic_local;
                let w_base = (oc * c_in_pg + ic_local) * k;
                for kk in 0..k {
                    let off = kk * spec.dilation;
                    let (t0, t1) = tap_range(l, l_out, spec.stride, spec.padding, off);
                    if t0 >= t1 {
                        continue;
                    }
                    let i0 = t0 * spec.stride + off - spec.padding;
                    let n = t1 - t0;
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = w[w_base + kk];
                        let dx_row = &mut dx[ic * l..(ic + 1) * l];
                        if spec.stride == 1 {
                            axpy(&mut dx_row[i0..i0 + n], wv, &do_row[t0..t1]);
                        } else {
                            let mut i = i0;
                            for d in do_row[t0..t1].iter() {
                                dx_row[i] += wv * d;
                                i += spec.stride;
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        let x_row = &x[ic * l..(ic + 1) * l];
                        if spec.stride == 1 {
                            dw[w_base + kk] += dot(&do_row[t0..t1], &x_row[i0..i0 + n]);
                        } else {
                            let mut acc = 0.0;
                            let mut i = i0;
                            for d in do_row[t0..t1].iter() {
                                acc += d * x_row[i];
                                i += spec.stride;
                            }
                            dw[w_base + kk] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// Transposed 1-D convolution with weight layout (c_in, c_out, k).
///
/// out[oc][t*s + kk - p] += w[ic][oc][kk] * x[ic][t], out length
/// (l-1)*s - 2p + k.
pub fn conv_t1d_out_len(l: usize, k: usize, stride: usize, padding: usize) -> usize {
    (l - 1) * stride + k - 2 * padding
}

pub fn conv_t1d_fwd(
    x: &[f64],
    (c_in, l): (usize, usize),
    w: &[f64],
    (c_in_w, c_out, k): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    padding: usize,
    out: &mut [f64],
    l_out: usize,
) {
    debug_assert_eq!(c_in, c_in_w);
    for oc in 0..c_out {
        let o_row = &mut out[oc * l_out..(oc + 1) * l_out];
        if let Some(b) = bias {
            o_row.fill(b[oc]);
        } else {
            o_row.fill(0.0);
        }
    }
    for ic in 0..c_in {
        let x_row = &x[ic * l..(ic + 1) * l];
        for oc in 0..c_out {
            let o_row = &mut out[oc * l_out..(oc + 1) * l_out];
            let w_base = (ic * c_out + oc) * k;
            for kk in 0..k {
                let wv = w[w_base + kk];
                // j = t*stride + kk - padding must lie in [0, l_out)
                let (t0, t1) = tap_range(l_out, l, stride, padding, kk);
                if t0 >= t1 {
                    continue;
                }
                let j0 = t0 * stride + kk - padding;
                if stride == 1 {
                    axpy(&mut o_row[j0..j0 + (t1 - t0)], wv, &x_row[t0..t1]);
                } else {
                    let mut j = j0;
                    for xi in x_row[t0..t1].iter() {
                        o_row[j] += wv * xi;
                        j += stride;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv_t1d_bwd(
    x: &[f64],
    (c_in, l): (usize, usize),
    w: &[f64],
    (_c_in_w, c_out, k): (usize, usize, usize),
    stride: usize,
    padding: usize,
    d_out: &[f64],
    l_out: usize,
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    if let Some(db) = db {
        for oc in 0..c_out {
            db[oc] += d_out[oc * l_out..(oc + 1) * l_out].iter().sum::<f64>();
        }
    }
    for ic in 0..c_in {
        let x_row = &x[ic * l..(ic + 1) * l];
        for oc in 0..c_out {
            let do_row = &d_out[oc * l_out..(oc + 1) * l_out];
            let w_base = (ic * c_out + oc) * k;
            for kk in 0..k {
                let (t0, t1) = tap_range(l_out, l, stride, padding, kk);
                if t0 >= t1 {
                    continue;
                }
                let j0 = t0 * stride + kk - padding;
                let n = t1 - t0;
                if let Some(dx) = dx.as_deref_mut() {
                    let wv = w[w_base + kk];
                    let dx_row = &mut dx[ic * l..(ic + 1) * l];
                    if stride == 1 {
                        axpy(&mut dx_row[t0..t1], wv, &do_row[j0..j0 + n]);
                    } else {
                        let mut j = j0;
                        for d in dx_row[t0..t1].iter_mut() {
                            *d += wv * do_row[j];
                            j += stride;
                        }
                    }
                }
                if let Some(dw) = dw.as_deref_mut() {
                    if stride == 1 {
                        dw[w_base + kk] += dot(&x_row[t0..t1], &do_row[j0..j0 + n]);
                    } else {
                        let mut acc = 0.0;
                        let mut j = j0;
                        for xi in x_row[t0..t1].iter() {
                            acc += xi * do_row[j];
                            j += stride;
                        }
                        dw[w_base + kk] += acc;
                    }
                }
            }
        }
    }
}

/// out[oc][th][tw] = b[oc] + sum w[oc][ic][kh][kw] * x[ic][th*sh+kh-ph][tw*sw+kw-pw]
#[allow(clippy::too_many_arguments)]
pub fn conv2d_fwd(
    x: &[f64],
    (c_in, h, w_dim): (usize, usize, usize),
    wt: &[f64],
    (c_out, _c_in_w, kh, kw): (usize, usize, usize, usize),
    bias: Option<&[f64]>,
    spec: &Conv2dSpec,
    out: &mut [f64],
    (oh, ow): (usize, usize),
) {
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    for oc in 0..c_out {
        let o_plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        if let Some(b) = bias {
            o_plane.fill(b[oc]);
        } else {
            o_plane.fill(0.0);
        }
        for ic in 0..c_in {
            let x_plane = &x[ic * h * w_dim..(ic + 1) * h * w_dim];
            for khi in 0..kh {
                let (th0, th1) = tap_range(h, oh, sh, ph, khi);
                for kwi in 0..kw {
                    let wv = wt[((oc * c_in + ic) * kh + khi) * kw + kwi];
                    let (tw0, tw1) = tap_range(w_dim, ow, sw, pw, kwi);
                    if th0 >= th1 || tw0 >= tw1 {
                        continue;
                    }
                    for th in th0..th1 {
                        let ih = th * sh + khi - ph;
                        let o_row = &mut o_plane[th * ow + tw0..th * ow + tw1];
                        let iw0 = tw0 * sw + kwi - pw;
                        if sw == 1 {
                            let x_row = &x_plane[ih * w_dim + iw0..ih * w_dim + iw0 + (tw1 - tw0)];
                            axpy(o_row, wv, x_row);
                        } else {
                            let mut iw = iw0;
                            for o in o_row.iter_mut() {
                                *o += wv * x_plane[ih * w_dim + iw];
                                iw += sw;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd(
    x: &[f64],
    (c_in, h, w_dim): (usize, usize, usize),
    wt: &[f64],
    (c_out, _c_in_w, kh, kw): (usize, usize, usize, usize),
    spec: &Conv2dSpec,
    d_out: &[f64],
    (oh, ow): (usize, usize),
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    if let Some(db) = db {
        for oc in 0..c_out {
            db[oc] += d_out[oc * oh * ow..(oc + 1) * oh * ow].iter().sum::<f64>();
        }
    }
    for oc in 0..c_out {
        let do_plane = &d_out[oc * oh * ow..(oc + 1) * oh * ow];
        for ic in 0..c_in {
            let x_plane = &x[ic * h * w_dim..(ic + 1) * h * w_dim];
            for khi in 0..kh {
                let (th0, th1) = tap_range(h, oh, sh, ph, khi);
                for kwi in 0..kw {
                    let w_idx = ((oc * c_in + ic) * kh + khi) * kw + kwi;
                    let (tw0, tw1) = tap_range(w_dim, ow, sw, pw, kwi);
                    if th0 >= th1 || tw0 >= tw1 {
                        continue;
                    }
                    let wv = wt[w_idx];
                    let mut w_acc = 0.0;
                    for th in th0..th1 {
                        let ih = th * sh + khi - ph;
                        let do_row = &do_plane[th * ow + tw0..th * ow + tw1];
                        let iw0 = tw0 * sw + kwi - pw;
                        if sw == 1 {
                            let xr0 = ih * w_dim + iw0;
                            if let Some(dx) = dx.as_deref_mut() {
                                let dx_plane = &mut dx[ic * h * w_dim..(ic + 1) * h * w_dim];
                                axpy(&mut dx_plane[xr0..xr0 + (tw1 - tw0)], wv, do_row);
                            }
                            if dw.is_some() {
                                w_acc += dot(do_row, &x_plane[xr0..xr0 + (tw1 - tw0)]);
                            }
                        } else {
                            let mut iw = iw0;
                            for d in do_row.iter() {
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx[ic * h * w_dim + ih * w_dim + iw] += wv * d;
                                }
                                w_acc += d * x_plane[ih * w_dim + iw];
                                iw += sw;
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[w_idx] += w_acc;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv1d_identity_kernel() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let w = [1.0];
        let mut out = [0.0; 4];
        let spec = Conv1dSpec::default();
        conv1d_fwd(&x, (1, 4), &w, (1, 1, 1), None, &spec, &mut out, 4);
        assert_eq!(out, x);
    }

    #[test]
    fn conv1d_same_padding_box() {
        // kernel [1,1,1], padding 1: moving sum
        let x = [1.0, 2.0, 3.0];
        let w = [1.0, 1.0, 1.0];
        let mut out = [0.0; 3];
        let spec = Conv1dSpec::plain(1, 1);
        conv1d_fwd(&x, (1, 3), &w, (1, 1, 3), None, &spec, &mut out, 3);
        assert_eq!(out, [3.0, 6.0, 5.0]);
    }

    #[test]
    fn conv_t1d_doubles_length() {
        // k=4, s=2, p=1 maps length n to 2n
        let x = [1.0, 1.0, 1.0];
        let w = [1.0, 1.0, 1.0, 1.0];
        let l_out = conv_t1d_out_len(3, 4, 2, 1);
        assert_eq!(l_out, 6);
        let mut out = vec![0.0; l_out];
        conv_t1d_fwd(&x, (1, 3), &w, (1, 1, 4), None, 2, 1, &mut out, l_out);
        assert_eq!(out, [1.0, 2.0, 2.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn conv2d_height_only() {
        // 2x3 input, kernel (2,1), stride (1,1): vertical pair sums
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let w = [1.0, 1.0];
        let spec = Conv2dSpec {
            stride: (1, 1),
            padding: (0, 0),
        };
        let dims = spec.out_dims((2, 3), (2, 1));
        assert_eq!(dims, (1, 3));
        let mut out = vec![0.0; 3];
        conv2d_fwd(&x, (1, 2, 3), &w, (1, 1, 2, 1), None, &spec, &mut out, dims);
        assert_eq!(out, [5.0, 7.0, 9.0]);
    }
}
