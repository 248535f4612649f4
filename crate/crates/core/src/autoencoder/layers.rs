//! Forward and backward kernels. Parameters live in one flat `f64` buffer;
//! layers only hold offsets into it.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor3;
use crate::preprocess::{axis_taps, resize_plane, Tap};

/// A `k x k` convolution with zero padding. Stride 1 keeps the spatial size
/// (padding `dilation * (k / 2)`); stride 2 halves it (padding `k / 2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

/// Output indices `x` whose source `x * stride + shift` lands in `0..in_n`.
#[inline]
fn valid_range(out_n: usize, in_n: usize, stride: usize, shift: isize) -> (usize, usize) {
    let s = stride as isize;
    // smallest x with x*s + shift >= 0
    let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
    // largest x with x*s + shift <= in_n - 1
    let hi_num = in_n as isize - 1 - shift;
    let hi = if hi_num < 0 { -1 } else { hi_num / s };
    let lo = lo.max(0) as usize;
    let hi = (hi + 1).clamp(0, out_n as isize) as usize;
    (lo, hi.max(lo))
}

impl Conv {
    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.kernel * self.kernel
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.out_c
    }

    fn padding(&self) -> usize {
        if self.stride == 1 {
            self.dilation * (self.kernel / 2)
        } else {
            self.kernel / 2
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.padding();
        let span = self.dilation * (self.kernel - 1);
        (
            (h + 2 * p - span - 1) / self.stride + 1,
            (w + 2 * p - span - 1) / self.stride + 1,
        )
    }

    #[inline]
    fn shift(&self, k: usize) -> isize {
        (k * self.dilation) as isize - self.padding() as isize
    }

    #[inline]
    fn w_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        self.weight_offset + ((o * self.in_c + i) * self.kernel + ky) * self.kernel + kx
    }

    pub fn forward(&self, params: &[f64], input: &Tensor3) -> Tensor3 {
        debug_assert_eq!(input.channels, self.in_c);
        let (h, w) = (input.height, input.width);
        let (oh, ow) = self.out_dims(h, w);
        let mut out = Tensor3::zeros(self.out_c, oh, ow);
        let s = self.stride;
        for o in 0..self.out_c {
            let bias = params[self.bias_offset + o];
            let oplane = out.plane_mut(o);
            oplane.fill(bias);
            for i in 0..self.in_c {
                let iplane = input.plane(i);
                for ky in 0..self.kernel {
                    let sy = self.shift(ky);
                    let (y0, y1) = valid_range(oh, h, s, sy);
                    for kx in 0..self.kernel {
                        let wt = params[self.w_index(o, i, ky, kx)];
                        let sx = self.shift(kx);
                        let (x0, x1) = valid_range(ow, w, s, sx);
                        if x0 >= x1 {
                            continue;
                        }
                        for y in y0..y1 {
                            let iy = (y * s) as isize + sy;
                            let irow = &iplane[iy as usize * w..(iy as usize + 1) * w];
                            let orow = &mut oplane[y * ow + x0..y * ow + x1];
                            let ix0 = (x0 * s) as isize + sx;
                            if s == 1 {
                                let src = &irow[ix0 as usize..ix0 as usize + (x1 - x0)];
                                for (d, &v) in orow.iter_mut().zip(src) {
                                    *d += wt * v;
                                }
                            } else {
                                for (n, d) in orow.iter_mut().enumerate() {
                                    *d += wt * irow[ix0 as usize + n * s];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to `input`.
    pub fn backward(
        &self,
        params: &[f64],
        input: &Tensor3,
        grad_out: &Tensor3,
        grads: &mut [f64],
    ) -> Tensor3 {
        let (h, w) = (input.height, input.width);
        let (oh, ow) = (grad_out.height, grad_out.width);
        let s = self.stride;
        let mut grad_in = Tensor3::zeros_like(input);
        for o in 0..self.out_c {
            let gplane = grad_out.plane(o);
            grads[self.bias_offset + o] += gplane.iter().sum::<f64>();
            for i in 0..self.in_c {
                let iplane = input.plane(i);
                let giplane = grad_in.plane_mut(i);
                for ky in 0..self.kernel {
                    let sy = self.shift(ky);
                    let (y0, y1) = valid_range(oh, h, s, sy);
                    for kx in 0..self.kernel {
                        let widx = self.w_index(o, i, ky, kx);
                        let wt = params[widx];
                        let sx = self.shift(kx);
                        let (x0, x1) = valid_range(ow, w, s, sx);
                        if x0 >= x1 {
                            continue;
                        }
                        let mut gw = 0.0;
                        for y in y0..y1 {
                            let iy = ((y * s) as isize + sy) as usize;
                            let grow = &gplane[y * ow + x0..y * ow + x1];
                            let ix0 = ((x0 * s) as isize + sx) as usize;
                            let irow = &iplane[iy * w..(iy + 1) * w];
                            let girow = &mut giplane[iy * w..(iy + 1) * w];
                            if s == 1 {
                                let n = x1 - x0;
                                let src = &irow[ix0..ix0 + n];
                                let dst = &mut girow[ix0..ix0 + n];
                                for ((g, &v), d) in grow.iter().zip(src).zip(dst) {
                                    gw += g * v;
                                    *d += wt * g;
                                }
                            } else {
                                for (n, &g) in grow.iter().enumerate() {
                                    let ix = ix0 + n * s;
                                    gw += g * irow[ix];
                                    girow[ix] += wt * g;
                                }
                            }
                        }
                        grads[widx] += gw;
                    }
                }
            }
        }
        grad_in
    }
}

/// Bilinear resize of every channel to `(out_h, out_w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Upsample {
    pub out_h: usize,
    pub out_w: usize,
}

impl Upsample {
    pub fn forward(&self, input: &Tensor3) -> Tensor3 {
        let mut out = Tensor3::zeros(input.channels, self.out_h, self.out_w);
        for c in 0..input.channels {
            let plane = resize_plane(input.plane(c), input.height, input.width, self.out_h, self.out_w);
            out.plane_mut(c).copy_from_slice(&plane);
        }
        out
    }

    /// Adjoint of [`Upsample::forward`].
    pub fn backward(&self, in_h: usize, in_w: usize, grad_out: &Tensor3) -> Tensor3 {
        if in_h == self.out_h && in_w == self.out_w {
            return grad_out.clone();
        }
        let rows = axis_taps(in_h, self.out_h);
        let cols = axis_taps(in_w, self.out_w);
        let ow = self.out_w;
        let mut grad_in = Tensor3::zeros(grad_out.channels, in_h, in_w);
        let mut tmp = vec![0.0; in_h * ow];
        for c in 0..grad_out.channels {
            tmp.fill(0.0);
            let g = grad_out.plane(c);
            for (o, &Tap { i0, i1, frac }) in rows.iter().enumerate() {
                let grow = &g[o * ow..(o + 1) * ow];
                for (x, &v) in grow.iter().enumerate() {
                    tmp[i0 * ow + x] += (1.0 - frac) * v;
                    tmp[i1 * ow + x] += frac * v;
                }
            }
            let gi = grad_in.plane_mut(c);
            for r in 0..in_h {
                let trow = &tmp[r * ow..(r + 1) * ow];
                let dst = &mut gi[r * in_w..(r + 1) * in_w];
                for (&Tap { i0, i1, frac }, &v) in cols.iter().zip(trow) {
                    dst[i0] += (1.0 - frac) * v;
                    dst[i1] += frac * v;
                }
            }
        }
        grad_in
    }
}

#[inline]
pub fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// `grad * leaky'(pre)`, in place.
pub fn leaky_backward(pre: &Tensor3, grad: &mut Tensor3, slope: f64) {
    for (g, &p) in grad.data.iter_mut().zip(&pre.data) {
        if p <= 0.0 {
            *g *= slope;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `grad * y (1 - y)` where `y` is the sigmoid output, in place.
pub fn sigmoid_backward(out: &Tensor3, grad: &mut Tensor3) {
    for (g, &y) in grad.data.iter_mut().zip(&out.data) {
        *g *= y * (1.0 - y);
    }
}
