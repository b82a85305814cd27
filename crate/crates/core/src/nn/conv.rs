use std::borrow::Cow;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, ArrayViewMut2, Axis};

use super::{no_cache, Layer, Mode, Param, ParamBuilder};
use crate::error::{Error, Result};
use crate::exec;

/// Samples per partial weight-gradient sum. Fixed so the reduction order
/// does not depend on the number of worker threads.
const GRAD_GROUP: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    /// Output columns `[lo, hi)` of a row whose source index is in bounds,
    /// for kernel column `kj` (stride-1 case).
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = self.pw.saturating_sub(kj).min(self.wo);
        let hi = (self.w + self.pw).saturating_sub(kj).min(self.wo).max(lo);
        (lo, hi)
    }

    fn im2col(&self, x: &[f32], cols: &mut [f32]) {
        let (p, hw) = (self.p(), self.h * self.w);
        for c in 0..self.c {
            let plane = &x[c * hw..(c + 1) * hw];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * p;
                    for oy in 0..self.ho {
                        let dst = &mut cols[row + oy * self.wo..row + (oy + 1) * self.wo];
                        let iy = (oy * self.sh + ki) as isize - self.ph as isize;
                        if iy < 0 || iy as usize >= self.h {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        if self.sw == 1 {
                            let (lo, hi) = self.valid_cols(kj);
                            dst[..lo].fill(0.0);
                            dst[lo..hi].copy_from_slice(&src[lo + kj - self.pw..hi + kj - self.pw]);
                            dst[hi..].fill(0.0);
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * self.sw + kj) as isize - self.pw as isize;
                                *d = if ix >= 0 && (ix as usize) < self.w {
                                    src[ix as usize]
                                } else {
                                    0.0
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], dx: &mut [f32]) {
        let (p, hw) = (self.p(), self.h * self.w);
        for c in 0..self.c {
            let plane = &mut dx[c * hw..(c + 1) * hw];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * p;
                    for oy in 0..self.ho {
                        let iy = (oy * self.sh + ki) as isize - self.ph as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        let srcs = &cols[row + oy * self.wo..row + (oy + 1) * self.wo];
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        if self.sw == 1 {
                            let (lo, hi) = self.valid_cols(kj);
                            let off = kj as isize - self.pw as isize;
                            for ox in lo..hi {
                                dst[(ox as isize + off) as usize] += srcs[ox];
                            }
                        } else {
                            for (ox, &v) in srcs.iter().enumerate() {
                                let ix = (ox * self.sw + kj) as isize - self.pw as isize;
                                if ix >= 0 && (ix as usize) < self.w {
                                    dst[ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation: output channel j is `sum_i x_i * k_ij + b_j`
/// over every input channel i.
pub struct Conv2d {
    weight: Param,
    bias: Option<Param>,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
    input: Option<Array4<f32>>,
}

impl Conv2d {
    pub fn new(
        b: &ParamBuilder,
        in_c: usize,
        out_c: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        bias: bool,
    ) -> Self {
        let fan_in = in_c * kernel.0 * kernel.1;
        let weight = b.kaiming_uniform("weight", &[out_c, in_c, kernel.0, kernel.1], fan_in);
        let bias = bias.then(|| b.fan_in_uniform("bias", &[out_c], fan_in));
        Conv2d {
            weight,
            bias,
            kernel,
            stride,
            pad,
            input: None,
        }
    }

    /// Square kernel, stride and padding.
    pub fn square(
        b: &ParamBuilder,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        Self::new(b, in_c, out_c, (k, k), (stride, stride), (pad, pad), bias)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn geometry(&self, h: usize, w: usize) -> Result<Geometry> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.pad;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::shape(
                format!("spatial size >= kernel {kh}x{kw} (padding {ph},{pw})"),
                format!("{h}x{w} at {}", self.weight.name),
            ));
        }
        Ok(Geometry {
            c: self.in_channels(),
            h,
            w,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
            ho: (h + 2 * ph - kh) / sh + 1,
            wo: (w + 2 * pw - kw) / sw + 1,
        })
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f32> {
        let o = self.out_channels();
        let k = self.weight.numel() / o;
        self.weight
            .value
            .view()
            .into_shape_with_order((o, k))
            .expect("contiguous conv weight")
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        let (n, c, h, w) = x.dim();
        if c != self.in_channels() {
            return Err(Error::shape(
                format!(
                    "{} input channels at {}",
                    self.in_channels(),
                    self.weight.name
                ),
                c,
            ));
        }
        let geo = self.geometry(h, w)?;
        let x: Cow<'_, Array4<f32>> = if x.is_standard_layout() {
            Cow::Borrowed(x)
        } else {
            Cow::Owned(x.as_standard_layout().into_owned())
        };
        let xs = x.as_slice().expect("standard layout");
        let o = self.out_channels();
        let (k, p, chw) = (geo.k(), geo.p(), c * h * w);
        let w2 = self.weight_matrix();
        let bias = self
            .bias
            .as_ref()
            .map(|b| b.value.as_slice().expect("contiguous bias"));
        let mut out = vec![0f32; n * o * p];
        exec::for_each_chunk_mut(&mut out, o * p, |i, chunk| {
            let xi = &xs[i * chw..(i + 1) * chw];
            let mut dst = ArrayViewMut2::from_shape((o, p), chunk).expect("chunk shape");
            if geo.pointwise() {
                let xv = ArrayView2::from_shape((c, p), xi).expect("pointwise view");
                general_mat_mul(1.0, &w2, &xv, 0.0, &mut dst);
            } else {
                let mut cols = vec![0f32; k * p];
                geo.im2col(xi, &mut cols);
                let cv = ArrayView2::from_shape((k, p), &cols).expect("cols view");
                general_mat_mul(1.0, &w2, &cv, 0.0, &mut dst);
            }
            if let Some(b) = bias {
                for (mut row, &bv) in dst.axis_iter_mut(Axis(0)).zip(b) {
                    row += bv;
                }
            }
        });
        if mode == Mode::Train {
            self.input = Some(x.into_owned());
        }
        Ok(Array4::from_shape_vec((n, o, geo.ho, geo.wo), out).expect("output shape"))
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Result<Array4<f32>> {
        let x = self.input.take().ok_or_else(|| no_cache("Conv2d"))?;
        let (n, c, h, w) = x.dim();
        let geo = self.geometry(h, w)?;
        let o = self.out_channels();
        if grad.dim() != (n, o, geo.ho, geo.wo) {
            return Err(Error::shape(
                format!("{:?}", (n, o, geo.ho, geo.wo)),
                format!("{:?}", grad.dim()),
            ));
        }
        let g = grad.as_standard_layout();
        let gs = g.as_slice().expect("standard layout");
        let xs = x.as_slice().expect("standard layout");
        let (k, p, chw) = (geo.k(), geo.p(), c * h * w);

        if let Some(bias) = self.bias.as_mut().filter(|b| b.wants_grad()) {
            let db = g.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
            bias.accumulate(db.into_dyn());
        }

        if self.weight.wants_grad() {
            let groups = n.div_ceil(GRAD_GROUP);
            let partials = exec::map_indexed(groups, |gi| {
                let mut acc = Array2::<f32>::zeros((o, k));
                let mut cols = if geo.pointwise() {
                    Vec::new()
                } else {
                    vec![0f32; k * p]
                };
                for i in gi * GRAD_GROUP..((gi + 1) * GRAD_GROUP).min(n) {
                    let gv = ArrayView2::from_shape((o, p), &gs[i * o * p..(i + 1) * o * p])
                        .expect("grad view");
                    let xi = &xs[i * chw..(i + 1) * chw];
                    if geo.pointwise() {
                        let xv = ArrayView2::from_shape((c, p), xi).expect("pointwise view");
                        general_mat_mul(1.0, &gv, &xv.t(), 1.0, &mut acc);
                    } else {
                        geo.im2col(xi, &mut cols);
                        let cv = ArrayView2::from_shape((k, p), &cols).expect("cols view");
                        general_mat_mul(1.0, &gv, &cv.t(), 1.0, &mut acc);
                    }
                }
                acc
            });
            let mut dw = Array2::<f32>::zeros((o, k));
            for part in &partials {
                dw += part;
            }
            let shape = self.weight.value.raw_dim();
            self.weight
                .accumulate(dw.into_shape_with_order(shape).expect("weight shape"));
        }

        let w2 = self.weight_matrix();
        let mut dx = vec![0f32; n * chw];
        exec::for_each_chunk_mut(&mut dx, chw, |i, dxi| {
            let gv =
                ArrayView2::from_shape((o, p), &gs[i * o * p..(i + 1) * o * p]).expect("grad view");
            if geo.pointwise() {
                let mut dv = ArrayViewMut2::from_shape((c, p), dxi).expect("pointwise view");
                general_mat_mul(1.0, &w2.t(), &gv, 0.0, &mut dv);
            } else {
                let mut dcols = Array2::<f32>::zeros((k, p));
                general_mat_mul(1.0, &w2.t(), &gv, 0.0, &mut dcols);
                geo.col2im(dcols.as_slice().expect("contiguous"), dxi);
            }
        });
        Ok(Array4::from_shape_vec((n, c, h, w), dx).expect("input shape"))
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

/// Direct-loop reference used by tests.
#[cfg(test)]
pub(crate) fn naive_conv(
    x: &Array4<f32>,
    weight: &ndarray::ArrayD<f32>,
    bias: Option<&ndarray::Array1<f32>>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Array4<f32> {
    let (n, c, h, w) = x.dim();
    let (o, kh, kw) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
    let ho = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let wo = (w + 2 * pad.1 - kw) / stride.1 + 1;
    Array4::from_shape_fn((n, o, ho, wo), |(b, j, oy, ox)| {
        let mut acc = bias.map_or(0.0, |bb| bb[j] as f64);
        for i in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let iy = (oy * stride.0 + ki) as isize - pad.0 as isize;
                    let ix = (ox * stride.1 + kj) as isize - pad.1 as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                        acc += x[[b, i, iy as usize, ix as usize]] as f64
                            * weight[[j, i, ki, kj]] as f64;
                    }
                }
            }
        }
        acc as f32
    })
}
