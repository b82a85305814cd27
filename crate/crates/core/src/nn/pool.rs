use ndarray::{Array4, Axis};

use super::{no_cache, Dim4, Layer, Mode};
use crate::error::{Error, Result};

fn pooled_len(len: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    if len + 2 * p < k {
        return Err(Error::shape(
            format!("spatial size >= pool window {k}"),
            len,
        ));
    }
    Ok((len + 2 * p - k) / s + 1)
}

/// Max pooling over `k`x`k` windows; padded positions never win.
pub struct MaxPool2d {
    k: usize,
    stride: usize,
    pad: usize,
    cache: Option<(Dim4, Vec<u32>)>,
}

impl MaxPool2d {
    pub fn new(k: usize, stride: usize, pad: usize) -> Self {
        assert!(
            2 * pad <= k,
            "max-pool padding must be at most half the window"
        );
        MaxPool2d {
            k,
            stride,
            pad,
            cache: None,
        }
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        let (n, c, h, w) = x.dim();
        let ho = pooled_len(h, self.k, self.stride, self.pad)?;
        let wo = pooled_len(w, self.k, self.stride, self.pad)?;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut out = vec![0f32; n * c * ho * wo];
        let mut arg = vec![0u32; n * c * ho * wo];
        for plane in 0..n * c {
            let src = &xs[plane * h * w..(plane + 1) * h * w];
            for oy in 0..ho {
                let y0 = (oy * self.stride) as isize - self.pad as isize;
                let ys = y0.max(0) as usize..((y0 + self.k as isize).min(h as isize)) as usize;
                for ox in 0..wo {
                    let x0 = (ox * self.stride) as isize - self.pad as isize;
                    let xr = x0.max(0) as usize..((x0 + self.k as isize).min(w as isize)) as usize;
                    let mut best_i = ys.start * w + xr.start;
                    let mut best = src[best_i];
                    for iy in ys.clone() {
                        for ix in xr.clone() {
                            let v = src[iy * w + ix];
                            if v > best {
                                best = v;
                                best_i = iy * w + ix;
                            }
                        }
                    }
                    let o = plane * ho * wo + oy * wo + ox;
                    out[o] = best;
                    arg[o] = best_i as u32;
                }
            }
        }
        if mode == Mode::Train {
            self.cache = Some(((n, c, h, w), arg));
        }
        Ok(Array4::from_shape_vec((n, c, ho, wo), out).expect("pool shape"))
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Result<Array4<f32>> {
        let ((n, c, h, w), arg) = self.cache.take().ok_or_else(|| no_cache("MaxPool2d"))?;
        let (_, _, ho, wo) = grad.dim();
        if grad.len() != arg.len() {
            return Err(Error::shape(arg.len(), grad.len()));
        }
        let g = grad.as_standard_layout();
        let gs = g.as_slice().expect("standard layout");
        let mut dx = vec![0f32; n * c * h * w];
        for plane in 0..n * c {
            let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
            for j in 0..ho * wo {
                let o = plane * ho * wo + j;
                dst[arg[o] as usize] += gs[o];
            }
        }
        Ok(Array4::from_shape_vec((n, c, h, w), dx).expect("input shape"))
    }
}

/// Average pooling with zero padding counted in the divisor.
pub struct AvgPool2d {
    k: usize,
    stride: usize,
    pad: usize,
    in_dim: Option<Dim4>,
}

impl AvgPool2d {
    pub fn new(k: usize, stride: usize, pad: usize) -> Self {
        AvgPool2d {
            k,
            stride,
            pad,
            in_dim: None,
        }
    }
}

impl Layer for AvgPool2d {
    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        let (n, c, h, w) = x.dim();
        let ho = pooled_len(h, self.k, self.stride, self.pad)?;
        let wo = pooled_len(w, self.k, self.stride, self.pad)?;
        let div = (self.k * self.k) as f32;
        let mut out = Array4::<f32>::zeros((n, c, ho, wo));
        for ((b, ch, oy, ox), v) in out.indexed_iter_mut() {
            let y0 = (oy * self.stride) as isize - self.pad as isize;
            let x0 = (ox * self.stride) as isize - self.pad as isize;
            let mut acc = 0f32;
            for iy in y0.max(0)..(y0 + self.k as isize).min(h as isize) {
                for ix in x0.max(0)..(x0 + self.k as isize).min(w as isize) {
                    acc += x[[b, ch, iy as usize, ix as usize]];
                }
            }
            *v = acc / div;
        }
        if mode == Mode::Train {
            self.in_dim = Some((n, c, h, w));
        }
        Ok(out)
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Result<Array4<f32>> {
        let (n, c, h, w) = self.in_dim.take().ok_or_else(|| no_cache("AvgPool2d"))?;
        let div = (self.k * self.k) as f32;
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        for ((b, ch, oy, ox), &g) in grad.indexed_iter() {
            let y0 = (oy * self.stride) as isize - self.pad as isize;
            let x0 = (ox * self.stride) as isize - self.pad as isize;
            for iy in y0.max(0)..(y0 + self.k as isize).min(h as isize) {
                for ix in x0.max(0)..(x0 + self.k as isize).min(w as isize) {
                    dx[[b, ch, iy as usize, ix as usize]] += g / div;
                }
            }
        }
        Ok(dx)
    }
}

/// Averages each of `out_h` x `out_w` bins, bin `i` spanning
/// `[floor(i*in/out), ceil((i+1)*in/out))`.
pub struct AdaptiveAvgPool2d {
    out_h: usize,
    out_w: usize,
    in_dim: Option<Dim4>,
}

fn bin(i: usize, input: usize, output: usize) -> (usize, usize) {
    (i * input / output, ((i + 1) * input).div_ceil(output))
}

impl AdaptiveAvgPool2d {
    pub fn new(out_h: usize, out_w: usize) -> Self {
        AdaptiveAvgPool2d {
            out_h,
            out_w,
            in_dim: None,
        }
    }
}

impl Layer for AdaptiveAvgPool2d {
    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        let (n, c, h, w) = x.dim();
        if h == 0 || w == 0 {
            return Err(Error::shape("non-empty spatial dims", format!("{h}x{w}")));
        }
        let mut out = Array4::<f32>::zeros((n, c, self.out_h, self.out_w));
        for b in 0..n {
            for ch in 0..c {
                let plane = x.index_axis(Axis(0), b);
                let plane = plane.index_axis(Axis(0), ch);
                for oy in 0..self.out_h {
                    let (y0, y1) = bin(oy, h, self.out_h);
                    for ox in 0..self.out_w {
                        let (x0, x1) = bin(ox, w, self.out_w);
                        let mut acc = 0f32;
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                acc += plane[[iy, ix]];
                            }
                        }
                        out[[b, ch, oy, ox]] = acc / ((y1 - y0) * (x1 - x0)) as f32;
                    }
                }
            }
        }
        if mode == Mode::Train {
            self.in_dim = Some((n, c, h, w));
        }
        Ok(out)
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Result<Array4<f32>> {
        let (n, c, h, w) = self
            .in_dim
            .take()
            .ok_or_else(|| no_cache("AdaptiveAvgPool2d"))?;
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        for ((b, ch, oy, ox), &g) in grad.indexed_iter() {
            let (y0, y1) = bin(oy, h, self.out_h);
            let (x0, x1) = bin(ox, w, self.out_w);
            let share = g / ((y1 - y0) * (x1 - x0)) as f32;
            for iy in y0..y1 {
                for ix in x0..x1 {
                    dx[[b, ch, iy, ix]] += share;
                }
            }
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{check_input_grad, ramp};
    use super::*;

    #[test]
    fn max_pool_shapes_and_values() {
        let x = Array4::from_shape_fn((1, 1, 4, 4), |(_, _, i, j)| (i * 4 + j) as f32);
        let y = MaxPool2d::new(2, 2, 0).forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.into_raw_vec_and_offset().0, vec![5.0, 7.0, 13.0, 15.0]);
        let y = MaxPool2d::new(3, 2, 1)
            .forward(&ramp((1, 2, 7, 7)), Mode::Eval)
            .unwrap();
        assert_eq!(y.dim(), (1, 2, 4, 4));
        let y = MaxPool2d::new(3, 2, 0)
            .forward(&ramp((1, 2, 7, 7)), Mode::Eval)
            .unwrap();
        assert_eq!(y.dim(), (1, 2, 3, 3));
    }

    #[test]
    fn max_pool_handles_negative_inputs() {
        let x = Array4::from_elem((1, 1, 3, 3), -5.0f32);
        let y = MaxPool2d::new(3, 2, 1).forward(&x, Mode::Eval).unwrap();
        assert!(y.iter().all(|&v| v == -5.0));
    }

    #[test]
    fn pool_gradients() {
        // Distinct values so the max is unique and differentiable.
        let x = Array4::from_shape_fn((2, 2, 6, 5), |(a, b, c, d)| {
            ((a * 60 + b * 30 + c * 5 + d) * 37 % 61) as f32 * 0.5
        });
        check_input_grad(&mut MaxPool2d::new(2, 2, 0), &x, 1e-2);
        check_input_grad(&mut MaxPool2d::new(3, 2, 1), &x, 1e-2);
        check_input_grad(&mut AvgPool2d::new(3, 1, 1), &x, 1e-2);
        check_input_grad(&mut AvgPool2d::new(2, 2, 0), &x, 1e-2);
        check_input_grad(&mut AdaptiveAvgPool2d::new(2, 2), &x, 1e-2);
        check_input_grad(&mut AdaptiveAvgPool2d::new(7, 7), &x, 1e-2);
    }

    #[test]
    fn adaptive_pool_matches_reference_bins() {
        // 5 -> 3 bins: [0,2) [1,4) [3,5)
        let x = Array4::from_shape_fn((1, 1, 1, 5), |(_, _, _, j)| j as f32);
        let y = AdaptiveAvgPool2d::new(1, 3)
            .forward(&x, Mode::Eval)
            .unwrap();
        assert_eq!(y.into_raw_vec_and_offset().0, vec![0.5, 2.0, 3.5]);
        // upsampling replicates
        let x = Array4::from_shape_fn((1, 1, 2, 2), |(_, _, i, j)| (i * 2 + j) as f32);
        let y = AdaptiveAvgPool2d::new(7, 7)
            .forward(&x, Mode::Eval)
            .unwrap();
        assert_eq!(y[[0, 0, 0, 0]], 0.0);
        assert_eq!(y[[0, 0, 6, 6]], 3.0);
        assert_eq!(y[[0, 0, 3, 3]], 1.5);
    }

    #[test]
    fn avg_pool_counts_padding() {
        let x = Array4::from_elem((1, 1, 3, 3), 9.0f32);
        let y = AvgPool2d::new(3, 1, 1).forward(&x, Mode::Eval).unwrap();
        assert_eq!(y[[0, 0, 0, 0]], 4.0);
        assert_eq!(y[[0, 0, 1, 1]], 9.0);
    }
}
