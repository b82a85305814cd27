use ndarray::{Array1, Array4, Axis, Zip};

use super::{no_cache, Layer, Mode, Param, ParamBuilder, ParamKind};
use crate::error::{Error, Result};

struct Cache {
    x_hat: Array4<f32>,
    inv_std: Array1<f32>,
}

/// Per-channel batch normalization. Train mode normalizes with batch
/// statistics and updates the running estimates; eval mode uses the
/// running estimates only.
pub struct BatchNorm2d {
    weight: Param,
    bias: Param,
    running_mean: Param,
    running_var: Param,
    eps: f32,
    momentum: f32,
    cache: Option<Cache>,
}

impl BatchNorm2d {
    pub fn new(b: &ParamBuilder, channels: usize, eps: f32) -> Self {
        BatchNorm2d {
            weight: b.constant("weight", &[channels], 1.0, ParamKind::Weight),
            bias: b.constant("bias", &[channels], 0.0, ParamKind::Weight),
            running_mean: b.constant("running_mean", &[channels], 0.0, ParamKind::Buffer),
            running_var: b.constant("running_var", &[channels], 1.0, ParamKind::Buffer),
            eps,
            momentum: 0.1,
            cache: None,
        }
    }

    fn channels(&self) -> usize {
        self.weight.numel()
    }

    fn vec(p: &Param) -> Array1<f32> {
        p.value
            .view()
            .into_dimensionality()
            .expect("1-d batch-norm parameter")
            .to_owned()
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        let (n, c, h, w) = x.dim();
        if c != self.channels() {
            return Err(Error::shape(
                format!("{} channels at {}", self.channels(), self.weight.name),
                c,
            ));
        }
        let gamma = Self::vec(&self.weight);
        let beta = Self::vec(&self.bias);
        match mode {
            Mode::Eval => {
                let mean = Self::vec(&self.running_mean);
                let var = Self::vec(&self.running_var);
                let mut out = x.to_owned();
                for (ch, mut plane) in out.axis_iter_mut(Axis(1)).enumerate() {
                    let scale = gamma[ch] / (var[ch] + self.eps).sqrt();
                    let shift = beta[ch] - mean[ch] * scale;
                    plane.mapv_inplace(|v| v * scale + shift);
                }
                Ok(out)
            }
            Mode::Train => {
                let m = (n * h * w) as f64;
                if n * h * w < 2 {
                    return Err(Error::shape(
                        "more than one value per channel in train mode",
                        format!("{:?}", x.dim()),
                    ));
                }
                let mut x_hat = x.to_owned();
                let mut inv_std = Array1::<f32>::zeros(c);
                let mut mean_v = Array1::<f32>::zeros(c);
                let mut var_v = Array1::<f32>::zeros(c);
                for (ch, mut plane) in x_hat.axis_iter_mut(Axis(1)).enumerate() {
                    let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / m;
                    let var = plane
                        .iter()
                        .map(|&v| (v as f64 - mean).powi(2))
                        .sum::<f64>()
                        / m;
                    let istd = 1.0 / (var + self.eps as f64).sqrt();
                    plane.mapv_inplace(|v| ((v as f64 - mean) * istd) as f32);
                    inv_std[ch] = istd as f32;
                    mean_v[ch] = mean as f32;
                    var_v[ch] = (var * m / (m - 1.0)) as f32;
                }
                let mom = self.momentum;
                Zip::from(&mut self.running_mean.value)
                    .and(mean_v.view().into_dyn())
                    .for_each(|r, &v| *r = (1.0 - mom) * *r + mom * v);
                Zip::from(&mut self.running_var.value)
                    .and(var_v.view().into_dyn())
                    .for_each(|r, &v| *r = (1.0 - mom) * *r + mom * v);
                let mut out = x_hat.clone();
                for (ch, mut plane) in out.axis_iter_mut(Axis(1)).enumerate() {
                    plane.mapv_inplace(|v| v * gamma[ch] + beta[ch]);
                }
                self.cache = Some(Cache { x_hat, inv_std });
                Ok(out)
            }
        }
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Result<Array4<f32>> {
        let Cache { x_hat, inv_std } = self.cache.take().ok_or_else(|| no_cache("BatchNorm2d"))?;
        if grad.dim() != x_hat.dim() {
            return Err(Error::shape(
                format!("{:?}", x_hat.dim()),
                format!("{:?}", grad.dim()),
            ));
        }
        let (n, c, h, w) = grad.dim();
        let m = (n * h * w) as f32;
        let gamma = Self::vec(&self.weight);
        let mut dgamma = Array1::<f32>::zeros(c);
        let mut dbeta = Array1::<f32>::zeros(c);
        for ch in 0..c {
            let g = grad.index_axis(Axis(1), ch);
            let xh = x_hat.index_axis(Axis(1), ch);
            dbeta[ch] = g.iter().map(|&v| v as f64).sum::<f64>() as f32;
            dgamma[ch] = g
                .iter()
                .zip(xh.iter())
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum::<f64>() as f32;
        }
        let mut dx = grad.to_owned();
        for (ch, mut plane) in dx.axis_iter_mut(Axis(1)).enumerate() {
            let k = gamma[ch] * inv_std[ch] / m;
            let xh = x_hat.index_axis(Axis(1), ch);
            Zip::from(&mut plane)
                .and(&xh)
                .for_each(|d, &xv| *d = k * (m * *d - dbeta[ch] - xv * dgamma[ch]));
        }
        if self.weight.wants_grad() {
            self.weight.accumulate(dgamma.into_dyn());
        }
        if self.bias.wants_grad() {
            self.bias.accumulate(dbeta.into_dyn());
        }
        Ok(dx)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}
