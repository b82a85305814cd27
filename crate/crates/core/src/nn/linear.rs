use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::init::name_hash;
use super::{no_cache, Dim4, Layer, Mode, Param, ParamBuilder};
use crate::error::{Error, Result};

/// Fully connected layer over the flattened (C*H*W) features of each sample.
pub struct Linear {
    weight: Param,
    bias: Param,
    cache: Option<(Array2<f32>, Dim4)>,
}

impl Linear {
    pub fn new(b: &ParamBuilder, in_features: usize, out_features: usize) -> Self {
        Linear {
            weight: b.fan_in_uniform("weight", &[out_features, in_features], in_features),
            bias: b.fan_in_uniform("bias", &[out_features], in_features),
            cache: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn weight2(&self) -> ArrayView2<'_, f32> {
        self.weight
            .value
            .view()
            .into_dimensionality()
            .expect("2-d weight")
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        let dim = x.dim();
        let features = dim.1 * dim.2 * dim.3;
        if features != self.in_features() {
            return Err(Error::shape(
                format!(
                    "{} input features at {}",
                    self.in_features(),
                    self.weight.name
                ),
                format!("{features} ({:?})", dim),
            ));
        }
        let flat = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((dim.0, features))
            .expect("flatten");
        let mut y = Array2::<f32>::zeros((dim.0, self.out_features()));
        general_mat_mul(1.0, &flat, &self.weight2().t(), 0.0, &mut y);
        let bias = self
            .bias
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("1-d bias");
        y += &bias;
        if mode == Mode::Train {
            self.cache = Some((flat, dim));
        }
        let out = self.out_features();
        Ok(y.into_shape_with_order((dim.0, out, 1, 1))
            .expect("reshape"))
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Result<Array4<f32>> {
        let (flat, dim) = self.cache.take().ok_or_else(|| no_cache("Linear"))?;
        let out = self.out_features();
        if grad.dim() != (dim.0, out, 1, 1) {
            return Err(Error::shape(
                format!("{:?}", (dim.0, out, 1, 1)),
                format!("{:?}", grad.dim()),
            ));
        }
        let g = grad
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((dim.0, out))
            .expect("grad reshape");
        if self.weight.wants_grad() {
            let mut dw = Array2::<f32>::zeros((out, self.in_features()));
            general_mat_mul(1.0, &g.t(), &flat, 0.0, &mut dw);
            self.weight.accumulate(dw.into_dyn());
        }
        if self.bias.wants_grad() {
            self.bias.accumulate(g.sum_axis(Axis(0)).into_dyn());
        }
        let mut dx = Array2::<f32>::zeros((dim.0, self.in_features()));
        general_mat_mul(1.0, &g, &self.weight2(), 0.0, &mut dx);
        Ok(dx.into_shape_with_order(dim).expect("input shape"))
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[derive(Default)]
pub struct Relu {
    mask: Option<Array4<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        let y = x.mapv(|v| v.max(0.0));
        if mode == Mode::Train {
            self.mask = Some(x.mapv(|v| v > 0.0));
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Result<Array4<f32>> {
        let mask = self.mask.take().ok_or_else(|| no_cache("Relu"))?;
        let mut g = grad.clone();
        g.zip_mut_with(&mask, |v, &m| {
            if !m {
                *v = 0.0
            }
        });
        Ok(g)
    }
}

/// Inverted dropout. Masks come from a seeded stream that advances once per
/// train-mode call; eval mode is the identity.
pub struct Dropout {
    p: f32,
    seed: u64,
    calls: u64,
    mask: Option<Array4<f32>>,
}

impl Dropout {
    pub fn new(b: &ParamBuilder, name: &str, p: f32) -> Self {
        Dropout {
            p,
            seed: b.seed() ^ name_hash(&b.path(name)),
            calls: 0,
            mask: None,
        }
    }
}

impl Layer for Dropout {
    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        if mode == Mode::Eval || self.p == 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.calls);
        self.calls += 1;
        let keep = 1.0 - self.p;
        let mask = Array4::from_shape_simple_fn(x.dim(), || {
            if rng.random::<f32>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let y = x * &mask;
        self.mask = Some(mask);
        Ok(y)
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Result<Array4<f32>> {
        match self.mask.take() {
            Some(mask) => Ok(grad * &mask),
            None => Ok(grad.clone()),
        }
    }
}

/// Fixed per-channel `x * scale + shift`.
pub struct InputAffine {
    scale: Vec<f32>,
    shift: Vec<f32>,
}

impl InputAffine {
    pub fn new(scale: Vec<f32>, shift: Vec<f32>) -> Self {
        InputAffine { scale, shift }
    }
}

impl Layer for InputAffine {
    fn forward(&mut self, x: &Array4<f32>, _mode: Mode) -> Result<Array4<f32>> {
        if x.dim().1 != self.scale.len() {
            return Err(Error::shape(self.scale.len(), x.dim().1));
        }
        let mut y = x.clone();
        for (c, mut plane) in y.axis_iter_mut(Axis(1)).enumerate() {
            let (a, b) = (self.scale[c], self.shift[c]);
            plane.mapv_inplace(|v| v * a + b);
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Result<Array4<f32>> {
        let mut g = grad.clone();
        for (c, mut plane) in g.axis_iter_mut(Axis(1)).enumerate() {
            let a = self.scale[c];
            plane.mapv_inplace(|v| v * a);
        }
        Ok(g)
    }
}

pub fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{check_input_grad, ramp};
    use super::*;

    #[test]
    fn linear_gradients() {
        let b = ParamBuilder::new(4).sub("fc");
        let mut fc = Linear::new(&b, 2 * 3 * 3, 5);
        check_input_grad(&mut fc, &ramp((3, 2, 3, 3)), 1e-2);
        let mut fc = Linear::new(&b, 2 * 3 * 3, 5);
        let x = ramp((3, 2, 3, 3));
        let y = fc.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.dim(), (3, 5, 1, 1));
        fc.backward(&Array4::ones(y.dim())).unwrap();
        let db = fc.bias.grad.as_ref().unwrap();
        assert!(db.iter().all(|&v| (v - 3.0).abs() < 1e-6));
        let dw = fc.weight.grad.as_ref().unwrap();
        let flat = x.into_shape_with_order((3, 18)).unwrap();
        for j in 0..18 {
            assert!((dw[[0, j]] - flat.column(j).sum()).abs() < 1e-5);
        }
    }

    #[test]
    fn relu_gradient() {
        check_input_grad(
            &mut Relu::new(),
            &ramp((2, 3, 4, 4)).mapv(|v| v + 0.05),
            1e-2,
        );
    }

    #[test]
    fn dropout_is_seeded_and_identity_in_eval() {
        let b = ParamBuilder::new(11);
        let x = Array4::ones((2, 8, 1, 1));
        let mut d1 = Dropout::new(&b, "drop", 0.5);
        let mut d2 = Dropout::new(&b, "drop", 0.5);
        let y1 = d1.forward(&x, Mode::Train).unwrap();
        let y2 = d2.forward(&x, Mode::Train).unwrap();
        assert_eq!(y1, y2);
        assert!(y1.iter().all(|&v| v == 0.0 || v == 2.0));
        assert_ne!(d1.forward(&x, Mode::Train).unwrap(), y1);
        assert_eq!(d1.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-200.0) >= 0.0 && sigmoid(-200.0) < 1e-30);
        assert_eq!(sigmoid(200.0), 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-7);
    }
}
