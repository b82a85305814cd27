//! A small NCHW layer engine with hand-written backward passes.
//!
//! Activations are `Array4<f32>` in (batch, channels, height, width) layout;
//! fully connected layers treat their input as (batch, features) and emit
//! (batch, out, 1, 1). Every layer caches what it needs during a
//! [`Mode::Train`] forward pass and consumes that cache in `backward`.

mod conv;
mod init;
mod linear;
mod norm;
mod pool;

use ndarray::{concatenate, s, Array4, ArrayD, Axis};

pub use conv::Conv2d;
pub use init::ParamBuilder;
pub use linear::{sigmoid, Dropout, InputAffine, Linear, Relu};
pub use norm::BatchNorm2d;
pub use pool::{AdaptiveAvgPool2d, AvgPool2d, MaxPool2d};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Learnable tensor, counted in parameter reports.
    Weight,
    /// Running statistic; persisted but never counted or optimized.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f32>,
    pub grad: Option<ArrayD<f32>>,
    pub kind: ParamKind,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: String, value: ArrayD<f32>, kind: ParamKind) -> Self {
        Param {
            name,
            value,
            grad: None,
            kind,
            trainable: kind == ParamKind::Weight,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    /// Whether backward passes should produce a gradient for this tensor.
    pub fn wants_grad(&self) -> bool {
        self.trainable && self.kind == ParamKind::Weight
    }

    pub(crate) fn accumulate(&mut self, g: ArrayD<f32>) {
        debug_assert_eq!(g.shape(), self.value.shape(), "{}", self.name);
        match &mut self.grad {
            Some(acc) => *acc += &g,
            None => self.grad = Some(g),
        }
    }
}

pub trait Layer: Send {
    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array4<f32>>;

    /// Propagates `grad` (w.r.t. this layer's output) back to its input,
    /// accumulating gradients into trainable parameters on the way.
    fn backward(&mut self, grad: &Array4<f32>) -> Result<Array4<f32>>;

    fn visit_params(&self, _f: &mut dyn FnMut(&Param)) {}

    fn visit_params_mut(&mut self, _f: &mut dyn FnMut(&mut Param)) {}
}

/// `(N, C, H, W)` of a feature map.
pub(crate) type Dim4 = (usize, usize, usize, usize);

pub(crate) fn no_cache(layer: &str) -> Error {
    Error::Config(format!(
        "{layer}: backward called without a train-mode forward"
    ))
}

#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(mut self, layer: impl Layer + 'static) -> Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn push_boxed(&mut self, layer: Box<dyn Layer>) {
        self.layers.push(layer);
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        let mut iter = self.layers.iter_mut();
        let Some(first) = iter.next() else {
            return Ok(x.clone());
        };
        let mut h = first.forward(x, mode)?;
        for layer in iter {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Result<Array4<f32>> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.layers.iter().for_each(|l| l.visit_params(f));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(f));
    }
}

/// Runs every branch on the same input and concatenates the outputs along
/// the channel axis.
#[derive(Default)]
pub struct Branches {
    branches: Vec<Box<dyn Layer>>,
    widths: Vec<usize>,
}

impl Branches {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(mut self, layer: impl Layer + 'static) -> Self {
        self.branches.push(Box::new(layer));
        self
    }
}

impl Layer for Branches {
    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        let outs = self
            .branches
            .iter_mut()
            .map(|b| b.forward(x, mode))
            .collect::<Result<Vec<_>>>()?;
        self.widths = outs.iter().map(|o| o.dim().1).collect();
        let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
        concatenate(Axis(1), &views).map_err(|e| Error::shape("equal branch spatial dims", e))
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Result<Array4<f32>> {
        let mut start = 0;
        let mut total: Option<Array4<f32>> = None;
        for (branch, &w) in self.branches.iter_mut().zip(&self.widths) {
            let g = grad.slice(s![.., start..start + w, .., ..]).to_owned();
            start += w;
            let dx = branch.backward(&g)?;
            match &mut total {
                Some(t) => *t += &dx,
                None => total = Some(dx),
            }
        }
        total.ok_or_else(|| no_cache("Branches"))
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.branches.iter().for_each(|l| l.visit_params(f));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.branches.iter_mut().for_each(|l| l.visit_params_mut(f));
    }
}

/// Densely connected block: each layer sees the concatenation of the block
/// input and every earlier layer's output.
#[derive(Default)]
pub struct DenseBlock {
    layers: Vec<Box<dyn Layer>>,
    in_widths: Vec<usize>,
}

impl DenseBlock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Layer + 'static) {
        self.layers.push(Box::new(layer));
    }
}

impl Layer for DenseBlock {
    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        self.in_widths.clear();
        let mut cur = x.clone();
        for layer in &mut self.layers {
            self.in_widths.push(cur.dim().1);
            let new = layer.forward(&cur, mode)?;
            cur = concatenate(Axis(1), &[cur.view(), new.view()])
                .map_err(|e| Error::shape("dense layer output spatial dims", e))?;
        }
        Ok(cur)
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Result<Array4<f32>> {
        if self.in_widths.len() != self.layers.len() {
            return Err(no_cache("DenseBlock"));
        }
        let mut g = grad.clone();
        for (layer, &w) in self.layers.iter_mut().zip(&self.in_widths).rev() {
            let g_new = g.slice(s![.., w.., .., ..]).to_owned();
            let mut g_prev = g.slice(s![.., ..w, .., ..]).to_owned();
            g_prev += &layer.backward(&g_new)?;
            g = g_prev;
        }
        Ok(g)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.layers.iter().for_each(|l| l.visit_params(f));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(f));
    }
}

/// `relu(main(x) + shortcut(x))`, with an identity shortcut when none is given.
pub struct Residual {
    main: Sequential,
    shortcut: Option<Sequential>,
    mask: Option<Array4<bool>>,
}

impl Residual {
    pub fn new(main: Sequential, shortcut: Option<Sequential>) -> Self {
        Residual {
            main,
            shortcut,
            mask: None,
        }
    }
}

impl Layer for Residual {
    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        let mut out = self.main.forward(x, mode)?;
        match &mut self.shortcut {
            Some(sc) => out += &sc.forward(x, mode)?,
            None => {
                if out.dim() != x.dim() {
                    return Err(Error::shape(
                        format!("{:?}", out.dim()),
                        format!("{:?}", x.dim()),
                    ));
                }
                out += x;
            }
        }
        out.mapv_inplace(|v| v.max(0.0));
        if mode == Mode::Train {
            self.mask = Some(out.mapv(|v| v > 0.0));
        }
        Ok(out)
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Result<Array4<f32>> {
        let mask = self.mask.take().ok_or_else(|| no_cache("Residual"))?;
        let mut g = grad.clone();
        g.zip_mut_with(&mask, |v, &m| {
            if !m {
                *v = 0.0
            }
        });
        let mut dx = self.main.backward(&g)?;
        match &mut self.shortcut {
            Some(sc) => dx += &sc.backward(&g)?,
            None => dx += &g,
        }
        Ok(dx)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.main.visit_params(f);
        if let Some(sc) = &self.shortcut {
            sc.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.main.visit_params_mut(f);
        if let Some(sc) = &mut self.shortcut {
            sc.visit_params_mut(f);
        }
    }
}
