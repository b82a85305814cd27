//! Architecture zoo: the from-scratch CustomNet and four ImageNet backbones
//! with their classification heads replaced by 14 sigmoid outputs.
//!
//! Parameter names follow the torchvision state-dict layout so that
//! converted ImageNet weights load by name.

mod custom;
mod densenet;
mod inception;
mod resnet;
mod vgg;
mod weights;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array4, ArrayD};
use serde::{Deserialize, Serialize};

pub use custom::build_custom_net;
pub use weights::{WeightSource, WEIGHTS_DIR_ENV, WEIGHTS_URL_ENV};

use crate::error::{Error, Result};
use crate::labels::N_LABELS;
use crate::nn::{sigmoid, Layer, Mode, Param, ParamBuilder, ParamKind, Sequential};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchId {
    #[serde(rename = "customnet")]
    CustomNet,
    #[serde(rename = "densenet121")]
    DenseNet121,
    #[serde(rename = "resnet50")]
    ResNet50,
    #[serde(rename = "inception_v3")]
    InceptionV3,
    #[serde(rename = "vgg16")]
    Vgg16,
}

impl ArchId {
    pub const ALL: [ArchId; 5] = [
        ArchId::CustomNet,
        ArchId::DenseNet121,
        ArchId::ResNet50,
        ArchId::InceptionV3,
        ArchId::Vgg16,
    ];

    /// Identifier used on the command line and in file names.
    pub fn key(self) -> &'static str {
        match self {
            ArchId::CustomNet => "customnet",
            ArchId::DenseNet121 => "densenet121",
            ArchId::ResNet50 => "resnet50",
            ArchId::InceptionV3 => "inception_v3",
            ArchId::Vgg16 => "vgg16",
        }
    }

    /// Name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ArchId::CustomNet => "CustomNet",
            ArchId::DenseNet121 => "DenseNet121",
            ArchId::ResNet50 => "ResNet50",
            ArchId::InceptionV3 => "Inception",
            ArchId::Vgg16 => "Vgg16",
        }
    }

    /// Smallest square input the architecture accepts.
    pub fn min_input(self) -> usize {
        match self {
            ArchId::InceptionV3 => 75,
            ArchId::CustomNet => 16,
            _ => 32,
        }
    }

    fn freeze(self) -> FreezePolicy {
        match self {
            ArchId::CustomNet | ArchId::DenseNet121 => FreezePolicy::AllTrainable,
            _ => FreezePolicy::HeadOnly,
        }
    }

    fn head_dims(self) -> Vec<usize> {
        match self {
            ArchId::CustomNet => vec![512, N_LABELS],
            ArchId::DenseNet121 => vec![1024, N_LABELS],
            ArchId::ResNet50 => vec![2048, 128, N_LABELS],
            ArchId::InceptionV3 => vec![2048, N_LABELS],
            ArchId::Vgg16 => vec![4096, N_LABELS],
        }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        ArchId::ALL
            .into_iter()
            .find(|a| a.key() == lower || a.display_name().to_ascii_lowercase() == lower)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown architecture `{s}` (expected one of customnet, densenet121, resnet50, inception_v3, vgg16)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    /// Every parameter tensor is optimized.
    AllTrainable,
    /// The backbone is frozen and runs in inference mode; only the head trains.
    HeadOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: ArchId,
    pub pretrained: bool,
    pub freeze: FreezePolicy,
    /// Widths of the fully connected head, input first; the last entry is
    /// the number of sigmoid outputs.
    pub head_dims: Vec<usize>,
}

impl ModelSpec {
    pub fn new(arch: ArchId, pretrained: bool) -> Self {
        ModelSpec {
            arch,
            pretrained,
            freeze: arch.freeze(),
            head_dims: arch.head_dims(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterReport {
    pub per_tensor: Vec<(String, usize)>,
    pub total: usize,
    pub trainable: usize,
}

impl ParameterReport {
    /// Two-column per-tensor table followed by the trainable total.
    pub fn to_module_table(&self) -> String {
        let mut out = String::from("Modules,Parameters\n");
        for (name, n) in &self.per_tensor {
            out.push_str(&format!("{name},{n}\n"));
        }
        out.push_str(&format!("Total Trainable Params: {}\n", self.trainable));
        out
    }
}

/// Enumerates every learnable tensor (running statistics excluded).
pub fn count_parameters(layer: &dyn Layer) -> ParameterReport {
    let mut per_tensor = Vec::new();
    let mut trainable = 0;
    layer.visit_params(&mut |p: &Param| {
        if p.kind == ParamKind::Weight {
            per_tensor.push((p.name.clone(), p.numel()));
            if p.trainable {
                trainable += p.numel();
            }
        }
    });
    let total = per_tensor.iter().map(|(_, n)| n).sum();
    ParameterReport {
        per_tensor,
        total,
        trainable,
    }
}

/// Backbone plus fully connected head emitting one logit per label.
pub struct Model {
    spec: ModelSpec,
    body: Sequential,
    head: Sequential,
}

impl Model {
    pub(crate) fn new(spec: ModelSpec, body: Sequential, head: Sequential) -> Self {
        let mut model = Model { spec, body, head };
        if model.spec.freeze == FreezePolicy::HeadOnly {
            model.body.visit_params_mut(&mut |p| p.trainable = false);
        }
        model
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn arch(&self) -> ArchId {
        self.spec.arch
    }

    fn body_trainable(&self) -> bool {
        self.spec.freeze == FreezePolicy::AllTrainable
    }

    fn check_input(&self, x: &Array4<f32>) -> Result<()> {
        let (n, c, h, w) = x.dim();
        let min = self.spec.arch.min_input();
        if n == 0 || c != 3 || h < min || w < min {
            return Err(Error::shape(
                format!("(N>=1, 3, H>={min}, W>={min})"),
                format!("{:?}", x.dim()),
            ));
        }
        Ok(())
    }

    /// Pre-sigmoid outputs, shape (batch, 14).
    pub fn forward_logits(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array2<f32>> {
        self.check_input(x)?;
        let body_mode = if self.body_trainable() {
            mode
        } else {
            Mode::Eval
        };
        let features = self.body.forward(x, body_mode)?;
        let out = self.head.forward(&features, mode)?;
        let (n, k, _, _) = out.dim();
        Ok(out
            .into_shape_with_order((n, k))
            .expect("head output is (N, K, 1, 1)"))
    }

    /// Label probabilities, shape (batch, 14); rows are independent sigmoids.
    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array2<f32>> {
        Ok(self.forward_logits(x, mode)?.mapv(sigmoid))
    }

    /// Back-propagates a gradient w.r.t. the logits of the last train-mode
    /// forward pass. The frozen backbone is not visited.
    pub fn backward_logits(&mut self, grad: &Array2<f32>) -> Result<()> {
        let (n, k) = grad.dim();
        let g = grad
            .clone()
            .into_shape_with_order((n, k, 1, 1))
            .expect("reshape");
        let g_features = self.head.backward(&g)?;
        if self.body_trainable() {
            self.body.backward(&g_features)?;
        }
        Ok(())
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.body.visit_params(f);
        self.head.visit_params(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.body.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }

    pub fn parameter_report(&self) -> ParameterReport {
        count_parameters(self)
    }

    /// Name and value of every persisted tensor, buffers included.
    pub fn state(&self) -> Vec<(String, ArrayD<f32>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push((p.name.clone(), p.value.clone())));
        out
    }

    /// Names and values of frozen learnable tensors.
    pub fn frozen_state(&self) -> Vec<(String, ArrayD<f32>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| {
            if p.kind == ParamKind::Weight && !p.trainable {
                out.push((p.name.clone(), p.value.clone()));
            }
        });
        out
    }

    /// Overwrites tensors by name. Every model tensor must be present with a
    /// matching shape; extra entries are ignored.
    pub fn load_state(&mut self, state: &[(String, ArrayD<f32>)]) -> Result<()> {
        let map: std::collections::HashMap<&str, &ArrayD<f32>> =
            state.iter().map(|(k, v)| (k.as_str(), v)).collect();
        let mut err = None;
        self.visit_params_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            match map.get(p.name.as_str()) {
                Some(v) if v.shape() == p.value.shape() => p.value.assign(v),
                Some(v) => {
                    err = Some(Error::shape(
                        format!("{} {:?}", p.name, p.value.shape()),
                        format!("{:?}", v.shape()),
                    ))
                }
                None => {
                    err = Some(Error::Config(format!(
                        "state is missing tensor `{}`",
                        p.name
                    )))
                }
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.grad = None);
    }

    /// Sets every tensor, buffers included, to zero.
    pub fn zero_weights(&mut self) {
        self.visit_params_mut(&mut |p| p.value.fill(0.0));
    }
}

impl Layer for Model {
    fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array4<f32>> {
        let logits = self.forward_logits(x, mode)?;
        let (n, k) = logits.dim();
        Ok(logits.into_shape_with_order((n, k, 1, 1)).expect("reshape"))
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Result<Array4<f32>> {
        let (n, k, _, _) = grad.dim();
        self.backward_logits(&grad.clone().into_shape_with_order((n, k)).expect("reshape"))?;
        Ok(Array4::zeros((0, 0, 0, 0)))
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        Model::visit_params(self, f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        Model::visit_params_mut(self, f)
    }
}

/// Builds any architecture. Backbones with `pretrained` load ImageNet
/// weights from `source` and fail rather than fall back to random values.
pub fn build_model(
    arch: ArchId,
    pretrained: bool,
    source: &WeightSource,
    seed: u64,
) -> Result<Model> {
    match arch {
        ArchId::CustomNet => {
            if pretrained {
                return Err(Error::Config("CustomNet has no pretrained weights".into()));
            }
            Ok(build_custom_net(seed))
        }
        _ => build_backbone(arch, pretrained, source, seed),
    }
}

pub fn build_backbone(
    arch: ArchId,
    pretrained: bool,
    source: &WeightSource,
    seed: u64,
) -> Result<Model> {
    if arch == ArchId::CustomNet {
        return Err(Error::Config(
            "CustomNet is not a pretrained backbone".into(),
        ));
    }
    let mut model = build_architecture(&ModelSpec::new(arch, pretrained), seed)?;
    if pretrained {
        let tensors = source.load(arch)?;
        weights::apply(&mut model.body, &tensors, arch)?;
    }
    Ok(model)
}

/// The network described by `spec` with seeded random values everywhere,
/// including where `spec.pretrained` would load ImageNet weights. Used to
/// restore checkpoints, which carry every tensor.
pub fn build_architecture(spec: &ModelSpec, seed: u64) -> Result<Model> {
    let expected = ModelSpec::new(spec.arch, spec.pretrained);
    if spec.freeze != expected.freeze || spec.head_dims != expected.head_dims {
        return Err(Error::Config(format!(
            "unsupported model spec for {}: freeze {:?}, head {:?}",
            spec.arch, spec.freeze, spec.head_dims
        )));
    }
    if spec.arch == ArchId::CustomNet {
        if spec.pretrained {
            return Err(Error::Config("CustomNet has no pretrained weights".into()));
        }
        return Ok(build_custom_net(seed));
    }
    let b = ParamBuilder::new(seed);
    let (body, head) = match spec.arch {
        ArchId::DenseNet121 => densenet::densenet121(&b),
        ArchId::ResNet50 => resnet::resnet50(&b),
        ArchId::InceptionV3 => inception::inception_v3(&b, spec.pretrained),
        ArchId::Vgg16 => vgg::vgg16(&b),
        ArchId::CustomNet => unreachable!(),
    };
    Ok(Model::new(spec.clone(), body, head))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_ids_parse() {
        for a in ArchId::ALL {
            assert_eq!(a.key().parse::<ArchId>().unwrap(), a);
            assert_eq!(a.display_name().parse::<ArchId>().unwrap(), a);
        }
        assert!(matches!("alexnet".parse::<ArchId>(), Err(Error::Config(_))));
    }

    #[test]
    fn empty_model_has_no_parameters() {
        let report = count_parameters(&Sequential::new());
        assert_eq!(report.total, 0);
        assert_eq!(report.trainable, 0);
    }

    #[test]
    fn single_head_layer_count() {
        let b = ParamBuilder::new(0).sub("Lin1.0");
        let report = count_parameters(&crate::nn::Linear::new(&b, 512, 14));
        assert_eq!(report.total, 7182);
        assert_eq!(
            report.per_tensor,
            vec![("Lin1.0.weight".into(), 7168), ("Lin1.0.bias".into(), 14)]
        );
    }

    #[test]
    fn customnet_module_table() {
        let report = build_custom_net(0).parameter_report();
        let counts: Vec<usize> = report.per_tensor.iter().map(|(_, n)| *n).collect();
        assert_eq!(
            counts,
            vec![
                216, 8, 1152, 16, 12800, 32, 9216, 32, 18432, 64, 102400, 64, 204800, 128, 147456,
                128, 7168, 14
            ]
        );
        assert_eq!(report.per_tensor[0].0, "ConvLayer1.0.weight");
        assert_eq!(report.per_tensor[3].0, "ConvLayer1.1.bias");
        assert_eq!(report.per_tensor[16].0, "Lin1.0.weight");
        assert_eq!((report.total, report.trainable), (504_126, 504_126));
    }

    #[test]
    fn customnet_output_is_probabilities() {
        let mut m = build_custom_net(3);
        let x = Array4::from_shape_fn((2, 3, 32, 40), |(n, c, h, w)| {
            ((n + c + h * w) % 7) as f32 / 7.0 - 0.5
        });
        let p = m.forward(&x, Mode::Eval).unwrap();
        assert_eq!(p.dim(), (2, N_LABELS));
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(m
            .forward(&Array4::zeros((1, 1, 32, 32)), Mode::Eval)
            .is_err());
        assert!(m.forward(&Array4::zeros((1, 3, 8, 8)), Mode::Eval).is_err());
    }

    #[test]
    fn zero_weights_gives_half() {
        let mut m = build_custom_net(1);
        m.zero_weights();
        let p = m
            .forward(&Array4::ones((1, 3, 16, 16)), Mode::Eval)
            .unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn customnet_rejects_pretrained() {
        let src = WeightSource::offline(None);
        assert!(build_model(ArchId::CustomNet, true, &src, 0).is_err());
    }
}
