use chestxr::nn::Mode;
use chestxr::tensorfile;
use chestxr::zoo::{build_backbone, build_model, ArchId, WeightSource};
use chestxr::Error;
use ndarray::{Array2, Array4};

fn counts(arch: ArchId) -> (usize, usize) {
    let m = build_model(arch, false, &WeightSource::offline(None), 0).unwrap();
    let r = m.parameter_report();
    (r.total, r.trainable)
}

#[test]
fn backbone_parameter_counts() {
    assert_eq!(counts(ArchId::CustomNet), (504_126, 504_126));
    assert_eq!(counts(ArchId::DenseNet121), (6_968_206, 6_968_206));
    assert_eq!(counts(ArchId::ResNet50), (23_772_110, 264_078));
    assert_eq!(counts(ArchId::InceptionV3), (21_814_254, 28_686));
    assert_eq!(counts(ArchId::Vgg16), (134_317_902, 57_358));
}

#[test]
fn torchvision_names() {
    let names = |arch| {
        let m = build_model(arch, false, &WeightSource::offline(None), 0).unwrap();
        let mut v = Vec::new();
        m.visit_params(&mut |p| v.push(p.name.clone()));
        v
    };
    let d = names(ArchId::DenseNet121);
    assert!(d.contains(&"features.denseblock3.denselayer24.conv2.weight".to_string()));
    assert!(d.contains(&"features.transition1.norm.running_var".to_string()));
    assert_eq!(d.last().unwrap(), "classifier.bias");
    let r = names(ArchId::ResNet50);
    assert!(r.contains(&"layer4.0.downsample.1.running_mean".to_string()));
    assert!(r.contains(&"fc.2.weight".to_string()));
    let i = names(ArchId::InceptionV3);
    assert!(i.contains(&"Mixed_7c.branch3x3dbl_3b.conv.weight".to_string()));
    assert!(i.contains(&"Mixed_6e.branch_pool.bn.bias".to_string()));
    let v = names(ArchId::Vgg16);
    assert!(v.contains(&"features.28.weight".to_string()));
    assert!(v.contains(&"classifier.3.bias".to_string()));
    assert_eq!(v.last().unwrap(), "classifier.6.bias");
}

#[test]
fn small_inputs_run_through_backbones() {
    let src = WeightSource::offline(None);
    for (arch, size) in [
        (ArchId::DenseNet121, 32),
        (ArchId::ResNet50, 32),
        (ArchId::InceptionV3, 75),
    ] {
        let mut m = build_model(arch, false, &src, 1).unwrap();
        let x = Array4::from_shape_fn((2, 3, size, size), |(n, c, h, w)| {
            ((n * 3 + c + h + 2 * w) % 11) as f32 / 11.0
        });
        let p = m.forward(&x, Mode::Train).unwrap();
        assert_eq!(p.dim(), (2, 14), "{arch}");
        m.backward_logits(&Array2::from_elem((2, 14), 0.1)).unwrap();
        let mut body_grads = 0;
        let mut head_grads = 0;
        m.visit_params(&mut |p| {
            if p.grad.is_some() {
                if p.trainable {
                    head_grads += 1;
                } else {
                    body_grads += 1;
                }
            }
        });
        assert!(head_grads > 0, "{arch}");
        assert_eq!(body_grads, 0, "{arch}");
        let small = Array4::zeros((1, 3, size - 1, size - 1));
        assert!(m.forward(&small, Mode::Eval).is_err(), "{arch}");
    }
}

#[test]
fn pretrained_weights_load_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let src = WeightSource::offline(Some(dir.path().to_path_buf()));
    let err = build_backbone(ArchId::ResNet50, true, &src, 0)
        .err()
        .unwrap();
    assert!(matches!(err, Error::WeightFetch { .. }));

    let donor = build_model(ArchId::ResNet50, false, &src, 7).unwrap();
    let bytes = tensorfile::to_bytes(&donor.state(), None).unwrap();
    std::fs::write(src.path_for(ArchId::ResNet50).unwrap(), bytes).unwrap();
    let loaded = build_backbone(ArchId::ResNet50, true, &src, 99).unwrap();
    assert_eq!(loaded.frozen_state(), donor.frozen_state());
    let fresh = build_model(ArchId::ResNet50, false, &src, 99).unwrap();
    assert_ne!(fresh.frozen_state(), donor.frozen_state());

    let mut partial = donor.state();
    partial.retain(|(k, _)| k != "layer1.0.conv1.weight");
    std::fs::write(
        src.path_for(ArchId::ResNet50).unwrap(),
        tensorfile::to_bytes(&partial, None).unwrap(),
    )
    .unwrap();
    assert!(matches!(
        build_backbone(ArchId::ResNet50, true, &src, 0),
        Err(Error::WeightFetch { .. })
    ));
}

fn ramp(n: usize, size: usize) -> Array4<f32> {
    Array4::from_shape_fn((n, 3, size, size), |(b, c, h, w)| {
        ((b * 5 + c * 3 + h * 7 + w) % 17) as f32 / 17.0 - 0.5
    })
}

#[test]
fn every_arch_maps_images_to_fourteen_probabilities() {
    let src = WeightSource::offline(None);
    for arch in ArchId::ALL {
        let mut m = build_model(arch, false, &src, 3).unwrap();
        for (n, size) in [(2, 320), (1, 128)] {
            let p = m.forward(&ramp(n, size), Mode::Eval).unwrap();
            assert_eq!(p.dim(), (n, 14), "{arch} at {size}");
            assert!(
                p.iter().all(|v| (0.0..=1.0).contains(v)),
                "{arch} at {size}"
            );
        }
    }
}

#[test]
fn eval_forward_is_deterministic_and_batch_independent() {
    let src = WeightSource::offline(None);
    for arch in [ArchId::CustomNet, ArchId::DenseNet121] {
        let mut m = build_model(arch, false, &src, 5).unwrap();
        let x = ramp(3, 64);
        let a = m.forward(&x, Mode::Eval).unwrap();
        let b = m.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, b, "{arch}");
        let single = m
            .forward(
                &x.slice(ndarray::s![1..2, .., .., ..]).to_owned(),
                Mode::Eval,
            )
            .unwrap();
        for k in 0..14 {
            assert!((single[[0, k]] - a[[1, k]]).abs() < 1e-5, "{arch}");
        }
    }
}
