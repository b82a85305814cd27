use crate::labels::N_LABELS;
use crate::nn::{
    AdaptiveAvgPool2d, BatchNorm2d, Conv2d, Linear, MaxPool2d, ParamBuilder, Relu, Residual,
    Sequential,
};

const EPS: f32 = 1e-5;
const EXPANSION: usize = 4;
const HEAD_HIDDEN: usize = 128;

fn bottleneck(b: &ParamBuilder, c_in: usize, width: usize, stride: usize) -> Residual {
    let c_out = width * EXPANSION;
    let main = Sequential::new()
        .push(Conv2d::square(&b.sub("conv1"), c_in, width, 1, 1, 0, false))
        .push(BatchNorm2d::new(&b.sub("bn1"), width, EPS))
        .push(Relu::new())
        .push(Conv2d::square(
            &b.sub("conv2"),
            width,
            width,
            3,
            stride,
            1,
            false,
        ))
        .push(BatchNorm2d::new(&b.sub("bn2"), width, EPS))
        .push(Relu::new())
        .push(Conv2d::square(
            &b.sub("conv3"),
            width,
            c_out,
            1,
            1,
            0,
            false,
        ))
        .push(BatchNorm2d::new(&b.sub("bn3"), c_out, EPS));
    let shortcut = (stride != 1 || c_in != c_out).then(|| {
        let d = b.sub("downsample");
        Sequential::new()
            .push(Conv2d::square(
                &d.sub("0"),
                c_in,
                c_out,
                1,
                stride,
                0,
                false,
            ))
            .push(BatchNorm2d::new(&d.sub("1"), c_out, EPS))
    });
    Residual::new(main, shortcut)
}

/// ResNet-50 with the 1000-way classifier replaced by a
/// 2048 -> 128 -> relu -> 14 head.
pub(super) fn resnet50(b: &ParamBuilder) -> (Sequential, Sequential) {
    let mut body = Sequential::new()
        .push(Conv2d::square(&b.sub("conv1"), 3, 64, 7, 2, 3, false))
        .push(BatchNorm2d::new(&b.sub("bn1"), 64, EPS))
        .push(Relu::new())
        .push(MaxPool2d::new(3, 2, 1));
    let mut c = 64;
    for (i, (&blocks, &width)) in [3usize, 4, 6, 3]
        .iter()
        .zip(&[64usize, 128, 256, 512])
        .enumerate()
    {
        let lb = b.sub(format!("layer{}", i + 1));
        for j in 0..blocks {
            let stride = if i > 0 && j == 0 { 2 } else { 1 };
            body.push_boxed(Box::new(bottleneck(
                &lb.sub(j.to_string()),
                c,
                width,
                stride,
            )));
            c = width * EXPANSION;
        }
    }
    let body = body.push(AdaptiveAvgPool2d::new(1, 1));
    let fc = b.sub("fc");
    let head = Sequential::new()
        .push(Linear::new(&fc.sub("0"), c, HEAD_HIDDEN))
        .push(Relu::new())
        .push(Linear::new(&fc.sub("2"), HEAD_HIDDEN, N_LABELS));
    (body, head)
}
