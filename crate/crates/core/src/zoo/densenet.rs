use crate::labels::N_LABELS;
use crate::nn::{
    AdaptiveAvgPool2d, AvgPool2d, BatchNorm2d, Conv2d, DenseBlock, Linear, MaxPool2d, ParamBuilder,
    Relu, Sequential,
};

const GROWTH: usize = 32;
const BN_SIZE: usize = 4;
const BLOCK_LAYERS: [usize; 4] = [6, 12, 24, 16];
const EPS: f32 = 1e-5;

fn dense_layer(b: &ParamBuilder, c_in: usize) -> Sequential {
    let mid = BN_SIZE * GROWTH;
    Sequential::new()
        .push(BatchNorm2d::new(&b.sub("norm1"), c_in, EPS))
        .push(Relu::new())
        .push(Conv2d::square(&b.sub("conv1"), c_in, mid, 1, 1, 0, false))
        .push(BatchNorm2d::new(&b.sub("norm2"), mid, EPS))
        .push(Relu::new())
        .push(Conv2d::square(&b.sub("conv2"), mid, GROWTH, 3, 1, 1, false))
}

pub(super) fn densenet121(b: &ParamBuilder) -> (Sequential, Sequential) {
    let f = b.sub("features");
    let mut body = Sequential::new()
        .push(Conv2d::square(&f.sub("conv0"), 3, 64, 7, 2, 3, false))
        .push(BatchNorm2d::new(&f.sub("norm0"), 64, EPS))
        .push(Relu::new())
        .push(MaxPool2d::new(3, 2, 1));
    let mut c = 64;
    for (i, &n_layers) in BLOCK_LAYERS.iter().enumerate() {
        let bb = f.sub(format!("denseblock{}", i + 1));
        let mut block = DenseBlock::new();
        for j in 0..n_layers {
            block.push(dense_layer(&bb.sub(format!("denselayer{}", j + 1)), c));
            c += GROWTH;
        }
        body.push_boxed(Box::new(block));
        if i + 1 < BLOCK_LAYERS.len() {
            let t = f.sub(format!("transition{}", i + 1));
            body.push_boxed(Box::new(
                Sequential::new()
                    .push(BatchNorm2d::new(&t.sub("norm"), c, EPS))
                    .push(Relu::new())
                    .push(Conv2d::square(&t.sub("conv"), c, c / 2, 1, 1, 0, false))
                    .push(AvgPool2d::new(2, 2, 0)),
            ));
            c /= 2;
        }
    }
    let body = body
        .push(BatchNorm2d::new(&f.sub("norm5"), c, EPS))
        .push(Relu::new())
        .push(AdaptiveAvgPool2d::new(1, 1));
    let head = Sequential::new().push(Linear::new(&b.sub("classifier"), c, N_LABELS));
    (body, head)
}
