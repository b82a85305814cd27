use crate::labels::N_LABELS;
use crate::nn::{
    AdaptiveAvgPool2d, AvgPool2d, BatchNorm2d, Branches, Conv2d, Dropout, InputAffine, Linear,
    MaxPool2d, ParamBuilder, Relu, Sequential,
};

const EPS: f32 = 1e-3;

fn basic(
    b: &ParamBuilder,
    name: &str,
    cin: usize,
    cout: usize,
    k: (usize, usize),
    s: usize,
    p: (usize, usize),
) -> Sequential {
    let nb = b.sub(name);
    Sequential::new()
        .push(Conv2d::new(&nb.sub("conv"), cin, cout, k, (s, s), p, false))
        .push(BatchNorm2d::new(&nb.sub("bn"), cout, EPS))
        .push(Relu::new())
}

fn sq(
    b: &ParamBuilder,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    s: usize,
    p: usize,
) -> Sequential {
    basic(b, name, cin, cout, (k, k), s, (p, p))
}

fn pool_branch(b: &ParamBuilder, cin: usize, cout: usize) -> Sequential {
    Sequential::new()
        .push(AvgPool2d::new(3, 1, 1))
        .push(sq(b, "branch_pool", cin, cout, 1, 1, 0))
}

fn inception_a(b: &ParamBuilder, cin: usize, pool_features: usize) -> Branches {
    Branches::new()
        .push(sq(b, "branch1x1", cin, 64, 1, 1, 0))
        .push(
            Sequential::new()
                .push(sq(b, "branch5x5_1", cin, 48, 1, 1, 0))
                .push(sq(b, "branch5x5_2", 48, 64, 5, 1, 2)),
        )
        .push(
            Sequential::new()
                .push(sq(b, "branch3x3dbl_1", cin, 64, 1, 1, 0))
                .push(sq(b, "branch3x3dbl_2", 64, 96, 3, 1, 1))
                .push(sq(b, "branch3x3dbl_3", 96, 96, 3, 1, 1)),
        )
        .push(pool_branch(b, cin, pool_features))
}

fn inception_b(b: &ParamBuilder, cin: usize) -> Branches {
    Branches::new()
        .push(sq(b, "branch3x3", cin, 384, 3, 2, 0))
        .push(
            Sequential::new()
                .push(sq(b, "branch3x3dbl_1", cin, 64, 1, 1, 0))
                .push(sq(b, "branch3x3dbl_2", 64, 96, 3, 1, 1))
                .push(sq(b, "branch3x3dbl_3", 96, 96, 3, 2, 0)),
        )
        .push(MaxPool2d::new(3, 2, 0))
}

fn inception_c(b: &ParamBuilder, cin: usize, c7: usize) -> Branches {
    let row = (1, 7);
    let col = (7, 1);
    Branches::new()
        .push(sq(b, "branch1x1", cin, 192, 1, 1, 0))
        .push(
            Sequential::new()
                .push(sq(b, "branch7x7_1", cin, c7, 1, 1, 0))
                .push(basic(b, "branch7x7_2", c7, c7, row, 1, (0, 3)))
                .push(basic(b, "branch7x7_3", c7, 192, col, 1, (3, 0))),
        )
        .push(
            Sequential::new()
                .push(sq(b, "branch7x7dbl_1", cin, c7, 1, 1, 0))
                .push(basic(b, "branch7x7dbl_2", c7, c7, col, 1, (3, 0)))
                .push(basic(b, "branch7x7dbl_3", c7, c7, row, 1, (0, 3)))
                .push(basic(b, "branch7x7dbl_4", c7, c7, col, 1, (3, 0)))
                .push(basic(b, "branch7x7dbl_5", c7, 192, row, 1, (0, 3))),
        )
        .push(pool_branch(b, cin, 192))
}

fn inception_d(b: &ParamBuilder, cin: usize) -> Branches {
    Branches::new()
        .push(
            Sequential::new()
                .push(sq(b, "branch3x3_1", cin, 192, 1, 1, 0))
                .push(sq(b, "branch3x3_2", 192, 320, 3, 2, 0)),
        )
        .push(
            Sequential::new()
                .push(sq(b, "branch7x7x3_1", cin, 192, 1, 1, 0))
                .push(basic(b, "branch7x7x3_2", 192, 192, (1, 7), 1, (0, 3)))
                .push(basic(b, "branch7x7x3_3", 192, 192, (7, 1), 1, (3, 0)))
                .push(sq(b, "branch7x7x3_4", 192, 192, 3, 2, 0)),
        )
        .push(MaxPool2d::new(3, 2, 0))
}

fn inception_e(b: &ParamBuilder, cin: usize) -> Branches {
    let split = |a: &str, bn: &str| {
        Branches::new()
            .push(basic(b, a, 384, 384, (1, 3), 1, (0, 1)))
            .push(basic(b, bn, 384, 384, (3, 1), 1, (1, 0)))
    };
    Branches::new()
        .push(sq(b, "branch1x1", cin, 320, 1, 1, 0))
        .push(
            Sequential::new()
                .push(sq(b, "branch3x3_1", cin, 384, 1, 1, 0))
                .push(split("branch3x3_2a", "branch3x3_2b")),
        )
        .push(
            Sequential::new()
                .push(sq(b, "branch3x3dbl_1", cin, 448, 1, 1, 0))
                .push(sq(b, "branch3x3dbl_2", 448, 384, 3, 1, 1))
                .push(split("branch3x3dbl_3a", "branch3x3dbl_3b")),
        )
        .push(pool_branch(b, cin, 192))
}

/// Inception-v3 without the auxiliary classifier. Pretrained weights expect
/// inputs re-normalized from ImageNet statistics to [-1, 1].
pub(super) fn inception_v3(b: &ParamBuilder, pretrained: bool) -> (Sequential, Sequential) {
    let mut body = Sequential::new();
    if pretrained {
        let mean = [0.485f32, 0.456, 0.406];
        let std = [0.229f32, 0.224, 0.225];
        body.push_boxed(Box::new(InputAffine::new(
            std.iter().map(|s| s / 0.5).collect(),
            mean.iter().map(|m| (m - 0.5) / 0.5).collect(),
        )));
    }
    let body = body
        .push(sq(b, "Conv2d_1a_3x3", 3, 32, 3, 2, 0))
        .push(sq(b, "Conv2d_2a_3x3", 32, 32, 3, 1, 0))
        .push(sq(b, "Conv2d_2b_3x3", 32, 64, 3, 1, 1))
        .push(MaxPool2d::new(3, 2, 0))
        .push(sq(b, "Conv2d_3b_1x1", 64, 80, 1, 1, 0))
        .push(sq(b, "Conv2d_4a_3x3", 80, 192, 3, 1, 0))
        .push(MaxPool2d::new(3, 2, 0))
        .push(inception_a(&b.sub("Mixed_5b"), 192, 32))
        .push(inception_a(&b.sub("Mixed_5c"), 256, 64))
        .push(inception_a(&b.sub("Mixed_5d"), 288, 64))
        .push(inception_b(&b.sub("Mixed_6a"), 288))
        .push(inception_c(&b.sub("Mixed_6b"), 768, 128))
        .push(inception_c(&b.sub("Mixed_6c"), 768, 160))
        .push(inception_c(&b.sub("Mixed_6d"), 768, 160))
        .push(inception_c(&b.sub("Mixed_6e"), 768, 192))
        .push(inception_d(&b.sub("Mixed_7a"), 768))
        .push(inception_e(&b.sub("Mixed_7b"), 1280))
        .push(inception_e(&b.sub("Mixed_7c"), 2048))
        .push(AdaptiveAvgPool2d::new(1, 1));
    let head = Sequential::new()
        .push(Dropout::new(b, "dropout", 0.5))
        .push(Linear::new(&b.sub("fc"), 2048, N_LABELS));
    (body, head)
}
