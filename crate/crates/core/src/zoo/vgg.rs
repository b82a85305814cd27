use crate::labels::N_LABELS;
use crate::nn::{
    AdaptiveAvgPool2d, Conv2d, Dropout, Linear, MaxPool2d, ParamBuilder, Relu, Sequential,
};

/// Channel widths, `None` marking a 2x2 max-pool.
const CFG: [Option<usize>; 18] = [
    Some(64),
    Some(64),
    None,
    Some(128),
    Some(128),
    None,
    Some(256),
    Some(256),
    Some(256),
    None,
    Some(512),
    Some(512),
    Some(512),
    None,
    Some(512),
    Some(512),
    Some(512),
    None,
];

/// VGG-16: everything up to the second 4096-wide layer is backbone; the
/// final 4096 -> 14 layer is the head.
pub(super) fn vgg16(b: &ParamBuilder) -> (Sequential, Sequential) {
    let f = b.sub("features");
    let mut body = Sequential::new();
    let mut idx = 0;
    let mut c = 3;
    for entry in CFG {
        match entry {
            Some(out) => {
                body.push_boxed(Box::new(Conv2d::square(
                    &f.sub(idx.to_string()),
                    c,
                    out,
                    3,
                    1,
                    1,
                    true,
                )));
                body.push_boxed(Box::new(Relu::new()));
                c = out;
                idx += 2;
            }
            None => {
                body.push_boxed(Box::new(MaxPool2d::new(2, 2, 0)));
                idx += 1;
            }
        }
    }
    let cl = b.sub("classifier");
    let body = body
        .push(AdaptiveAvgPool2d::new(7, 7))
        .push(Linear::new(&cl.sub("0"), 512 * 7 * 7, 4096))
        .push(Relu::new())
        .push(Dropout::new(&cl, "2", 0.5))
        .push(Linear::new(&cl.sub("3"), 4096, 4096))
        .push(Relu::new())
        .push(Dropout::new(&cl, "5", 0.5));
    let head = Sequential::new().push(Linear::new(&cl.sub("6"), 4096, N_LABELS));
    (body, head)
}
