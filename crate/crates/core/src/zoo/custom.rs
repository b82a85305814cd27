use super::{ArchId, Model, ModelSpec};
use crate::labels::N_LABELS;
use crate::nn::{AdaptiveAvgPool2d, Conv2d, Linear, MaxPool2d, ParamBuilder, Relu, Sequential};

/// (in, out, kernel) for the two convolutions of each of the four blocks.
const BLOCKS: [[(usize, usize, usize); 2]; 4] = [
    [(3, 8, 3), (8, 16, 3)],
    [(16, 32, 5), (32, 32, 3)],
    [(32, 64, 3), (64, 64, 5)],
    [(64, 128, 5), (128, 128, 3)],
];

/// Four blocks of `conv, conv, 2x2 max-pool, relu` with same-padded stride-1
/// convolutions, a 2x2 adaptive average pool (512 features at any input
/// size) and a 512 -> 14 linear head. 504,126 parameters.
pub fn build_custom_net(seed: u64) -> Model {
    let b = ParamBuilder::new(seed);
    let mut body = Sequential::new();
    for (i, block) in BLOCKS.iter().enumerate() {
        let bb = b.sub(format!("ConvLayer{}", i + 1));
        let mut seq = Sequential::new();
        for (j, &(cin, cout, k)) in block.iter().enumerate() {
            seq = seq.push(Conv2d::square(
                &bb.sub(j.to_string()),
                cin,
                cout,
                k,
                1,
                k / 2,
                true,
            ));
        }
        body.push_boxed(Box::new(
            seq.push(MaxPool2d::new(2, 2, 0)).push(Relu::new()),
        ));
    }
    body.push_boxed(Box::new(AdaptiveAvgPool2d::new(2, 2)));
    let head = Sequential::new().push(Linear::new(&b.sub("Lin1.0"), 128 * 2 * 2, N_LABELS));
    Model::new(ModelSpec::new(ArchId::CustomNet, false), body, head)
}
