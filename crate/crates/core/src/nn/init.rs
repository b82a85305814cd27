use ndarray::{ArrayD, IxDyn};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Param, ParamKind};

/// Creates named parameters with seeded, name-addressed initial values.
///
/// The random stream of each tensor depends only on the seed and the
/// tensor's full name, so construction order never changes the values.
#[derive(Debug, Clone)]
pub struct ParamBuilder {
    seed: u64,
    prefix: String,
}

pub(crate) fn name_hash(name: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        ParamBuilder {
            seed,
            prefix: String::new(),
        }
    }

    pub fn sub(&self, name: impl AsRef<str>) -> Self {
        ParamBuilder {
            seed: self.seed,
            prefix: self.path(name.as_ref()),
        }
    }

    pub fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng_for(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(&self.path(name)))
    }

    /// U(-bound, bound) with bound = 1/sqrt(fan_in).
    pub fn fan_in_uniform(&self, name: &str, shape: &[usize], fan_in: usize) -> Param {
        self.uniform(name, shape, 1.0 / (fan_in.max(1) as f32).sqrt())
    }

    /// He-uniform for layers followed by ReLU: bound = sqrt(6/fan_in).
    pub fn kaiming_uniform(&self, name: &str, shape: &[usize], fan_in: usize) -> Param {
        self.uniform(name, shape, (6.0 / fan_in.max(1) as f32).sqrt())
    }

    fn uniform(&self, name: &str, shape: &[usize], bound: f32) -> Param {
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let mut rng = self.rng_for(name);
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let value = ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches data");
        Param::new(self.path(name), value, ParamKind::Weight)
    }

    pub fn constant(&self, name: &str, shape: &[usize], v: f32, kind: ParamKind) -> Param {
        Param::new(self.path(name), ArrayD::from_elem(IxDyn(shape), v), kind)
    }
}
