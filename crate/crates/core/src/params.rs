//! Shared helpers for parameter containers and seeded random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Stable, ordered access to the tensors a component owns.
pub trait Named {
    fn named(&self) -> Vec<(&'static str, &Tensor)>;
    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)>;
}

/// Tensor with entries drawn i.i.d. from `[−range, range]`.
pub fn uniform<R: Rng>(shape: &[usize], range: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-range..=range)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree")
}

/// Independent random stream tags derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Embedding = 1,
    Params = 2,
    Shuffle = 3,
    Dropout = 4,
    ChannelMask = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for `(seed, stream, index...)`.
pub fn substream(seed: u64, stream: Stream, index: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed ^ splitmix(stream as u64));
    for &i in index {
        h = splitmix(h ^ splitmix(i.wrapping_add(0x1234_5678)));
    }
    ChaCha8Rng::seed_from_u64(h)
}
