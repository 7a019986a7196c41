//! Seeded parameter initialization.
//!
//! All randomness comes from xoshiro256++ generators. A named sub-stream is
//! seeded with `seed ^ fnv1a64(name)` passed through SplitMix64 (the
//! generator's `seed_from_u64`), so independent consumers never share a
//! sequence.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type Rng64 = Xoshiro256PlusPlus;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Generator for the sub-stream `name` of `seed`.
pub fn substream(seed: u64, name: &str) -> Rng64 {
    Rng64::seed_from_u64(seed ^ fnv1a64(name.as_bytes()))
}

/// He/Kaiming uniform: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Scalar>(shape: &[usize], rng: &mut Rng64) -> Tensor<T> {
    let fan_in: usize = shape.iter().skip(1).product::<usize>().max(1);
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..bound)))
}

pub fn uniform<T: Scalar>(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(lo..hi)))
}
