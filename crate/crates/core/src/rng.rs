//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own named ChaCha8 stream keyed
//! by `(seed, purpose)`, so adding a new consumer never shifts the numbers an
//! existing one sees. Normal variates use the inverse-CDF transform, which
//! consumes exactly one uniform per draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Named purposes for independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    GaussianField,
    Noise,
    MixtureFlags,
    Split,
    Folds,
    Init,
    Shuffle,
    Dropout,
    Partition,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::GaussianField => 1,
            Stream::Noise => 2,
            Stream::MixtureFlags => 3,
            Stream::Split => 4,
            Stream::Folds => 5,
            Stream::Init => 6,
            Stream::Shuffle => 7,
            Stream::Dropout => 8,
            Stream::Partition => 9,
        }
    }
}

/// Build the generator for `(seed, stream)`.
pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose.id());
    rng
}

/// Uniform draw on the open interval (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // 53 random bits shifted by half an ulp keeps both endpoints excluded.
    let bits = rng.next_u64() >> 11;
    (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw by inverting the normal CDF.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    normal_quantile(open_unit(rng))
}

/// Quantile function of the standard normal distribution.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Mix a base seed with an index so that derived seeds stay distinct.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
