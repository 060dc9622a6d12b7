//! Seeded, stream-separated randomness.
//!
//! Every consumer (rollout, particle, episode) owns its own [`RngStream`].
//! Streams are ChaCha8 generators keyed by a 64-bit seed and selected by a
//! stream id, so identical `(seed, stream)` pairs replay identical draws.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Well-known stream ids so that independent consumers never collide.
pub mod streams {
    pub const HDV_SPECS: u64 = 1;
    pub const EA_PARAMS: u64 = 2;
    pub const EA_NOISE: u64 = 3;
    pub const POLICY: u64 = 4;
    pub const AV_SPECS: u64 = 5;
    pub const SCENARIO: u64 = 6;
    pub const CALIBRATION: u64 = 7;
    pub const REPLAY: u64 = 8;
    pub const INIT: u64 = 9;
    pub const SPLIT: u64 = 10;
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh stream on the same seed with a different id.
    pub fn fork(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// SplitMix64 mix of a base seed and an index; used to give each run in a
/// batch its own seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shuffle `items` and split them `train_frac : 1 - train_frac`. With two or
/// more items both sides are non-empty.
pub fn train_test_split<T: Clone, R: RngCore + ?Sized>(
    items: &[T],
    train_frac: f64,
    rng: &mut R,
) -> (Vec<T>, Vec<T>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(rng);
    let n = items.len();
    let mut n_train = (n as f64 * train_frac.clamp(0.0, 1.0)).round() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let train = idx[..n_train].iter().map(|&i| items[i].clone()).collect();
    let test = idx[n_train..].iter().map(|&i| items[i].clone()).collect();
    (train, test)
}

/// One draw from N(mean, sd²). `sd == 0` returns `mean` exactly.
pub fn gaussian_draw<R: RngCore + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> Result<f64> {
    if sd < 0.0 || sd.is_nan() {
        return Err(Error::InvalidInput(format!("standard deviation must be >= 0, got {sd}")));
    }
    let z: f64 = StandardNormal.sample(rng);
    if sd == 0.0 {
        return Ok(mean);
    }
    Ok(mean + sd * z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_draw_is_mean() {
        let mut rng = RngStream::new(1, 0);
        assert_eq!(gaussian_draw(&mut rng, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(gaussian_draw(&mut rng, 3.5, 0.0).unwrap(), 3.5);
    }

    #[test]
    fn negative_sd_is_an_error() {
        let mut rng = RngStream::new(1, 0);
        assert!(gaussian_draw(&mut rng, 0.0, -1.0).is_err());
    }

    #[test]
    fn moments_of_standard_normal() {
        let mut rng = RngStream::new(42, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| gaussian_draw(&mut rng, 0.0, 1.0).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn same_seed_same_stream_replays() {
        let mut a = RngStream::new(9, 3);
        let mut b = RngStream::new(9, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(9, 3);
        let mut b = RngStream::new(9, 4);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn split_is_a_partition() {
        let items: Vec<u32> = (0..50).collect();
        let mut rng = RngStream::new(1, 0);
        let (train, test) = train_test_split(&items, 0.8, &mut rng);
        assert_eq!(train.len(), 40);
        assert_eq!(test.len(), 10);
        let mut all: Vec<u32> = train.into_iter().chain(test).collect();
        all.sort();
        assert_eq!(all, items);
    }

    #[test]
    fn derive_seed_spreads_indices() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
