use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ComplexImage, RealImage, C64};

/// Seeded, splittable random stream.
///
/// Backed by ChaCha8 with its 64-bit stream selector, so `(seed, stream)`
/// pairs address independent keystreams. Normal draws use the ziggurat
/// sampler from `rand_distr`. Both choices are frozen: changing either
/// changes every seeded output of the crate.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
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

    /// Child stream `k` of this stream. Independent of how many draws the
    /// parent has already made.
    pub fn fork(&self, k: u64) -> Rng {
        let child = splitmix64(self.stream ^ splitmix64(k.wrapping_add(1)));
        Rng::new(self.seed, child)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

pub fn gaussian_noise(rng: &mut Rng, height: usize, width: usize) -> RealImage {
    RealImage::from_fn(height, width, |_, _| rng.normal())
}

/// Real and imaginary parts drawn independently from N(0, 1).
pub fn gaussian_noise_complex(rng: &mut Rng, height: usize, width: usize) -> ComplexImage {
    ComplexImage::from_fn(height, width, |_, _| {
        let re = rng.normal();
        C64::new(re, rng.normal())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_stream_is_bit_identical() {
        let a = gaussian_noise(&mut Rng::new(42, 7), 16, 16);
        let b = gaussian_noise(&mut Rng::new(42, 7), 16, 16);
        assert_eq!(a, b);
        let c = gaussian_noise(&mut Rng::new(42, 8), 16, 16);
        assert_ne!(a, c);
    }

    #[test]
    fn fork_ignores_parent_position() {
        let parent = Rng::new(1, 0);
        let mut advanced = parent.clone();
        for _ in 0..10 {
            advanced.normal();
        }
        let a = gaussian_noise(&mut parent.fork(3), 4, 4);
        let b = gaussian_noise(&mut advanced.fork(3), 4, 4);
        assert_eq!(a, b);
        assert_ne!(a, gaussian_noise(&mut parent.fork(4), 4, 4));
    }

    #[test]
    fn million_draws_have_unit_moments() {
        let mut rng = Rng::new(2024, 0);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = rng.normal();
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn forked_streams_are_uncorrelated() {
        let root = Rng::new(9, 0);
        let a = gaussian_noise(&mut root.fork(0), 200, 200);
        let b = gaussian_noise(&mut root.fork(1), 200, 200);
        let corr = a.dot(&b) / (a.norm() * b.norm());
        // 4 standard errors at n = 40000
        assert!(corr.abs() < 0.02, "corr {corr}");
    }
}
