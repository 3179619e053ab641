//! Seeded, platform-independent random numbers.
//!
//! The generator is SplitMix64: a Weyl sequence with increment
//! `0x9E3779B97F4A7C15` fed through a 64-bit finalizer (shift-xor and two
//! odd-constant multiplies). Every draw, and therefore every experiment in
//! this workspace, is a pure function of the seed.

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::tensor::Tensor;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prng {
    state: u64,
}

impl Prng {
    pub const ALGORITHM: &'static str = "splitmix64";

    pub fn new(seed: u64) -> Self {
        Prng { state: seed }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// An independent stream derived from this one.
    pub fn split(&mut self) -> Prng {
        Prng::new(mix64(self.next_u64() ^ 0x5851_F42D_4C95_7F2D))
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[0, 1)` with 24 bits of resolution.
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform integer in `[0, bound)`; `bound` must be positive.
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "Prng::below: bound must be positive");
        // Lemire's multiply-shift with rejection keeps the draw unbiased.
        let bound = bound as u64;
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = (self.next_u64() as u128) * (bound as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    /// Standard normal draw via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Tensor of uniform draws on `[lo, hi)`.
    pub fn uniform<F: Float>(&mut self, dims: &[usize], lo: f64, hi: f64) -> Result<Tensor<F>> {
        if !(lo < hi) {
            return Err(TensorError::Range { lo, hi });
        }
        let mut t = Tensor::<F>::zeros(dims)?;
        let lo_f = F::from_f64(lo);
        let hi_f = F::from_f64(hi);
        for v in t.data_mut() {
            *v = loop {
                let x = F::from_f64(lo + (hi - lo) * self.next_f64());
                // Rounding to the element type can land on `hi`.
                if x < hi_f && x >= lo_f {
                    break x;
                }
            };
        }
        Ok(t)
    }

    /// Tensor of normal draws with the given mean and standard deviation.
    pub fn normal_tensor<F: Float>(&mut self, dims: &[usize], mean: f64, std: f64) -> Result<Tensor<F>> {
        let mut t = Tensor::<F>::zeros(dims)?;
        for v in t.data_mut() {
            *v = F::from_f64(mean + std * self.normal());
        }
        Ok(t)
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_reference_splitmix64_sequence() {
        // Reference values for seed 1234567 from the published C implementation.
        let mut p = Prng::new(1234567);
        assert_eq!(p.next_u64(), 6457827717110365317);
        assert_eq!(p.next_u64(), 3203168211198807973);
        assert_eq!(p.next_u64(), 9817491932198370423);
    }

    #[test]
    fn uniform_respects_bounds() {
        let mut p = Prng::new(7);
        let t: Tensor<f32> = p.uniform(&[1000], -1.0, 1.0).unwrap();
        let min = t.data().iter().cloned().fold(f32::INFINITY, f32::min);
        let max = t.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert!(min >= -1.0);
        assert!(max < 1.0);
    }

    #[test]
    fn same_seed_same_tensor() {
        let a: Tensor<f32> = Prng::new(99).uniform(&[4, 100], -1.0, 1.0).unwrap();
        let b: Tensor<f32> = Prng::new(99).uniform(&[4, 100], -1.0, 1.0).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn uniform_mean_is_centered() {
        let t: Tensor<f64> = Prng::new(2024).uniform(&[100_000], -1.0, 1.0).unwrap();
        let mean = t.sum() / 100_000.0;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn empty_range_is_rejected() {
        assert!(matches!(
            Prng::new(1).uniform::<f32>(&[2], 1.0, 1.0),
            Err(TensorError::Range { .. })
        ));
    }

    #[test]
    fn below_stays_in_range() {
        let mut p = Prng::new(3);
        let mut seen = [0usize; 5];
        for _ in 0..5000 {
            seen[p.below(5)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 800), "{seen:?}");
    }

    #[test]
    fn split_streams_differ() {
        let mut p = Prng::new(5);
        let mut a = p.split();
        let mut b = p.split();
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
