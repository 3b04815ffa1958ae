//! Parameter initialization.
//!
//! Convolution kernels use He normal draws, fully connected weights use
//! Glorot uniform draws, and biases start at zero. All randomness is drawn
//! in f64 and converted, so the stream consumed from a seeded generator is
//! identical whichever precision the model runs at.

use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::{Real, Tensor};

/// Normal draws with variance `2 / fan_in`.
pub fn he_normal<F: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<F> {
    let sigma = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| F::of_f64(sigma * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree by construction")
}

/// Uniform draws in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<F: Real>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Tensor<F> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| F::of_f64((2.0 * rng.gen::<f64>() - 1.0) * bound))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree by construction")
}

/// All-zero tensor, for biases.
pub fn zero_init<F: Real>(shape: &[usize]) -> Tensor<F> {
    Tensor::zeros(shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn he_variance_matches_two_over_fan_in() {
        // 3x3 conv from 64 to 64 channels: fan_in = 3*3*64 = 576.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let t: Tensor<f64> = he_normal(&[n], 576, &mut rng);
        let mean: f64 = t.data().iter().sum::<f64>() / n as f64;
        let var: f64 = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let expected = 2.0 / 576.0;
        assert!(
            (var - expected).abs() / expected < 0.05,
            "variance {var}, expected {expected}"
        );
    }

    #[test]
    fn glorot_stays_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bound = (6.0f64 / (256.0 + 128.0)).sqrt();
        let t: Tensor<f64> = glorot_uniform(&[128, 256], 256, 128, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn same_seed_same_values() {
        let a: Tensor<f64> = he_normal(&[64], 9, &mut ChaCha8Rng::seed_from_u64(7));
        let b: Tensor<f64> = he_normal(&[64], 9, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn f32_and_f64_consume_identical_streams() {
        let a: Tensor<f32> = he_normal(&[32], 9, &mut ChaCha8Rng::seed_from_u64(9));
        let b: Tensor<f64> = he_normal(&[32], 9, &mut ChaCha8Rng::seed_from_u64(9));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*x, *y as f32);
        }
    }
}
