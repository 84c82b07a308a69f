//! Fan-in-scaled uniform initialization.
//!
//! Weights are drawn from U(-b, b) with b = sqrt(1 / fan_in); biases start
//! at zero. Fill order is row-major from a seeded stream, so builds are
//! reproducible element for element.

use ndarray::{Array1, Array2, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn conv_weight(rng: &mut ChaCha8Rng, out_c: usize, in_c: usize, kh: usize, kw: usize) -> Array4<f32> {
    let fan_in = in_c * kh * kw;
    let bound = (1.0 / fan_in as f64).sqrt() as f32;
    Array4::from_shape_simple_fn((out_c, in_c, kh, kw), || rng.gen_range(-bound..bound))
}

pub fn linear_weight(rng: &mut ChaCha8Rng, out_f: usize, in_f: usize) -> Array2<f32> {
    let bound = (1.0 / in_f as f64).sqrt() as f32;
    Array2::from_shape_simple_fn((out_f, in_f), || rng.gen_range(-bound..bound))
}

pub fn zero_bias(len: usize) -> Array1<f32> {
    Array1::zeros(len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn deterministic_per_seed() {
        let a = conv_weight(&mut rng_from(5), 4, 3, 5, 5);
        let b = conv_weight(&mut rng_from(5), 4, 3, 5, 5);
        assert_eq!(a, b);
    }

    #[test]
    fn respects_fan_in_bound() {
        let w = conv_weight(&mut rng_from(6), 8, 4, 3, 3);
        let bound = (1.0f64 / 36.0).sqrt() as f32;
        assert!(w.iter().all(|&v| v.abs() < bound));
        assert!(w.iter().any(|&v| v.abs() > bound * 0.5));
    }
}
