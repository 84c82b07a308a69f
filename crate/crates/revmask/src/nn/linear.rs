//! Dense layer and global average pooling for the critic head.

use ndarray::{Array1, Array2, Array4, Axis};

use super::Batch;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Array2<f32>, // (out, in)
    pub bias: Array1<f32>,
}

pub struct LinearGrads {
    pub input: Array2<f32>,
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Linear {
    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `x` is (N, in) -> (N, out).
    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        x.dot(&self.weight.t()) + &self.bias
    }

    pub fn backward(&self, x: &Array2<f32>, grad_y: &Array2<f32>) -> LinearGrads {
        LinearGrads {
            input: grad_y.dot(&self.weight),
            weight: grad_y.t().dot(x),
            bias: grad_y.sum_axis(Axis(0)),
        }
    }
}

/// (N, C, H, W) -> (N, C) spatial mean.
pub fn global_avg_forward(x: &Batch) -> Array2<f32> {
    let (n, c, h, w) = x.dim();
    let mut y = Array2::zeros((n, c));
    for ni in 0..n {
        for ci in 0..c {
            let mut acc = 0.0f64;
            for v in x.index_axis(Axis(0), ni).index_axis(Axis(0), ci).iter() {
                acc += *v as f64;
            }
            y[[ni, ci]] = (acc / (h * w) as f64) as f32;
        }
    }
    y
}

pub fn global_avg_backward(grad_y: &Array2<f32>, h: usize, w: usize) -> Batch {
    let (n, c) = grad_y.dim();
    let mut grad_x = Array4::zeros((n, c, h, w));
    let scale = 1.0 / (h * w) as f32;
    for ni in 0..n {
        for ci in 0..c {
            let g = grad_y[[ni, ci]] * scale;
            grad_x
                .index_axis_mut(Axis(0), ni)
                .index_axis_mut(Axis(0), ci)
                .fill(g);
        }
    }
    grad_x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    #[test]
    fn linear_matches_hand_computation() {
        let l = Linear {
            weight: ndarray::arr2(&[[1.0, 2.0], [0.5, -1.0]]),
            bias: ndarray::arr1(&[0.1, -0.2]),
        };
        let x = ndarray::arr2(&[[3.0, 4.0]]);
        let y = l.forward(&x);
        assert!((y[[0, 0]] - 11.1).abs() < 1e-6);
        assert!((y[[0, 1]] - (1.5 - 4.0 - 0.2)).abs() < 1e-6);
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = rng_from(51);
        let l = Linear {
            weight: Array2::from_shape_simple_fn((3, 4), || rng.gen_range(-0.5f32..0.5)),
            bias: Array1::from_shape_simple_fn(3, || rng.gen_range(-0.1f32..0.1)),
        };
        let x = Array2::from_shape_simple_fn((2, 4), || rng.gen_range(-1.0f32..1.0));
        let probe = Array2::from_shape_simple_fn((2, 3), || rng.gen_range(-1.0f32..1.0));
        let f = |l: &Linear, x: &Array2<f32>| -> f64 {
            l.forward(x)
                .iter()
                .zip(probe.iter())
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum()
        };
        let grads = l.backward(&x, &probe);
        let h = 1e-3f32;
        let mut xp = x.clone();
        for idx in ndarray::indices(x.dim()) {
            let orig = xp[idx];
            xp[idx] = orig + h;
            let fp = f(&l, &xp);
            xp[idx] = orig - h;
            let fm = f(&l, &xp);
            xp[idx] = orig;
            let fd = (fp - fm) / (2.0 * h as f64);
            assert!((fd - grads.input[idx] as f64).abs() < 1e-3);
        }
        let mut lp = l.clone();
        for idx in ndarray::indices(l.weight.dim()) {
            let orig = lp.weight[idx];
            lp.weight[idx] = orig + h;
            let fp = f(&lp, &x);
            lp.weight[idx] = orig - h;
            let fm = f(&lp, &x);
            lp.weight[idx] = orig;
            let fd = (fp - fm) / (2.0 * h as f64);
            assert!((fd - grads.weight[idx] as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn global_avg_is_spatial_mean() {
        let mut x = Array4::zeros((1, 1, 2, 2));
        x[[0, 0, 0, 0]] = 1.0;
        x[[0, 0, 1, 1]] = 3.0;
        let y = global_avg_forward(&x);
        assert_eq!(y[[0, 0]], 1.0);
        let g = global_avg_backward(&ndarray::arr2(&[[4.0]]), 2, 2);
        assert!(g.iter().all(|&v| v == 1.0));
    }
}
