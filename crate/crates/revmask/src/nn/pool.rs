//! 2x2 max pooling.

use ndarray::Array4;

use super::Batch;

/// Forward pass; records the argmax offset (0..4) per output cell for the
/// backward scatter. Ties go to the first maximum in row-major order.
pub fn maxpool2_forward(x: &Batch) -> (Batch, Array4<u8>) {
    let (n, c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "maxpool2 needs even spatial dims, got {h}x{w}");
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array4::zeros((n, c, oh, ow));
    let mut arg = Array4::zeros((n, c, oh, ow));
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_k = 0u8;
                    for k in 0..4u8 {
                        let (dy, dx) = ((k / 2) as usize, (k % 2) as usize);
                        let v = x[[ni, ci, oy * 2 + dy, ox * 2 + dx]];
                        if v > best {
                            best = v;
                            best_k = k;
                        }
                    }
                    y[[ni, ci, oy, ox]] = best;
                    arg[[ni, ci, oy, ox]] = best_k;
                }
            }
        }
    }
    (y, arg)
}

pub fn maxpool2_backward(arg: &Array4<u8>, grad_y: &Batch) -> Batch {
    let (n, c, oh, ow) = grad_y.dim();
    let mut grad_x = Array4::zeros((n, c, oh * 2, ow * 2));
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let k = arg[[ni, ci, oy, ox]];
                    let (dy, dx) = ((k / 2) as usize, (k % 2) as usize);
                    grad_x[[ni, ci, oy * 2 + dy, ox * 2 + dx]] += grad_y[[ni, ci, oy, ox]];
                }
            }
        }
    }
    grad_x
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn picks_block_maxima() {
        let mut x = Array4::zeros((1, 1, 4, 4));
        for (i, v) in x.iter_mut().enumerate() {
            *v = i as f32;
        }
        let (y, _) = maxpool2_forward(&x);
        assert_eq!(y[[0, 0, 0, 0]], 5.0);
        assert_eq!(y[[0, 0, 0, 1]], 7.0);
        assert_eq!(y[[0, 0, 1, 0]], 13.0);
        assert_eq!(y[[0, 0, 1, 1]], 15.0);
    }

    #[test]
    fn backward_routes_to_argmax_only() {
        let mut x = Array4::zeros((1, 1, 2, 2));
        x[[0, 0, 1, 0]] = 5.0;
        let (_, arg) = maxpool2_forward(&x);
        let mut gy = Array4::zeros((1, 1, 1, 1));
        gy[[0, 0, 0, 0]] = 2.5;
        let gx = maxpool2_backward(&arg, &gy);
        assert_eq!(gx[[0, 0, 1, 0]], 2.5);
        assert_eq!(gx.sum(), 2.5);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use crate::nn::gradcheck::relative_error;
        use crate::rng::rng_from;
        use rand::Rng;
        let mut rng = rng_from(11);
        let x = Array4::from_shape_simple_fn((2, 2, 4, 4), || rng.gen_range(-1.0f32..1.0));
        let probe = Array4::from_shape_simple_fn((2, 2, 2, 2), || rng.gen_range(-1.0f32..1.0));
        let (_, arg) = maxpool2_forward(&x);
        let grad = maxpool2_backward(&arg, &probe);
        let mut f = |x: &Batch| super::super::dot_sum(&maxpool2_forward(x).0, &probe);
        // tiny h keeps perturbations from flipping any argmax
        let err = relative_error(&mut f, &x, &grad, 1e-3);
        assert!(err < 1e-2, "pool grad rel err {err}");
    }
}
