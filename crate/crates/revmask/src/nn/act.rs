//! Pointwise activations.

use super::Batch;

pub fn leaky_relu_forward(x: &Batch, slope: f32) -> Batch {
    x.mapv(|v| if v > 0.0 { v } else { slope * v })
}

pub fn leaky_relu_backward(x: &Batch, grad_y: &Batch, slope: f32) -> Batch {
    let mut g = grad_y.clone();
    g.zip_mut_with(x, |gv, &xv| {
        if xv <= 0.0 {
            *gv *= slope;
        }
    });
    g
}

pub fn relu_forward(x: &Batch) -> Batch {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(x: &Batch, grad_y: &Batch) -> Batch {
    let mut g = grad_y.clone();
    g.zip_mut_with(x, |gv, &xv| {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    });
    g
}

pub fn tanh_forward(x: &Batch) -> Batch {
    x.mapv(f32::tanh)
}

/// Backward from the forward *output* (uses 1 - y^2).
pub fn tanh_backward(y: &Batch, grad_y: &Batch) -> Batch {
    let mut g = grad_y.clone();
    g.zip_mut_with(y, |gv, &yv| {
        *gv *= 1.0 - yv * yv;
    });
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::relative_error;
    use crate::rng::rng_from;
    use ndarray::Array4;
    use rand::Rng;

    #[test]
    fn leaky_relu_values() {
        let mut x = Array4::zeros((1, 1, 1, 2));
        x[[0, 0, 0, 0]] = 2.0;
        x[[0, 0, 0, 1]] = -2.0;
        let y = leaky_relu_forward(&x, 0.2);
        assert_eq!(y[[0, 0, 0, 0]], 2.0);
        assert_eq!(y[[0, 0, 0, 1]], -0.4);
    }

    #[test]
    fn tanh_bounds_and_zero() {
        let mut x = Array4::zeros((1, 1, 1, 3));
        x[[0, 0, 0, 0]] = 100.0;
        x[[0, 0, 0, 1]] = -100.0;
        let y = tanh_forward(&x);
        assert!(y.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        assert_eq!(y[[0, 0, 0, 2]], 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rng_from(41);
        // keep values away from the leaky-relu kink
        let x = Array4::from_shape_simple_fn((1, 2, 3, 3), || {
            let v: f32 = rng.gen_range(0.1f32..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        });
        let probe = Array4::from_shape_simple_fn((1, 2, 3, 3), || rng.gen_range(-1.0f32..1.0));

        let g = leaky_relu_backward(&x, &probe, 0.2);
        let mut f = |x: &Batch| super::super::dot_sum(&leaky_relu_forward(x, 0.2), &probe);
        assert!(relative_error(&mut f, &x, &g, 1e-3) < 1e-3);

        let y = tanh_forward(&x);
        let g = tanh_backward(&y, &probe);
        let mut f = |x: &Batch| super::super::dot_sum(&tanh_forward(x), &probe);
        assert!(relative_error(&mut f, &x, &g, 1e-3) < 1e-3);

        let g = relu_backward(&x, &probe);
        let mut f = |x: &Batch| super::super::dot_sum(&relu_forward(x), &probe);
        assert!(relative_error(&mut f, &x, &g, 1e-3) < 1e-3);
    }
}
