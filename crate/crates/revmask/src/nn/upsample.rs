//! Bilinear x2 upsampling (half-pixel centers, clamped edges).

use ndarray::Array4;

use super::Batch;

#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w1: f32,
}

fn taps(out_len: usize, in_len: usize) -> Vec<Tap> {
    (0..out_len)
        .map(|o| {
            let src = (o as f32 + 0.5) / 2.0 - 0.5;
            let clamped = src.max(0.0).min((in_len - 1) as f32);
            let i0 = clamped.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            Tap { i0, i1, w1: clamped - i0 as f32 }
        })
        .collect()
}

pub fn bilinear_up2_forward(x: &Batch) -> Batch {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h * 2, w * 2);
    let ty = taps(oh, h);
    let tx = taps(ow, w);
    let mut y = Array4::zeros((n, c, oh, ow));
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                let Tap { i0: y0, i1: y1, w1: fy } = ty[oy];
                for ox in 0..ow {
                    let Tap { i0: x0, i1: x1, w1: fx } = tx[ox];
                    let a = x[[ni, ci, y0, x0]];
                    let b = x[[ni, ci, y0, x1]];
                    let c2 = x[[ni, ci, y1, x0]];
                    let d = x[[ni, ci, y1, x1]];
                    let top = a + fx * (b - a);
                    let bot = c2 + fx * (d - c2);
                    y[[ni, ci, oy, ox]] = top + fy * (bot - top);
                }
            }
        }
    }
    y
}

pub fn bilinear_up2_backward(grad_y: &Batch) -> Batch {
    let (n, c, oh, ow) = grad_y.dim();
    let (h, w) = (oh / 2, ow / 2);
    let ty = taps(oh, h);
    let tx = taps(ow, w);
    let mut grad_x = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                let Tap { i0: y0, i1: y1, w1: fy } = ty[oy];
                for ox in 0..ow {
                    let Tap { i0: x0, i1: x1, w1: fx } = tx[ox];
                    let g = grad_y[[ni, ci, oy, ox]];
                    grad_x[[ni, ci, y0, x0]] += g * (1.0 - fy) * (1.0 - fx);
                    grad_x[[ni, ci, y0, x1]] += g * (1.0 - fy) * fx;
                    grad_x[[ni, ci, y1, x0]] += g * fy * (1.0 - fx);
                    grad_x[[ni, ci, y1, x1]] += g * fy * fx;
                }
            }
        }
    }
    grad_x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::relative_error;
    use crate::rng::rng_from;
    use rand::Rng;

    #[test]
    fn doubles_spatial_dims_and_preserves_constants() {
        let x = Array4::from_elem((1, 2, 3, 5), 0.7f32);
        let y = bilinear_up2_forward(&x);
        assert_eq!(y.dim(), (1, 2, 6, 10));
        assert!(y.iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn interpolates_linear_ramps_exactly_in_the_interior() {
        // a ramp along x stays a ramp after x2 upsampling (half-pixel centers)
        let mut x = Array4::zeros((1, 1, 1, 4));
        for i in 0..4 {
            x[[0, 0, 0, i]] = i as f32;
        }
        let y = bilinear_up2_forward(&x);
        // interior samples fall at 0.25 offsets of the source grid
        assert!((y[[0, 0, 0, 2]] - 0.75).abs() < 1e-6);
        assert!((y[[0, 0, 0, 3]] - 1.25).abs() < 1e-6);
        assert!((y[[0, 0, 0, 4]] - 1.75).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng_from(31);
        let x = Array4::from_shape_simple_fn((2, 2, 3, 3), || rng.gen_range(-1.0f32..1.0));
        let probe = Array4::from_shape_simple_fn((2, 2, 6, 6), || rng.gen_range(-1.0f32..1.0));
        let grad = bilinear_up2_backward(&probe);
        let mut f = |x: &Batch| super::super::dot_sum(&bilinear_up2_forward(x), &probe);
        let err = relative_error(&mut f, &x, &grad, 1e-2);
        assert!(err < 1e-3, "upsample grad rel err {err}");
    }
}
