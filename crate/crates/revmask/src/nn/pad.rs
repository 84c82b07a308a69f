//! Reflection padding (border not repeated).

use ndarray::Array4;

use super::Batch;
use super::conv::Padding;

fn reflect(idx: isize, len: usize) -> usize {
    // maps -1 -> 1, -2 -> 2, len -> len-2, len+1 -> len-3
    let len = len as isize;
    let mut i = idx;
    if i < 0 {
        i = -i;
    }
    if i >= len {
        i = 2 * (len - 1) - i;
    }
    debug_assert!(i >= 0 && i < len);
    i as usize
}

pub fn reflection_pad_forward(x: &Batch, pad: Padding) -> Batch {
    let (n, c, h, w) = x.dim();
    assert!(pad.top < h && pad.bottom < h && pad.left < w && pad.right < w, "reflection pad larger than input");
    let (oh, ow) = (h + pad.top + pad.bottom, w + pad.left + pad.right);
    let mut y = Array4::zeros((n, c, oh, ow));
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                let iy = reflect(oy as isize - pad.top as isize, h);
                for ox in 0..ow {
                    let ix = reflect(ox as isize - pad.left as isize, w);
                    y[[ni, ci, oy, ox]] = x[[ni, ci, iy, ix]];
                }
            }
        }
    }
    y
}

pub fn reflection_pad_backward(grad_y: &Batch, pad: Padding, in_h: usize, in_w: usize) -> Batch {
    let (n, c, oh, ow) = grad_y.dim();
    let mut grad_x = Array4::zeros((n, c, in_h, in_w));
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                let iy = reflect(oy as isize - pad.top as isize, in_h);
                for ox in 0..ow {
                    let ix = reflect(ox as isize - pad.left as isize, in_w);
                    grad_x[[ni, ci, iy, ix]] += grad_y[[ni, ci, oy, ox]];
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
    fn reflects_without_repeating_border() {
        let mut x = Array4::zeros((1, 1, 1, 3));
        x[[0, 0, 0, 0]] = 1.0;
        x[[0, 0, 0, 1]] = 2.0;
        x[[0, 0, 0, 2]] = 3.0;
        let pad = Padding { top: 0, bottom: 0, left: 2, right: 1 };
        let y = reflection_pad_forward(&x, pad);
        let row: Vec<f32> = y.iter().copied().collect();
        assert_eq!(row, vec![3.0, 2.0, 1.0, 2.0, 3.0, 2.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng_from(21);
        let x = Array4::from_shape_simple_fn((1, 2, 4, 4), || rng.gen_range(-1.0f32..1.0));
        let pad = Padding { top: 2, bottom: 1, left: 2, right: 1 };
        let y = reflection_pad_forward(&x, pad);
        let probe = Array4::from_shape_simple_fn(y.dim(), || rng.gen_range(-1.0f32..1.0));
        let grad = reflection_pad_backward(&probe, pad, 4, 4);
        let mut f = |x: &Batch| super::super::dot_sum(&reflection_pad_forward(x, pad), &probe);
        let err = relative_error(&mut f, &x, &grad, 1e-2);
        assert!(err < 1e-3, "pad grad rel err {err}");
    }
}
