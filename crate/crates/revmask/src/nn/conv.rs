//! 2D convolution via im2col and sgemm.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView3, Axis};
use rayon::prelude::*;

use super::Batch;

/// Zero-padding amounts (top, bottom, left, right).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn symmetric(p: usize) -> Self {
        Padding { top: p, bottom: p, left: p, right: p }
    }

    pub fn none() -> Self {
        Padding::symmetric(0)
    }
}

/// Convolution layer. Weight layout `(out_c, in_c, kh, kw)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Array4<f32>,
    pub bias: Array1<f32>,
    pub stride: usize,
    pub dilation: usize,
    pub pad: Padding,
}

pub struct ConvGrads {
    pub input: Batch,
    pub weight: Array4<f32>,
    pub bias: Array1<f32>,
}

impl Conv2d {
    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn kernel(&self) -> (usize, usize) {
        let d = self.weight.dim();
        (d.2, d.3)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn out_spatial(&self, in_h: usize, in_w: usize) -> (usize, usize) {
        let (kh, kw) = self.kernel();
        let eff_h = self.dilation * (kh - 1) + 1;
        let eff_w = self.dilation * (kw - 1) + 1;
        let h = (in_h + self.pad.top + self.pad.bottom - eff_h) / self.stride + 1;
        let w = (in_w + self.pad.left + self.pad.right - eff_w) / self.stride + 1;
        (h, w)
    }

    pub fn forward(&self, x: &Batch) -> Batch {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels(), "conv input channels");
        let (oh, ow) = self.out_spatial(h, w);
        let out_c = self.out_channels();
        let w_mat = self.weight_matrix();

        let samples: Vec<Array3<f32>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let cols = self.im2col(x.index_axis(Axis(0), i));
                let mut y = w_mat.dot(&cols); // (out_c, oh*ow)
                for (mut row, &b) in y.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
                    row.mapv_inplace(|v| v + b);
                }
                y.into_shape_with_order((out_c, oh, ow)).unwrap()
            })
            .collect();

        stack_samples(&samples)
    }

    /// Gradients w.r.t. input, weight, and bias for upstream `grad_y`.
    pub fn backward(&self, x: &Batch, grad_y: &Batch) -> ConvGrads {
        let (n, _, h, w) = x.dim();
        let (oh, ow) = self.out_spatial(h, w);
        let out_c = self.out_channels();
        assert_eq!(grad_y.dim(), (n, out_c, oh, ow), "conv grad shape");
        let w_mat = self.weight_matrix();

        let per_sample: Vec<(Array3<f32>, Array2<f32>, Array1<f32>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let cols = self.im2col(x.index_axis(Axis(0), i));
                let g = grad_y
                    .index_axis(Axis(0), i)
                    .to_owned()
                    .into_shape_with_order((out_c, oh * ow))
                    .unwrap();
                let grad_w = g.dot(&cols.t()); // (out_c, ckk)
                let grad_b = g.sum_axis(Axis(1));
                let grad_cols = w_mat.t().dot(&g); // (ckk, oh*ow)
                let grad_x = self.col2im(&grad_cols, h, w);
                (grad_x, grad_w, grad_b)
            })
            .collect();

        let (kh, kw) = self.kernel();
        let in_c = self.in_channels();
        let mut grad_weight = Array2::<f32>::zeros((out_c, in_c * kh * kw));
        let mut grad_bias = Array1::<f32>::zeros(out_c);
        // fixed accumulation order keeps training bitwise reproducible
        for (_, gw, gb) in &per_sample {
            grad_weight += gw;
            grad_bias += gb;
        }
        let grad_input = stack_samples(&per_sample.iter().map(|(gx, _, _)| gx.clone()).collect::<Vec<_>>());

        ConvGrads {
            input: grad_input,
            weight: grad_weight.into_shape_with_order((out_c, in_c, kh, kw)).unwrap(),
            bias: grad_bias,
        }
    }

    /// Input gradient only — for frozen layers whose weights never update.
    pub fn backward_input_only(&self, x: &Batch, grad_y: &Batch) -> Batch {
        let (n, _, h, w) = x.dim();
        let (oh, ow) = self.out_spatial(h, w);
        let out_c = self.out_channels();
        let w_mat = self.weight_matrix();
        let samples: Vec<Array3<f32>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let g = grad_y
                    .index_axis(Axis(0), i)
                    .to_owned()
                    .into_shape_with_order((out_c, oh * ow))
                    .unwrap();
                let grad_cols = w_mat.t().dot(&g);
                self.col2im(&grad_cols, h, w)
            })
            .collect();
        stack_samples(&samples)
    }

    fn weight_matrix(&self) -> Array2<f32> {
        let (oc, ic, kh, kw) = self.weight.dim();
        self.weight.clone().into_shape_with_order((oc, ic * kh * kw)).unwrap()
    }

    /// Valid output-x range [lo, hi) for a kernel column, given padding.
    fn ox_bounds(&self, kx: usize, w: usize, ow: usize) -> (usize, usize) {
        let off = (kx * self.dilation) as isize - self.pad.left as isize;
        // need 0 <= ox*s + off <= w-1
        let lo = if off >= 0 {
            0
        } else {
            ((-off) as usize).div_ceil(self.stride)
        };
        let hi = if off > w as isize - 1 {
            0
        } else {
            (((w as isize - 1 - off) as usize) / self.stride + 1).min(ow)
        };
        (lo.min(hi), hi)
    }

    fn im2col(&self, x: ArrayView3<'_, f32>) -> Array2<f32> {
        let (c, h, w) = x.dim();
        let (kh, kw) = self.kernel();
        let (oh, ow) = self.out_spatial(h, w);
        let d = self.dilation;
        let s = self.stride;
        let pt = self.pad.top as isize;
        let pl = self.pad.left as isize;

        let mut cols = Array2::<f32>::zeros((c * kh * kw, oh * ow));
        let cols_slice = cols.as_slice_mut().unwrap();
        for ci in 0..c {
            let plane = x.index_axis(Axis(0), ci);
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (ci * kh + ky) * kw + kx;
                    let out_row = &mut cols_slice[row * oh * ow..(row + 1) * oh * ow];
                    let (ox_lo, ox_hi) = self.ox_bounds(kx, w, ow);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * s) as isize + (ky * d) as isize - pt;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = plane.row(iy as usize);
                        let src = src_row.as_slice().expect("contiguous plane row");
                        let dst = &mut out_row[oy * ow + ox_lo..oy * ow + ox_hi];
                        let base = (ox_lo * s) as isize + (kx * d) as isize - pl;
                        if s == 1 {
                            dst.copy_from_slice(&src[base as usize..base as usize + (ox_hi - ox_lo)]);
                        } else {
                            for (k, v) in dst.iter_mut().enumerate() {
                                *v = src[base as usize + k * s];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f32>, h: usize, w: usize) -> Array3<f32> {
        let c = self.in_channels();
        let (kh, kw) = self.kernel();
        let (oh, ow) = self.out_spatial(h, w);
        let d = self.dilation;
        let s = self.stride;
        let pt = self.pad.top as isize;
        let pl = self.pad.left as isize;

        let mut x = Array3::<f32>::zeros((c, h, w));
        let x_slice = x.as_slice_mut().unwrap();
        let cols_slice = cols.as_slice().expect("contiguous cols");
        for ci in 0..c {
            let plane = &mut x_slice[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (ci * kh + ky) * kw + kx;
                    let in_row = &cols_slice[row * oh * ow..(row + 1) * oh * ow];
                    let (ox_lo, ox_hi) = self.ox_bounds(kx, w, ow);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * s) as isize + (ky * d) as isize - pt;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &in_row[oy * ow + ox_lo..oy * ow + ox_hi];
                        let base = ((ox_lo * s) as isize + (kx * d) as isize - pl) as usize
                            + iy as usize * w;
                        if s == 1 {
                            let dst = &mut plane[base..base + src.len()];
                            for (d0, s0) in dst.iter_mut().zip(src.iter()) {
                                *d0 += s0;
                            }
                        } else {
                            for (k, s0) in src.iter().enumerate() {
                                plane[base + k * s] += s0;
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

pub(crate) fn stack_samples(samples: &[Array3<f32>]) -> Batch {
    let views: Vec<_> = samples.iter().map(|a| a.view()).collect();
    ndarray::stack(Axis(0), &views).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::relative_error;
    use crate::rng::rng_from;
    use rand::Rng;

    fn random_batch(shape: (usize, usize, usize, usize), seed: u64) -> Batch {
        let mut rng = rng_from(seed);
        Array4::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0))
    }

    fn random_conv(out_c: usize, in_c: usize, k: usize, stride: usize, dilation: usize, pad: Padding, seed: u64) -> Conv2d {
        let mut rng = rng_from(seed);
        Conv2d {
            weight: Array4::from_shape_simple_fn((out_c, in_c, k, k), || rng.gen_range(-0.5..0.5)),
            bias: Array1::from_shape_simple_fn(out_c, || rng.gen_range(-0.1..0.1)),
            stride,
            dilation,
            pad,
        }
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        // 1x1 kernel with weight 1 and zero bias is the identity
        let conv = Conv2d {
            weight: Array4::from_elem((1, 1, 1, 1), 1.0),
            bias: Array1::zeros(1),
            stride: 1,
            dilation: 1,
            pad: Padding::none(),
        };
        let x = random_batch((2, 1, 5, 5), 0);
        assert_eq!(conv.forward(&x), x);
    }

    #[test]
    fn brute_force_forward_oracle() {
        // direct nested-loop convolution, no im2col
        let conv = random_conv(3, 2, 3, 1, 2, Padding::symmetric(2), 1);
        let x = random_batch((2, 2, 8, 8), 2);
        let y = conv.forward(&x);
        let (oh, ow) = conv.out_spatial(8, 8);
        assert_eq!(y.dim(), (2, 3, oh, ow));
        for n in 0..2 {
            for oc in 0..3 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = conv.bias[oc] as f64;
                        for ic in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = oy as isize + (ky * 2) as isize - 2;
                                    let ix = ox as isize + (kx * 2) as isize - 2;
                                    if iy >= 0 && iy < 8 && ix >= 0 && ix < 8 {
                                        acc += conv.weight[[oc, ic, ky, kx]] as f64
                                            * x[[n, ic, iy as usize, ix as usize]] as f64;
                                    }
                                }
                            }
                        }
                        let got = y[[n, oc, oy, ox]] as f64;
                        assert!((got - acc).abs() < 1e-4, "mismatch at {n},{oc},{oy},{ox}");
                    }
                }
            }
        }
    }

    #[test]
    fn strided_conv_halves_spatial_dims() {
        let conv = random_conv(4, 3, 4, 2, 1, Padding::symmetric(1), 3);
        let x = random_batch((1, 3, 16, 16), 4);
        assert_eq!(conv.forward(&x).dim(), (1, 4, 8, 8));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let conv = random_conv(2, 2, 3, 1, 2, Padding::symmetric(2), 5);
        let x = random_batch((1, 2, 6, 6), 6);
        let probe = random_batch((1, 2, 6, 6), 7);
        let y = conv.forward(&x);
        let grads = conv.backward(&x, &probe);
        let mut f = |x: &Batch| super::super::dot_sum(&conv.forward(x), &probe);
        assert_eq!(y.dim(), probe.dim());
        let err = relative_error(&mut f, &x, &grads.input, 1e-2);
        assert!(err < 1e-3, "input grad rel err {err}");
    }

    #[test]
    fn weight_and_bias_gradients_match_finite_differences() {
        let conv = random_conv(2, 1, 3, 2, 1, Padding::symmetric(1), 8);
        let x = random_batch((2, 1, 6, 6), 9);
        let probe = {
            let y = conv.forward(&x);
            random_batch(y.dim(), 10)
        };
        let grads = conv.backward(&x, &probe);

        // weights
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        let h = 1e-2f32;
        let mut c = conv.clone();
        for idx in ndarray::indices(conv.weight.dim()) {
            let orig = c.weight[idx];
            c.weight[idx] = orig + h;
            let fp = super::super::dot_sum(&c.forward(&x), &probe);
            c.weight[idx] = orig - h;
            let fm = super::super::dot_sum(&c.forward(&x), &probe);
            c.weight[idx] = orig;
            let fd = (fp - fm) / (2.0 * h as f64);
            let an = grads.weight[idx] as f64;
            num += (fd - an).powi(2);
            den += fd.powi(2).max(an.powi(2));
        }
        assert!((num / den).sqrt() < 1e-3, "weight grad rel err {}", (num / den).sqrt());

        // bias
        for oc in 0..2 {
            let orig = c.bias[oc];
            c.bias[oc] = orig + h;
            let fp = super::super::dot_sum(&c.forward(&x), &probe);
            c.bias[oc] = orig - h;
            let fm = super::super::dot_sum(&c.forward(&x), &probe);
            c.bias[oc] = orig;
            let fd = (fp - fm) / (2.0 * h as f64);
            assert!((fd - grads.bias[oc] as f64).abs() < 1e-3 * fd.abs().max(1.0));
        }
    }
}
