//! Area (box-average) resampling.
//!
//! Each output pixel averages the input region it covers, with fractional
//! pixels weighted by overlap. Accumulation is in f64 so results do not
//! depend on traversal order.

use ndarray::{Array2, ArrayView2};

/// Resize a single plane by exact box averaging.
pub fn area_resize_plane(input: ArrayView2<'_, f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (in_h, in_w) = input.dim();
    assert!(in_h > 0 && in_w > 0 && out_h > 0 && out_w > 0);
    if (in_h, in_w) == (out_h, out_w) {
        return input.to_owned();
    }

    let scale_y = in_h as f64 / out_h as f64;
    let scale_x = in_w as f64 / out_w as f64;

    let mut out = Array2::zeros((out_h, out_w));
    for oy in 0..out_h {
        let y0 = oy as f64 * scale_y;
        let y1 = (oy + 1) as f64 * scale_y;
        let iy0 = y0.floor() as usize;
        let iy1 = (y1.ceil() as usize).min(in_h);
        for ox in 0..out_w {
            let x0 = ox as f64 * scale_x;
            let x1 = (ox + 1) as f64 * scale_x;
            let ix0 = x0.floor() as usize;
            let ix1 = (x1.ceil() as usize).min(in_w);

            let mut acc = 0.0f64;
            let mut area = 0.0f64;
            for iy in iy0..iy1 {
                let wy = overlap(iy as f64, (iy + 1) as f64, y0, y1);
                if wy == 0.0 {
                    continue;
                }
                for ix in ix0..ix1 {
                    let wx = overlap(ix as f64, (ix + 1) as f64, x0, x1);
                    if wx == 0.0 {
                        continue;
                    }
                    acc += input[[iy, ix]] as f64 * wy * wx;
                    area += wy * wx;
                }
            }
            out[[oy, ox]] = (acc / area) as f32;
        }
    }
    out
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn identity_when_sizes_match() {
        let input = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(area_resize_plane(input.view(), 2, 2), input);
    }

    #[test]
    fn integer_downscale_is_block_mean() {
        let input = arr2(&[
            [0.0, 255.0, 0.0, 255.0],
            [255.0, 0.0, 255.0, 0.0],
            [0.0, 255.0, 0.0, 255.0],
            [255.0, 0.0, 255.0, 0.0],
        ]);
        let out = area_resize_plane(input.view(), 2, 2);
        // every 2x2 block of a pixel checkerboard averages to 127.5
        assert!(out.iter().all(|&v| (v - 127.5).abs() < 1e-6));
    }

    #[test]
    fn fractional_downscale_matches_hand_integration() {
        // 3 -> 2 along one axis: output cell 0 covers input [0, 1.5)
        let input = arr2(&[[0.0, 90.0, 30.0]]);
        let out = area_resize_plane(input.view(), 1, 2);
        // cell0 = (0*1 + 90*0.5) / 1.5 = 30, cell1 = (90*0.5 + 30*1) / 1.5 = 50
        assert!((out[[0, 0]] - 30.0).abs() < 1e-5);
        assert!((out[[0, 1]] - 50.0).abs() < 1e-5);
    }

    #[test]
    fn preserves_constant_planes() {
        let input = Array2::from_elem((7, 5), 42.0f32);
        let out = area_resize_plane(input.view(), 3, 4);
        assert!(out.iter().all(|&v| (v - 42.0).abs() < 1e-5));
    }

    use ndarray::Array2;

    #[test]
    fn upscale_preserves_mean() {
        let input = arr2(&[[10.0, 20.0], [30.0, 40.0]]);
        let out = area_resize_plane(input.view(), 5, 5);
        let mean: f64 = out.iter().map(|&v| v as f64).sum::<f64>() / 25.0;
        assert!((mean - 25.0).abs() < 1e-4);
    }
}
