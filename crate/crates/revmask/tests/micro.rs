use std::time::Instant;
use ndarray::{Array1, Array4, Array2};
use rand::Rng;
use revmask::nn::conv::{Conv2d, Padding};

#[test]
fn conv_timings() {
    let mut rng = revmask::rng::rng_from(0);
    let conv = Conv2d {
        weight: Array4::from_shape_simple_fn((32, 32, 5, 5), || rng.gen_range(-0.1f32..0.1)),
        bias: Array1::zeros(32),
        stride: 1,
        dilation: 2,
        pad: Padding::symmetric(4),
    };
    let x = Array4::from_shape_simple_fn((4, 32, 64, 64), || rng.gen_range(-1.0f32..1.0));
    // warmup
    let y = conv.forward(&x);
    let t = Instant::now();
    for _ in 0..5 { let _ = conv.forward(&x); }
    let fwd = t.elapsed().as_secs_f64() / 5.0;
    let t = Instant::now();
    for _ in 0..5 { let _ = conv.backward(&x, &y); }
    let bwd = t.elapsed().as_secs_f64() / 5.0;
    // raw gemm comparison: (32,800)x(800,4096)
    let a = Array2::from_shape_simple_fn((32, 800), || 0.1f32);
    let b = Array2::from_shape_simple_fn((800, 4096), || 0.1f32);
    let t = Instant::now();
    for _ in 0..5 { let _ = a.dot(&b); }
    let gemm = t.elapsed().as_secs_f64() / 5.0;
    let flop_fwd = 2.0 * 4.0 * 800.0 * 4096.0 * 32.0;
    panic!("fwd {fwd:.4}s ({:.1} GFLOP/s)  bwd {bwd:.4}s  raw gemm {gemm:.4}s ({:.1} GFLOP/s/core-pair)",
        flop_fwd / fwd / 1e9, 2.0*800.0*4096.0*32.0 / gemm / 1e9);
}
