//! Minimal CPU layer zoo with explicit forward/backward passes.
//!
//! Activations are `(N, C, H, W)` f32 arrays. Every layer's backward is
//! verified against central finite differences in its unit tests; the
//! networks built from them are fixed feedforward chains, so no tape is
//! needed.

pub mod act;
pub mod adam;
pub mod conv;
pub mod init;
pub mod linear;
pub mod pad;
pub mod pool;
pub mod upsample;

use ndarray::Array4;

pub type Batch = Array4<f32>;

/// Sum of an elementwise product, accumulated in f64. Used as the scalar
/// probe in gradient tests and for loss reductions.
pub fn dot_sum(a: &Batch, b: &Batch) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[cfg(test)]
pub(crate) mod gradcheck {
    use super::Batch;

    /// Central finite-difference check of `grad` against the scalar map
    /// `f`, element by element. Returns the relative L2 error.
    pub fn relative_error(f: &mut dyn FnMut(&Batch) -> f64, x: &Batch, grad: &Batch, h: f32) -> f64 {
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        let mut xp = x.clone();
        for idx in ndarray::indices(x.dim()) {
            let orig = xp[idx];
            xp[idx] = orig + h;
            let fp = f(&xp);
            xp[idx] = orig - h;
            let fm = f(&xp);
            xp[idx] = orig;
            let fd = (fp - fm) / (2.0 * h as f64);
            let an = grad[idx] as f64;
            num += (fd - an).powi(2);
            den += fd.powi(2).max(an.powi(2));
        }
        (num / den.max(1e-30)).sqrt()
    }
}
