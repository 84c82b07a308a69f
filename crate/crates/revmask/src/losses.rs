//! Feature-space losses and the Wasserstein objective.
//!
//! The perceptual term compares extractor features of the ground truth and
//! the raw prediction over the whole image. The reverse-mask term applies
//! the reversed mask to both images in pixel space first, so the feature
//! comparison sees hole content only, then uses the same squared-difference
//! form. Both normalize by the total feature element count of the batch,
//! keeping the scale independent of batch size.

use ndarray::Axis;
#[cfg(test)]
use ndarray::Array4;

use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::image::Image;
use crate::mask::BinaryMask;
use crate::model::{images_to_batch, masks_to_batch};
use crate::nn::Batch;

/// Mixing weight for the combined generator loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    lambda: f64,
}

impl LossWeights {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) || !lambda.is_finite() {
            return Err(Error::InvalidSpec(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        Ok(LossWeights { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Combined loss with its components, kept for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLossParts {
    pub total: f64,
    pub perceptual: f64,
    pub reverse_mask: f64,
}

fn feature_mse(a: &Batch, b: &Batch) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    let kappa = a.len() as f64;
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let d = (x - y) as f64;
        acc += d * d;
    }
    acc / kappa
}

/// d(feature_mse)/d(b), i.e. gradient w.r.t. the second (prediction) side.
fn feature_mse_grad(a: &Batch, b: &Batch) -> Batch {
    let kappa = a.len() as f32;
    let mut g = b.clone();
    g.zip_mut_with(a, |bv, &av| {
        *bv = 2.0 * (*bv - av) / kappa;
    });
    g
}

/// Reverse-masked copy: visible pixels zeroed, holes kept.
fn mask_holes_only(x: &Batch, masks: &Batch) -> Batch {
    let (n, c, h, w) = x.dim();
    debug_assert_eq!(masks.dim(), (n, 1, h, w));
    let mut out = x.clone();
    for ni in 0..n {
        let m = masks.index_axis(Axis(0), ni);
        let m = m.index_axis(Axis(0), 0);
        for ci in 0..c {
            let mut plane = out.index_axis_mut(Axis(0), ni);
            let mut plane = plane.index_axis_mut(Axis(0), ci);
            plane.zip_mut_with(&m, |v, &mv| {
                if mv != 0.0 {
                    *v = 0.0;
                }
            });
        }
    }
    out
}

fn check_pair(gt: &Batch, pred: &Batch) -> Result<()> {
    if gt.dim() != pred.dim() {
        return Err(Error::shape("loss inputs", format!("{:?}", gt.dim()), format!("{:?}", pred.dim())));
    }
    Ok(())
}

/// Whole-image feature loss over a model-range batch pair.
pub fn perceptual_loss_batch(fx: &FeatureExtractor, gt: &Batch, pred: &Batch) -> Result<f64> {
    check_pair(gt, pred)?;
    let fa = fx.forward(gt)?;
    let fb = fx.forward(pred)?;
    Ok(feature_mse(&fa, &fb))
}

/// Loss value plus gradient w.r.t. `pred`.
pub fn perceptual_loss_grad_batch(fx: &FeatureExtractor, gt: &Batch, pred: &Batch) -> Result<(f64, Batch)> {
    check_pair(gt, pred)?;
    let fa = fx.forward(gt)?;
    let cache = fx.forward_with_cache(pred)?;
    let loss = feature_mse(&fa, cache.features());
    let gf = feature_mse_grad(&fa, cache.features());
    Ok((loss, fx.backward_input(&cache, &gf)))
}

/// Hole-region feature loss: both sides reverse-masked in pixel space
/// before extraction.
pub fn reverse_mask_loss_batch(fx: &FeatureExtractor, gt: &Batch, pred: &Batch, masks: &Batch) -> Result<f64> {
    check_pair(gt, pred)?;
    let gt_holes = mask_holes_only(gt, masks);
    let pred_holes = mask_holes_only(pred, masks);
    let fa = fx.forward(&gt_holes)?;
    let fb = fx.forward(&pred_holes)?;
    Ok(feature_mse(&fa, &fb))
}

pub fn reverse_mask_loss_grad_batch(
    fx: &FeatureExtractor,
    gt: &Batch,
    pred: &Batch,
    masks: &Batch,
) -> Result<(f64, Batch)> {
    check_pair(gt, pred)?;
    let gt_holes = mask_holes_only(gt, masks);
    let pred_holes = mask_holes_only(pred, masks);
    let fa = fx.forward(&gt_holes)?;
    let cache = fx.forward_with_cache(&pred_holes)?;
    let loss = feature_mse(&fa, cache.features());
    let gf = feature_mse_grad(&fa, cache.features());
    let g_masked = fx.backward_input(&cache, &gf);
    // chain through pred ⊙ M_r
    let (n, c, h, w) = pred.dim();
    let mut g = g_masked;
    for ni in 0..n {
        let m = masks.index_axis(Axis(0), ni);
        let m = m.index_axis(Axis(0), 0);
        for ci in 0..c {
            let mut plane = g.index_axis_mut(Axis(0), ni);
            let mut plane = plane.index_axis_mut(Axis(0), ci);
            plane.zip_mut_with(&m, |v, &mv| {
                if mv != 0.0 {
                    *v = 0.0;
                }
            });
        }
    }
    debug_assert_eq!(g.dim(), (n, c, h, w));
    Ok((loss, g))
}

/// Combined generator loss `(1-λ)·L_p + λ·L_rm` with components.
pub fn generator_loss_batch(
    fx: &FeatureExtractor,
    gt: &Batch,
    pred: &Batch,
    masks: &Batch,
    w: LossWeights,
) -> Result<GeneratorLossParts> {
    let perceptual = perceptual_loss_batch(fx, gt, pred)?;
    let reverse_mask = reverse_mask_loss_batch(fx, gt, pred, masks)?;
    let lambda = w.lambda();
    Ok(GeneratorLossParts {
        total: (1.0 - lambda) * perceptual + lambda * reverse_mask,
        perceptual,
        reverse_mask,
    })
}

pub fn generator_loss_grad_batch(
    fx: &FeatureExtractor,
    gt: &Batch,
    pred: &Batch,
    masks: &Batch,
    w: LossWeights,
) -> Result<(GeneratorLossParts, Batch)> {
    let (perceptual, gp) = perceptual_loss_grad_batch(fx, gt, pred)?;
    let (reverse_mask, gr) = reverse_mask_loss_grad_batch(fx, gt, pred, masks)?;
    let lambda = w.lambda();
    let mut grad = gp;
    grad.zip_mut_with(&gr, |a, &b| {
        *a = ((1.0 - lambda) as f32) * *a + (lambda as f32) * b;
    });
    Ok((
        GeneratorLossParts {
            total: (1.0 - lambda) * perceptual + lambda * reverse_mask,
            perceptual,
            reverse_mask,
        },
        grad,
    ))
}

/// Wasserstein objective: mean critic score on real minus mean on fake.
/// The critic ascends this; the generator descends the negated fake term.
pub fn wasserstein_loss(critic_real: &[f32], critic_fake: &[f32]) -> Result<f64> {
    if critic_real.is_empty() || critic_fake.is_empty() {
        return Err(Error::InvalidSpec("wasserstein loss over an empty batch".into()));
    }
    let mr: f64 = critic_real.iter().map(|&v| v as f64).sum::<f64>() / critic_real.len() as f64;
    let mf: f64 = critic_fake.iter().map(|&v| v as f64).sum::<f64>() / critic_fake.len() as f64;
    Ok(mr - mf)
}

// ---------------------------------------------------------------------------
// Single-image spec-level operations
// ---------------------------------------------------------------------------

fn pair_to_batches(gt: &Image, pred: &Image) -> Result<(Batch, Batch)> {
    if gt.height() != pred.height() || gt.width() != pred.width() {
        return Err(Error::shape(
            "loss images",
            format!("{}x{}", gt.height(), gt.width()),
            format!("{}x{}", pred.height(), pred.width()),
        ));
    }
    let a = images_to_batch(std::slice::from_ref(&gt.to_model()))?;
    let b = images_to_batch(std::slice::from_ref(&pred.to_model()))?;
    Ok((a, b))
}

pub fn perceptual_loss(fx: &FeatureExtractor, gt: &Image, pred: &Image) -> Result<f64> {
    let (a, b) = pair_to_batches(gt, pred)?;
    perceptual_loss_batch(fx, &a, &b)
}

pub fn reverse_mask_loss(fx: &FeatureExtractor, gt: &Image, pred: &Image, mask: &BinaryMask) -> Result<f64> {
    let (a, b) = pair_to_batches(gt, pred)?;
    let m = masks_to_batch(std::slice::from_ref(mask));
    reverse_mask_loss_batch(fx, &a, &b, &m)
}

pub fn generator_loss(
    fx: &FeatureExtractor,
    gt: &Image,
    pred: &Image,
    mask: &BinaryMask,
    w: LossWeights,
) -> Result<GeneratorLossParts> {
    let (a, b) = pair_to_batches(gt, pred)?;
    let m = masks_to_batch(std::slice::from_ref(mask));
    generator_loss_batch(fx, &a, &b, &m, w)
}
