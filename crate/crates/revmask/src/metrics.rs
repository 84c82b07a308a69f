//! Image quality metrics and the bucketed evaluation harness.
//!
//! MAE, PSNR, and SSIM run per image pair; FID compares embedding
//! statistics of whole sets. Evaluation composites predictions onto the
//! ground truth before scoring, so visible pixels can never contribute
//! error. All metrics score the 8-bit storage range.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::image::Image;
#[cfg(test)]
use crate::image::ValueRange;
use crate::mask::{apply_mask, composite, BinaryMask, HoleRatioBucket};
use crate::model::images_to_batch;
use crate::nn::act::relu_forward;
use crate::nn::conv::{Conv2d, Padding};
use crate::nn::init;
use crate::nn::linear::{global_avg_forward, Linear};
use crate::rng::{child_seed_indexed, rng_from};
use crate::synth::{MaskSource, MaskSourceConfig};

/// PSNR sentinel used when the error is exactly zero.
pub const PSNR_CAP_DB: f64 = 100.0;

fn check_dims(gt: &Image, pred: &Image, context: &str) -> Result<()> {
    if gt.height() != pred.height() || gt.width() != pred.width() {
        return Err(Error::shape(
            context,
            format!("{}x{}", gt.height(), gt.width()),
            format!("{}x{}", pred.height(), pred.width()),
        ));
    }
    Ok(())
}

/// Mean absolute error over all pixels and channels, 8-bit range.
pub fn mae(gt: &Image, pred: &Image) -> Result<f64> {
    check_dims(gt, pred, "mae")?;
    let a = gt.to_unit8();
    let b = pred.to_unit8();
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data().iter()) {
        acc += (x as f64 - y as f64).abs();
    }
    Ok(acc / a.data().len() as f64)
}

/// PSNR in dB with a capped sentinel for zero error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnrDb {
    pub db: f64,
    pub capped: bool,
}

pub fn psnr(gt: &Image, pred: &Image, peak: f64) -> Result<PsnrDb> {
    check_dims(gt, pred, "psnr")?;
    let a = gt.to_unit8();
    let b = pred.to_unit8();
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data().iter()) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    let mse = acc / a.data().len() as f64;
    Ok(psnr_from_mse(mse, peak))
}

/// `10·log10(peak²/mse)`, capped at the zero-error sentinel.
pub fn psnr_from_mse(mse: f64, peak: f64) -> PsnrDb {
    if mse == 0.0 {
        PsnrDb { db: PSNR_CAP_DB, capped: true }
    } else {
        PsnrDb { db: (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB), capped: false }
    }
}

/// PSNR restricted to hole pixels (composites make visible pixels exact,
/// so this is the informative part).
pub fn hole_psnr(gt: &Image, pred: &Image, mask: &BinaryMask, peak: f64) -> Result<PsnrDb> {
    check_dims(gt, pred, "hole_psnr")?;
    if gt.height() != mask.height() || gt.width() != mask.width() {
        return Err(Error::shape("hole_psnr mask", format!("{}x{}", gt.height(), gt.width()), format!("{}x{}", mask.height(), mask.width())));
    }
    let a = gt.to_unit8();
    let b = pred.to_unit8();
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for ((i, j), &m) in mask.data().indexed_iter() {
        if m == 0 {
            for c in 0..3 {
                let d = a.data()[[c, i, j]] as f64 - b.data()[[c, i, j]] as f64;
                acc += d * d;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Metric("hole_psnr on a mask with no holes".into()));
    }
    Ok(psnr_from_mse(acc / count as f64, peak))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Luminance plane (BT.601 weights) in the 8-bit range.
fn luminance(img: &Image) -> Array2<f64> {
    let u = img.to_unit8();
    let d = u.data();
    let (_, h, w) = d.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        0.299 * d[[0, i, j]] as f64 + 0.587 * d[[1, i, j]] as f64 + 0.114 * d[[2, i, j]] as f64
    })
}

/// Separable valid-mode filtering with the 11-tap window.
fn filter_valid(plane: &Array2<f64>, k: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = plane.dim();
    let oh = h - SSIM_WINDOW + 1;
    let ow = w - SSIM_WINDOW + 1;
    let mut rows = Array2::zeros((h, ow));
    for i in 0..h {
        for j in 0..ow {
            let mut acc = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                acc += kv * plane[[i, j + t]];
            }
            rows[[i, j]] = acc;
        }
    }
    let mut out = Array2::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                acc += kv * rows[[i + t, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Mean local SSIM over valid 11x11 Gaussian windows, dynamic range =
/// `peak`. Three-channel input is reduced to luminance first.
pub fn ssim(gt: &Image, pred: &Image, peak: f64) -> Result<f64> {
    check_dims(gt, pred, "ssim")?;
    if gt.height() < SSIM_WINDOW || gt.width() < SSIM_WINDOW {
        return Err(Error::Metric(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {}x{}",
            gt.height(),
            gt.width()
        )));
    }
    let x = luminance(gt);
    let y = luminance(pred);
    let k = gaussian_window();

    let mu_x = filter_valid(&x, &k);
    let mu_y = filter_valid(&y, &k);
    let xx = filter_valid(&(&x * &x), &k);
    let yy = filter_valid(&(&y * &y), &k);
    let xy = filter_valid(&(&x * &y), &k);

    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);

    let mut acc = 0.0f64;
    for ((i, j), &mx) in mu_x.indexed_iter() {
        let my = mu_y[[i, j]];
        let sx = xx[[i, j]] - mx * mx;
        let sy = yy[[i, j]] - my * my;
        let sxy = xy[[i, j]] - mx * my;
        let v = ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sx + sy + c2));
        acc += v;
    }
    Ok(acc / mu_x.len() as f64)
}

// ---------------------------------------------------------------------------
// FID
// ---------------------------------------------------------------------------

/// Covariance regularization constant applied when the estimate is
/// degenerate (flagged in the result).
pub const FID_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidScore {
    pub value: f64,
    pub regularized: bool,
}

fn mean_and_cov(x: &Array2<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = x.dim();
    let mut mean = DVector::zeros(d);
    for row in x.axis_iter(Axis(0)) {
        for (j, &v) in row.iter().enumerate() {
            mean[j] += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    if n > 1 {
        for row in x.axis_iter(Axis(0)) {
            let centered = DVector::from_iterator(d, row.iter().copied()) - &mean;
            cov += &centered * centered.transpose();
        }
        cov /= (n - 1) as f64;
    }
    (mean, cov)
}

/// Symmetric PSD square root by eigendecomposition, eigenvalues clamped
/// at zero.
fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let sqrt_vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Fréchet distance between Gaussian fits of two embedding sets
/// (rows = samples).
pub fn fid_from_embeddings(real: &Array2<f64>, fake: &Array2<f64>) -> Result<FidScore> {
    let (nr, d) = real.dim();
    let (nf, df) = fake.dim();
    if nr == 0 || nf == 0 {
        return Err(Error::Metric("fid over an empty set".into()));
    }
    if d != df {
        return Err(Error::shape("fid embeddings", format!("dim {d}"), format!("dim {df}")));
    }
    if nr <= d || nf <= d {
        log::warn!("fid set sizes ({nr}, {nf}) do not exceed embedding dim {d}; covariance estimate is weak");
    }
    let (mu_r, mut cov_r) = mean_and_cov(real);
    let (mu_f, mut cov_f) = mean_and_cov(fake);

    let mut regularized = false;
    if min_eigenvalue(&cov_r) < 1e-10 || min_eigenvalue(&cov_f) < 1e-10 {
        regularized = true;
        for i in 0..d {
            cov_r[(i, i)] += FID_EPSILON;
            cov_f[(i, i)] += FID_EPSILON;
        }
    }

    let diff = &mu_r - &mu_f;
    let root_r = sqrtm_psd(&cov_r);
    let inner = &root_r * &cov_f * &root_r;
    let cross = sqrtm_psd(&inner);
    let value = diff.dot(&diff) + cov_r.trace() + cov_f.trace() - 2.0 * cross.trace();
    Ok(FidScore { value: value.max(0.0), regularized })
}

// ---------------------------------------------------------------------------
// Embedding extractor
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedderSource {
    /// Weights exported from a standard embedding network into the crate's
    /// checkpoint format, for comparability across runs.
    StandardInceptionCheckpoint(PathBuf),
    /// Self-contained seeded stack for offline use.
    SeededSmallEmbedder(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingExtractorSpec {
    pub source: EmbedderSource,
    pub dim: usize,
}

impl EmbeddingExtractorSpec {
    pub fn seeded(seed: u64, dim: usize) -> Self {
        EmbeddingExtractorSpec {
            source: EmbedderSource::SeededSmallEmbedder(seed),
            dim,
        }
    }
}

/// Fixed convolutional embedder: stride-2 conv stack, global average,
/// linear projection to the embedding dimension.
pub struct EmbeddingExtractor {
    convs: Vec<Conv2d>,
    proj: Linear,
    identity: String,
}

const EMBEDDER_WIDTHS: [usize; 3] = [16, 32, 64];

impl EmbeddingExtractor {
    pub fn new(spec: &EmbeddingExtractorSpec) -> Result<Self> {
        if spec.dim == 0 {
            return Err(Error::InvalidSpec("embedding dim must be >= 1".into()));
        }
        let (convs, proj, source) = match &spec.source {
            EmbedderSource::SeededSmallEmbedder(seed) => {
                let mut rng = rng_from(*seed);
                let mut convs = Vec::new();
                let mut in_c = 3;
                for &w in &EMBEDDER_WIDTHS {
                    convs.push(Conv2d {
                        weight: init::conv_weight(&mut rng, w, in_c, 3, 3),
                        bias: init::zero_bias(w),
                        stride: 2,
                        dilation: 1,
                        pad: Padding::symmetric(1),
                    });
                    in_c = w;
                }
                let proj = Linear {
                    weight: init::linear_weight(&mut rng, spec.dim, in_c),
                    bias: init::zero_bias(spec.dim),
                };
                (convs, proj, format!("seeded_small_embedder({seed})"))
            }
            EmbedderSource::StandardInceptionCheckpoint(path) => {
                let params = checkpoint::load_parameter_set(path)?;
                let mut convs = Vec::new();
                let mut in_c = 3;
                for (i, &w) in EMBEDDER_WIDTHS.iter().enumerate() {
                    let weight = params
                        .get(&format!("conv{i}.weight"))
                        .ok_or_else(|| Error::CorruptCheckpoint(format!("embedder missing conv{i}.weight")))?;
                    let bias = params
                        .get(&format!("conv{i}.bias"))
                        .ok_or_else(|| Error::CorruptCheckpoint(format!("embedder missing conv{i}.bias")))?;
                    if weight.shape != [w, in_c, 3, 3] {
                        return Err(Error::CorruptCheckpoint(format!("embedder conv{i} shape {:?}", weight.shape)));
                    }
                    convs.push(Conv2d {
                        weight: ndarray::Array4::from_shape_vec((w, in_c, 3, 3), weight.data.clone()).unwrap(),
                        bias: ndarray::Array1::from_vec(bias.data.clone()),
                        stride: 2,
                        dilation: 1,
                        pad: Padding::symmetric(1),
                    });
                    in_c = w;
                }
                let w = params
                    .get("proj.weight")
                    .ok_or_else(|| Error::CorruptCheckpoint("embedder missing proj.weight".into()))?;
                let b = params
                    .get("proj.bias")
                    .ok_or_else(|| Error::CorruptCheckpoint("embedder missing proj.bias".into()))?;
                if w.shape != [spec.dim, in_c] {
                    return Err(Error::CorruptCheckpoint(format!(
                        "embedder projection shape {:?} does not match dim {}",
                        w.shape, spec.dim
                    )));
                }
                let proj = Linear {
                    weight: Array2::from_shape_vec((spec.dim, in_c), w.data.clone()).unwrap(),
                    bias: ndarray::Array1::from_vec(b.data.clone()),
                };
                (convs, proj, format!("standard_inception_checkpoint({})", path.display()))
            }
        };
        let mut e = EmbeddingExtractor { convs, proj, identity: String::new() };
        e.identity = format!("{source};dim={}", e.proj.weight.dim().0);
        Ok(e)
    }

    pub fn dim(&self) -> usize {
        self.proj.weight.dim().0
    }

    pub fn identity(&self) -> &str {
        &self.identity
    }

    /// Embed a set of images: rows are per-image embedding vectors.
    pub fn embed(&self, imgs: &[Image]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((imgs.len(), self.dim()));
        for (chunk_idx, chunk) in imgs.chunks(16).enumerate() {
            let models: Vec<Image> = chunk.iter().map(Image::to_model).collect();
            let mut x = images_to_batch(&models)?;
            for conv in &self.convs {
                x = relu_forward(&conv.forward(&x));
            }
            let feat = global_avg_forward(&x);
            let emb = self.proj.forward(&feat);
            for (i, row) in emb.axis_iter(Axis(0)).enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    out[[chunk_idx * 16 + i, j]] = v as f64;
                }
            }
        }
        Ok(out)
    }
}

/// Spec-level FID over image sets.
pub fn fid(real: &[Image], fake: &[Image], emb: &EmbeddingExtractor) -> Result<FidScore> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Metric("fid over an empty set".into()));
    }
    let er = emb.embed(real)?;
    let ef = emb.embed(fake)?;
    fid_from_embeddings(&er, &ef)
}

// ---------------------------------------------------------------------------
// Evaluation harness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketMetrics {
    pub count: usize,
    pub mae: f64,
    pub psnr_db: f64,
    pub psnr_capped: usize,
    pub ssim: f64,
    pub fid: f64,
    pub fid_regularized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub bucket_edges: Vec<HoleRatioBucket>,
    pub overall: BucketMetrics,
    pub per_bucket: Vec<BucketMetrics>,
    pub failures: Vec<(usize, String)>,
}

impl MetricReport {
    /// CSV rows: bucket, metric, value, n.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Metric(format!("csv: {e}")))?;
        w.write_record(["bucket", "metric", "value", "n"])
            .map_err(|e| Error::Metric(format!("csv: {e}")))?;
        let mut emit = |label: &str, m: &BucketMetrics| -> Result<()> {
            for (metric, value) in [
                ("fid", m.fid),
                ("mae", m.mae),
                ("psnr_db", m.psnr_db),
                ("ssim", m.ssim),
            ] {
                w.write_record([label, metric, &format!("{value}"), &m.count.to_string()])
                    .map_err(|e| Error::Metric(format!("csv: {e}")))?;
            }
            Ok(())
        };
        emit("overall", &self.overall)?;
        for (bucket, m) in self.bucket_edges.iter().zip(self.per_bucket.iter()) {
            emit(&bucket.label(), m)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub struct EvalOptions {
    pub buckets: Vec<HoleRatioBucket>,
    pub max_mask_tries: u32,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            buckets: Vec::new(),
            max_mask_tries: 100,
            seed: 0,
        }
    }
}

struct PerImage {
    bucket: Option<usize>,
    mae: f64,
    psnr: PsnrDb,
    ssim: f64,
    gt: Image,
    comp: Image,
}

/// Score an inpainting function over a test set with bucketed masks.
///
/// `inpaint` receives the masked model-range image and its mask and
/// returns the raw prediction; the harness composites before scoring.
/// Per-image failures are collected, not fatal.
pub fn evaluate_with<F>(
    inpaint: F,
    test_images: &[Image],
    mask_cfg: &MaskSourceConfig,
    opts: &EvalOptions,
    embedder: &EmbeddingExtractor,
) -> Result<MetricReport>
where
    F: Fn(&Image, &BinaryMask) -> Result<Image> + Sync,
{
    if test_images.is_empty() {
        return Err(Error::Dataset("evaluation over an empty test set".into()));
    }
    let source = MaskSource::new(mask_cfg.clone())?;

    let results: Vec<(usize, Result<PerImage>)> = test_images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let run = || -> Result<PerImage> {
                let bucket_idx = if opts.buckets.is_empty() { None } else { Some(i % opts.buckets.len()) };
                let seed = child_seed_indexed(opts.seed, "eval-mask", i as u64);
                let mask = match bucket_idx {
                    Some(b) => source.sample_in_bucket_from(opts.buckets[b], seed, opts.max_mask_tries)?,
                    None => source.sample(seed)?,
                };
                let gt8 = img.to_unit8();
                let gt_model = img.to_model();
                let masked = apply_mask(&gt_model, &mask)?;
                let pred = inpaint(&masked, &mask)?;
                let comp8 = composite(&gt8, &pred.to_unit8(), &mask)?;
                Ok(PerImage {
                    bucket: bucket_idx,
                    mae: mae(&gt8, &comp8)?,
                    psnr: psnr(&gt8, &comp8, 255.0)?,
                    ssim: ssim(&gt8, &comp8, 255.0)?,
                    gt: gt8,
                    comp: comp8,
                })
            };
            (i, run())
        })
        .collect();

    let mut failures = Vec::new();
    let mut scored: Vec<PerImage> = Vec::new();
    for (i, r) in results {
        match r {
            Ok(p) => scored.push(p),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if scored.is_empty() {
        return Err(Error::Metric(format!(
            "every evaluation image failed; first failure: {}",
            failures.first().map(|(_, e)| e.as_str()).unwrap_or("none")
        )));
    }

    let aggregate = |subset: Vec<&PerImage>| -> Result<BucketMetrics> {
        let n = subset.len();
        let mae_mean = subset.iter().map(|p| p.mae).sum::<f64>() / n as f64;
        let psnr_mean = subset.iter().map(|p| p.psnr.db).sum::<f64>() / n as f64;
        let capped = subset.iter().filter(|p| p.psnr.capped).count();
        let ssim_mean = subset.iter().map(|p| p.ssim).sum::<f64>() / n as f64;
        let reals: Vec<Image> = subset.iter().map(|p| p.gt.clone()).collect();
        let comps: Vec<Image> = subset.iter().map(|p| p.comp.clone()).collect();
        let fid_score = fid(&reals, &comps, embedder)?;
        Ok(BucketMetrics {
            count: n,
            mae: mae_mean,
            psnr_db: psnr_mean,
            psnr_capped: capped,
            ssim: ssim_mean,
            fid: fid_score.value,
            fid_regularized: fid_score.regularized,
        })
    };

    let overall = aggregate(scored.iter().collect())?;
    let mut per_bucket = Vec::new();
    for b in 0..opts.buckets.len() {
        let subset: Vec<&PerImage> = scored.iter().filter(|p| p.bucket == Some(b)).collect();
        if subset.is_empty() {
            per_bucket.push(BucketMetrics {
                count: 0,
                mae: f64::NAN,
                psnr_db: f64::NAN,
                psnr_capped: 0,
                ssim: f64::NAN,
                fid: f64::NAN,
                fid_regularized: false,
            });
        } else {
            per_bucket.push(aggregate(subset)?);
        }
    }

    Ok(MetricReport {
        bucket_edges: opts.buckets.clone(),
        overall,
        per_bucket,
        failures,
    })
}

/// Side-by-side grid: one row per (masked, output, ground-truth) triple.
pub fn write_comparison_grid(path: &std::path::Path, rows: &[(Image, Image, Image)]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Metric("empty comparison grid".into()));
    }
    let (h, w) = (rows[0].0.height(), rows[0].0.width());
    let gap = 2usize;
    let grid_h = rows.len() * h + (rows.len() - 1) * gap;
    let grid_w = 3 * w + 2 * gap;
    let mut canvas = image::RgbImage::from_pixel(grid_w as u32, grid_h as u32, image::Rgb([255, 255, 255]));
    for (r, (a, b, c)) in rows.iter().enumerate() {
        for (col, img) in [a, b, c].into_iter().enumerate() {
            let unit = img.to_unit8();
            if unit.height() != h || unit.width() != w {
                return Err(Error::shape("comparison grid", format!("{h}x{w}"), format!("{}x{}", unit.height(), unit.width())));
            }
            let oy = r * (h + gap);
            let ox = col * (w + gap);
            for y in 0..h {
                for x in 0..w {
                    let px = [
                        unit.data()[[0, y, x]].round().clamp(0.0, 255.0) as u8,
                        unit.data()[[1, y, x]].round().clamp(0.0, 255.0) as u8,
                        unit.data()[[2, y, x]].round().clamp(0.0, 255.0) as u8,
                    ];
                    canvas.put_pixel((ox + x) as u32, (oy + y) as u32, image::Rgb(px));
                }
            }
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    canvas.save(path)?;
    Ok(())
}
