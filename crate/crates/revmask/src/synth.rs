//! Irregular mask synthesis and external mask loading.
//!
//! The synthesizer draws random-walk polyline strokes with a round brush,
//! approximating hand-drawn occlusion masks. The loader binarizes arbitrary
//! grayscale mask files after area resizing. Both ends meet the same
//! contract: output masks obey 1 = visible, 0 = hole.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, HoleRatioBucket};
use crate::resample::area_resize_plane;
use crate::rng::{child_seed_indexed, rng_from};

/// Stroke model parameters for the synthesizer.
#[derive(Debug, Clone, PartialEq)]
pub struct StrokeSpec {
    pub num_strokes: u32,
    /// Vertices per stroke, inclusive range.
    pub vertices_min: u32,
    pub vertices_max: u32,
    /// Brush thickness in pixels, inclusive range.
    pub thickness_min: u32,
    pub thickness_max: u32,
    pub canvas_height: usize,
    pub canvas_width: usize,
}

impl Default for StrokeSpec {
    fn default() -> Self {
        StrokeSpec {
            num_strokes: 4,
            vertices_min: 4,
            vertices_max: 12,
            thickness_min: 5,
            thickness_max: 15,
            canvas_height: 256,
            canvas_width: 256,
        }
    }
}

impl StrokeSpec {
    fn validate(&self) -> Result<()> {
        if self.canvas_height < 8 || self.canvas_width < 8 {
            return Err(Error::InvalidSpec(format!(
                "mask canvas must be at least 8x8, got {}x{}",
                self.canvas_height, self.canvas_width
            )));
        }
        if self.vertices_min < 1 || self.vertices_min > self.vertices_max {
            return Err(Error::InvalidSpec("vertices range must satisfy 1 <= min <= max".into()));
        }
        if self.thickness_min < 1 || self.thickness_min > self.thickness_max {
            return Err(Error::InvalidSpec("thickness range must satisfy 1 <= min <= max".into()));
        }
        Ok(())
    }
}

/// Where masks come from and how raw files are binarized.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskMode {
    Synthesize(StrokeSpec),
    LoadDirectory(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSourceConfig {
    pub mode: MaskMode,
    pub target_height: usize,
    pub target_width: usize,
    /// Values strictly greater than this map to the white class.
    pub binarize_threshold: u8,
    /// Default true: dark strokes become holes, white background stays
    /// visible. Override for mask sets with inverted polarity.
    pub strokes_are_holes: bool,
    pub seed: u64,
}

impl MaskSourceConfig {
    pub fn synthesize(spec: StrokeSpec, seed: u64) -> Self {
        let (h, w) = (spec.canvas_height, spec.canvas_width);
        MaskSourceConfig {
            mode: MaskMode::Synthesize(spec),
            target_height: h,
            target_width: w,
            binarize_threshold: 127,
            strokes_are_holes: true,
            seed,
        }
    }

    pub fn load_directory(dir: impl Into<PathBuf>, target: (usize, usize), seed: u64) -> Self {
        MaskSourceConfig {
            mode: MaskMode::LoadDirectory(dir.into()),
            target_height: target.0,
            target_width: target.1,
            binarize_threshold: 127,
            strokes_are_holes: true,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.target_height < 8 || self.target_width < 8 {
            return Err(Error::InvalidSpec(format!(
                "mask target size must be at least 8x8, got {}x{}",
                self.target_height, self.target_width
            )));
        }
        if let MaskMode::Synthesize(spec) = &self.mode {
            spec.validate()?;
        }
        Ok(())
    }
}

/// Rasterize random-walk strokes onto an all-visible canvas.
///
/// Strokes are connected polylines drawn with a round brush; stroke pixels
/// become holes. Deterministic for a fixed `(spec, seed)` pair.
pub fn synthesize_stroke_mask(spec: &StrokeSpec, seed: u64) -> Result<BinaryMask> {
    spec.validate()?;
    let (h, w) = (spec.canvas_height, spec.canvas_width);
    let mut grid = Array2::from_elem((h, w), 1u8);
    let mut rng = rng_from(seed);

    let min_side = h.min(w) as f64;
    for _ in 0..spec.num_strokes {
        let n_vertices = rng.gen_range(spec.vertices_min..=spec.vertices_max);
        let thickness = rng.gen_range(spec.thickness_min..=spec.thickness_max);
        let radius = thickness as f64 / 2.0;

        let mut x = rng.gen_range(0.0..w as f64);
        let mut y = rng.gen_range(0.0..h as f64);
        let mut angle = rng.gen_range(0.0..std::f64::consts::TAU);
        stamp_disc(&mut grid, x, y, radius);

        for _ in 1..n_vertices {
            angle += rng.gen_range(-1.0..1.0) * std::f64::consts::FRAC_PI_3;
            let length = rng.gen_range(min_side / 16.0..min_side / 4.0);
            let nx = (x + length * angle.cos()).clamp(0.0, (w - 1) as f64);
            let ny = (y + length * angle.sin()).clamp(0.0, (h - 1) as f64);
            stamp_segment(&mut grid, x, y, nx, ny, radius);
            x = nx;
            y = ny;
        }
    }
    BinaryMask::new(grid)
}

fn stamp_segment(grid: &mut Array2<u8>, x0: f64, y0: f64, x1: f64, y1: f64, radius: f64) {
    let length = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    let steps = (length * 2.0).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        stamp_disc(grid, x0 + t * (x1 - x0), y0 + t * (y1 - y0), radius);
    }
}

fn stamp_disc(grid: &mut Array2<u8>, cx: f64, cy: f64, radius: f64) {
    let (h, w) = grid.dim();
    let r = radius.max(0.5);
    let y_lo = ((cy - r).floor().max(0.0)) as usize;
    let y_hi = ((cy + r).ceil().min((h - 1) as f64)) as usize;
    let x_lo = ((cx - r).floor().max(0.0)) as usize;
    let x_hi = ((cx + r).ceil().min((w - 1) as f64)) as usize;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            if dx * dx + dy * dy <= r * r {
                grid[[y, x]] = 0;
            }
        }
    }
}

/// Area-resize a raw grayscale plane to the configured size, threshold it,
/// and apply polarity so the output obeys 1 = visible.
///
/// Threshold tie rule: a resampled value strictly greater than the
/// threshold lands in the white class.
pub fn binarize_and_resize(raw: &Array2<f32>, cfg: &MaskSourceConfig) -> Result<BinaryMask> {
    cfg.validate()?;
    if raw.is_empty() {
        return Err(Error::InvalidSpec("empty mask plane".into()));
    }
    let resized = area_resize_plane(raw.view(), cfg.target_height, cfg.target_width);
    let threshold = cfg.binarize_threshold as f32;
    let grid = resized.mapv(|v| {
        let white = v > threshold;
        // dark strokes are holes: white background -> visible
        let visible = if cfg.strokes_are_holes { white } else { !white };
        u8::from(visible)
    });
    BinaryMask::new(grid)
}

/// Load a mask file as a grayscale plane in [0, 255].
///
/// Non-grayscale inputs are converted by luminance with a warning.
pub fn load_mask_plane(path: &Path) -> Result<Array2<f32>> {
    let img = image::open(path)?;
    if img.color().channel_count() > 1 {
        log::warn!("mask {} is not grayscale; converting by luminance", path.display());
    }
    let gray = img.into_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut plane = Array2::zeros((h, w));
    for (x, y, p) in gray.enumerate_pixels() {
        plane[[y as usize, x as usize]] = p.0[0] as f32;
    }
    Ok(plane)
}

/// Runtime mask sampler bound to a source configuration.
///
/// Directory sources list files once, sorted lexicographically, so the
/// mapping from seed to file is stable.
pub struct MaskSource {
    cfg: MaskSourceConfig,
    files: Vec<PathBuf>,
}

impl MaskSource {
    pub fn new(cfg: MaskSourceConfig) -> Result<Self> {
        cfg.validate()?;
        let files = match &cfg.mode {
            MaskMode::Synthesize(_) => Vec::new(),
            MaskMode::LoadDirectory(dir) => {
                let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| {
                        p.extension()
                            .map(|e| e.eq_ignore_ascii_case("png"))
                            .unwrap_or(false)
                    })
                    .collect();
                if files.is_empty() {
                    return Err(Error::Dataset(format!("no PNG masks in {}", dir.display())));
                }
                files.sort();
                files
            }
        };
        Ok(MaskSource { cfg, files })
    }

    pub fn config(&self) -> &MaskSourceConfig {
        &self.cfg
    }

    /// One mask for the given seed.
    pub fn sample(&self, seed: u64) -> Result<BinaryMask> {
        match &self.cfg.mode {
            MaskMode::Synthesize(spec) => {
                let canvas = synthesize_stroke_mask(spec, seed)?;
                if (canvas.height(), canvas.width()) == (self.cfg.target_height, self.cfg.target_width) {
                    Ok(canvas)
                } else {
                    // resize through the binarize path to stay strictly binary
                    let plane = canvas.to_f32().mapv(|v| v * 255.0);
                    binarize_and_resize(&plane, &self.cfg)
                }
            }
            MaskMode::LoadDirectory(_) => {
                let idx = rng_from(seed).gen_range(0..self.files.len());
                let plane = load_mask_plane(&self.files[idx])?;
                binarize_and_resize(&plane, &self.cfg)
            }
        }
    }

    /// Rejection-sample until the hole ratio falls inside the bucket.
    ///
    /// Every accepted mask is re-verified by an independent pixel recount
    /// before being returned.
    pub fn sample_in_bucket(&self, bucket: HoleRatioBucket, max_tries: u32) -> Result<BinaryMask> {
        self.sample_in_bucket_from(bucket, self.cfg.seed, max_tries)
    }

    /// Same, but rooted at an explicit seed (per-image streams).
    pub fn sample_in_bucket_from(&self, bucket: HoleRatioBucket, base_seed: u64, max_tries: u32) -> Result<BinaryMask> {
        for t in 0..max_tries {
            let seed = child_seed_indexed(base_seed, "bucket-sample", t as u64);
            let mask = self.sample(seed)?;
            let ratio = recount_hole_ratio(&mask);
            if bucket.contains(ratio) {
                return Ok(mask);
            }
        }
        Err(Error::BucketUnsatisfiable {
            lo: bucket.lo(),
            hi: bucket.hi(),
            tries: max_tries,
        })
    }
}

/// Spec-level entry point: build a source from config and sample one
/// bucketed mask.
pub fn sample_mask_in_bucket(
    cfg: &MaskSourceConfig,
    bucket: HoleRatioBucket,
    max_tries: u32,
) -> Result<BinaryMask> {
    MaskSource::new(cfg.clone())?.sample_in_bucket(bucket, max_tries)
}

/// Independent hole-ratio recount (kept separate from
/// `BinaryMask::hole_ratio` so bucket checks never trust the primary path).
pub fn recount_hole_ratio(mask: &BinaryMask) -> f64 {
    let mut zeros = 0usize;
    let mut total = 0usize;
    for &v in mask.data().iter() {
        total += 1;
        if v == 0 {
            zeros += 1;
        }
    }
    zeros as f64 / total as f64
}
