//! Image file IO, preprocessing, and dataset splits.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::image::{Image, ValueRange};
use crate::mask::BinaryMask;
use crate::resample::area_resize_plane;
use crate::rng::rng_from;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Load an image file as float `[0,255]` pixels.
pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Array3::zeros((3, h, w));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[[c, y as usize, x as usize]] = p.0[c] as f32;
        }
    }
    Image::new(data, ValueRange::Unit8)
}

/// Write an image as 8-bit PNG. Values are converted to the storage range
/// and rounded here, at the file boundary only.
pub fn save_image_png(path: &Path, img: &Image) -> Result<()> {
    let unit = img.to_unit8();
    let (h, w) = (unit.height(), unit.width());
    let mut out = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                unit.data()[[0, y, x]].round().clamp(0.0, 255.0) as u8,
                unit.data()[[1, y, x]].round().clamp(0.0, 255.0) as u8,
                unit.data()[[2, y, x]].round().clamp(0.0, 255.0) as u8,
            ];
            out.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    out.save(path)?;
    Ok(())
}

/// Write a mask as grayscale PNG: visible = white, hole = black. Loading
/// back through the binarizer with default polarity reproduces the mask.
pub fn save_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (h, w) = (mask.height(), mask.width());
    let mut out = image::GrayImage::new(w as u32, h as u32);
    for ((y, x), &v) in mask.data().indexed_iter() {
        out.put_pixel(x as u32, y as u32, image::Luma([v * 255]));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    out.save(path)?;
    Ok(())
}

/// Load, area-resize to the target, and map into model range by
/// `x / 127.5 - 1`.
pub fn preprocess(path: &Path, target_height: usize, target_width: usize) -> Result<Image> {
    let img = load_image(path)?;
    Ok(preprocess_image(&img, target_height, target_width))
}

/// Resize + normalize an already-loaded storage-range image.
pub fn preprocess_image(img: &Image, target_height: usize, target_width: usize) -> Image {
    let mut data = Array3::zeros((3, target_height, target_width));
    for c in 0..3 {
        let plane = img.data().index_axis(ndarray::Axis(0), c);
        let resized = area_resize_plane(plane, target_height, target_width);
        data.index_axis_mut(ndarray::Axis(0), c)
            .assign(&resized.mapv(|v| v / 127.5 - 1.0));
    }
    Image::from_parts_unchecked(data.mapv(|v| v.clamp(-1.0, 1.0)), ValueRange::Model)
}

/// Train/test file lists with deterministic ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    /// Seeded shuffle, first `train_fraction` of files become train.
    Fraction { train_fraction: f64, seed: u64 },
    /// Explicit manifests: one path per line, relative to the root.
    Manifests { train: PathBuf, test: PathBuf },
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One relative path per line, lexicographic file order preserved.
    pub fn write_manifests(&self, dir: &Path, root: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, list) in [("train.txt", &self.train), ("test.txt", &self.test)] {
            let mut text = String::new();
            for p in list {
                let rel = p.strip_prefix(root).unwrap_or(p);
                text.push_str(&rel.to_string_lossy());
                text.push('\n');
            }
            fs::write(dir.join(name), text)?;
        }
        Ok(())
    }
}

/// List image files in `root` (lexicographic), dropping unreadable entries
/// with a warning count.
fn list_readable_images(root: &Path) -> Result<(Vec<PathBuf>, usize)> {
    let mut files: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| IMAGE_EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    let mut skipped = 0usize;
    files.retain(|p| {
        // header decode only; full pixel decode happens lazily later
        let readable = image::ImageReader::open(p)
            .and_then(|r| r.with_guessed_format())
            .ok()
            .and_then(|r| r.into_dimensions().ok())
            .is_some();
        if !readable {
            log::warn!("skipping unreadable image {}", p.display());
            skipped += 1;
        }
        readable
    });
    Ok((files, skipped))
}

/// Deterministic, seeded dataset split.
pub fn load_split(root: &Path, spec: &SplitSpec) -> Result<DatasetSplit> {
    match spec {
        SplitSpec::Fraction { train_fraction, seed } => {
            if !(0.0..=1.0).contains(train_fraction) {
                return Err(Error::Dataset(format!("train fraction {train_fraction} outside [0,1]")));
            }
            let (mut files, skipped) = list_readable_images(root)?;
            if files.is_empty() {
                return Err(Error::Dataset(format!(
                    "no readable images in {} ({skipped} skipped)",
                    root.display()
                )));
            }
            let mut rng = rng_from(*seed);
            files.shuffle(&mut rng);
            let n_train = ((files.len() as f64) * train_fraction).round() as usize;
            let test = files.split_off(n_train.min(files.len()));
            Ok(DatasetSplit { train: files, test })
        }
        SplitSpec::Manifests { train, test } => {
            let read_list = |manifest: &Path| -> Result<Vec<PathBuf>> {
                let text = fs::read_to_string(manifest).map_err(|e| {
                    Error::Dataset(format!("cannot read manifest {}: {e}", manifest.display()))
                })?;
                Ok(text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(|l| root.join(l))
                    .collect())
            };
            let train = read_list(train)?;
            let test = read_list(test)?;
            if train.iter().any(|p| test.contains(p)) {
                return Err(Error::Dataset("train and test manifests overlap".into()));
            }
            Ok(DatasetSplit { train, test })
        }
    }
}
