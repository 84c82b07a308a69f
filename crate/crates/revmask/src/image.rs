//! Image container with a declared value range.
//!
//! Pixel data is stored channel-first `(3, H, W)` as `f32`, whatever the
//! range tag says. 8-bit files are promoted to float on load and rounded
//! back only when written out, so the masking algebra stays exact.

use ndarray::Array3;

use crate::error::{Error, Result};

/// Declared interval for pixel values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueRange {
    /// Storage range `[0, 255]`.
    Unit8,
    /// Model range `[-1, 1]`.
    Model,
}

impl ValueRange {
    pub fn bounds(self) -> (f32, f32) {
        match self {
            ValueRange::Unit8 => (0.0, 255.0),
            ValueRange::Model => (-1.0, 1.0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ValueRange::Unit8 => "unit_8bit [0,255]",
            ValueRange::Model => "model [-1,1]",
        }
    }
}

/// An H×W×3 real-valued image, stored `(3, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f32>,
    range: ValueRange,
}

impl Image {
    /// Wrap pixel data, checking the channel count and that every value is
    /// finite and inside the declared range.
    pub fn new(data: Array3<f32>, range: ValueRange) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != 3 {
            return Err(Error::shape("Image::new", "3 channels", format!("{c} channels")));
        }
        if h == 0 || w == 0 {
            return Err(Error::shape("Image::new", "nonzero spatial dims", format!("{h}x{w}")));
        }
        let (lo, hi) = range.bounds();
        for &v in data.iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite("Image::new".into()));
            }
            if v < lo || v > hi {
                return Err(Error::OutOfRange {
                    context: "Image::new".into(),
                    range: range.label().into(),
                    value: v,
                });
            }
        }
        Ok(Image { data, range })
    }

    /// Constant-valued image.
    pub fn splat(value: f32, height: usize, width: usize, range: ValueRange) -> Result<Self> {
        Image::new(Array3::from_elem((3, height, width), value), range)
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    /// Map `[0,255]` storage values to the model range by `x / 127.5 - 1`.
    pub fn to_model(&self) -> Image {
        match self.range {
            ValueRange::Model => self.clone(),
            ValueRange::Unit8 => Image {
                data: self.data.mapv(|x| x / 127.5 - 1.0),
                range: ValueRange::Model,
            },
        }
    }

    /// Map model-range values back to `[0,255]` by `(x + 1) * 127.5`.
    pub fn to_unit8(&self) -> Image {
        match self.range {
            ValueRange::Unit8 => self.clone(),
            ValueRange::Model => Image {
                data: self.data.mapv(|x| (x + 1.0) * 127.5),
                range: ValueRange::Unit8,
            },
        }
    }

    pub(crate) fn same_shape(&self, other: &Image) -> bool {
        self.data.dim() == other.data.dim()
    }

    pub(crate) fn from_parts_unchecked(data: Array3<f32>, range: ValueRange) -> Image {
        Image { data, range }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_channel_count() {
        let data = Array3::<f32>::zeros((1, 4, 4));
        assert!(Image::new(data, ValueRange::Unit8).is_err());
    }

    #[test]
    fn rejects_out_of_range_values() {
        let data = Array3::from_elem((3, 2, 2), 300.0);
        assert!(Image::new(data, ValueRange::Unit8).is_err());
        let data = Array3::from_elem((3, 2, 2), 1.5);
        assert!(Image::new(data, ValueRange::Model).is_err());
    }

    #[test]
    fn range_endpoints_convert_exactly() {
        let img = Image::splat(0.0, 2, 2, ValueRange::Unit8).unwrap();
        assert_eq!(img.to_model().data()[[0, 0, 0]], -1.0);
        let img = Image::splat(255.0, 2, 2, ValueRange::Unit8).unwrap();
        assert_eq!(img.to_model().data()[[0, 0, 0]], 1.0);
        let img = Image::splat(1.0, 2, 2, ValueRange::Model).unwrap();
        assert_eq!(img.to_unit8().data()[[0, 0, 0]], 255.0);
    }

    #[test]
    fn unit8_model_round_trip_within_quantization() {
        for v in 0..=255u32 {
            let img = Image::splat(v as f32, 1, 1, ValueRange::Unit8).unwrap();
            let back = img.to_model().to_unit8();
            assert!((back.data()[[0, 0, 0]] - v as f32).abs() < 1.0 / 255.0);
        }
    }
}
