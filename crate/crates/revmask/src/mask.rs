//! Masking algebra.
//!
//! A mask selects pixels with 1 = visible, 0 = hole; this polarity is forced
//! by the masked-image product `I ⊙ M`, which must zero out the holes.
//! Masks are single-channel and broadcast over the color channels when
//! applied. The composite keeps visible pixels bit-exact: a pixel comes
//! either from the ground image or from the prediction, never from a blend.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::image::Image;

/// Single-channel {0,1} grid. 1 = visible pixel, 0 = hole.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    data: Array2<u8>,
}

impl BinaryMask {
    /// Wrap a grid, rejecting any element that is not exactly 0 or 1.
    pub fn new(data: Array2<u8>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::shape("BinaryMask::new", "nonzero dims", "empty grid"));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidSpec("mask elements must be 0 or 1".into()));
        }
        Ok(BinaryMask { data })
    }

    /// All-visible mask (no holes).
    pub fn ones(height: usize, width: usize) -> Self {
        BinaryMask {
            data: Array2::from_elem((height, width), 1),
        }
    }

    /// All-hole mask.
    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask {
            data: Array2::from_elem((height, width), 0),
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    /// The reversed mask `M_r = 1 - M`: selects hole pixels.
    pub fn reversed(&self) -> BinaryMask {
        BinaryMask {
            data: self.data.mapv(|v| 1 - v),
        }
    }

    /// Fraction of hole pixels: zeros / (H·W).
    pub fn hole_ratio(&self) -> f64 {
        let zeros = self.data.iter().filter(|&&v| v == 0).count();
        zeros as f64 / (self.data.len() as f64)
    }

    /// Mask as a float grid of 0.0 / 1.0.
    pub fn to_f32(&self) -> Array2<f32> {
        self.data.mapv(f32::from)
    }

    fn matches_image(&self, img: &Image, context: &str) -> Result<()> {
        if img.height() != self.height() || img.width() != self.width() {
            return Err(Error::shape(
                context,
                format!("image {}x{}", self.height(), self.width()),
                format!("image {}x{}", img.height(), img.width()),
            ));
        }
        Ok(())
    }
}

/// Masked image `I ⊙ M`: visible pixels unchanged, hole pixels exactly 0.
pub fn apply_mask(img: &Image, mask: &BinaryMask) -> Result<Image> {
    mask.matches_image(img, "apply_mask")?;
    let mut data = img.data().clone();
    for c in 0..3 {
        for ((i, j), &m) in mask.data().indexed_iter() {
            if m == 0 {
                data[[c, i, j]] = 0.0;
            }
        }
    }
    Ok(Image::from_parts_unchecked(data, img.range()))
}

/// Predicted masked-area image `I_pred ⊙ M_r`: nonzero only inside holes.
/// Takes the original mask and reverses it internally.
pub fn masked_prediction(pred: &Image, mask: &BinaryMask) -> Result<Image> {
    mask.matches_image(pred, "masked_prediction")?;
    apply_mask(pred, &mask.reversed())
}

/// Spatial-preserving composite: `ground ⊙ M + pred ⊙ M_r`.
///
/// Visible pixels are taken from `ground` bit-exactly; only holes come
/// from the prediction.
pub fn composite(ground: &Image, pred: &Image, mask: &BinaryMask) -> Result<Image> {
    if !ground.same_shape(pred) {
        return Err(Error::shape(
            "composite",
            format!("{}x{}", ground.height(), ground.width()),
            format!("{}x{}", pred.height(), pred.width()),
        ));
    }
    if ground.range() != pred.range() {
        return Err(Error::RangeMismatch(
            ground.range().label().into(),
            pred.range().label().into(),
        ));
    }
    mask.matches_image(ground, "composite")?;
    let mut data = pred.data().clone();
    let g = ground.data();
    for c in 0..3 {
        for ((i, j), &m) in mask.data().indexed_iter() {
            if m == 1 {
                data[[c, i, j]] = g[[c, i, j]];
            }
        }
    }
    Ok(Image::from_parts_unchecked(data, ground.range()))
}

/// Hole-to-image ratio interval used to bucket evaluation masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoleRatioBucket {
    lo: f64,
    hi: f64,
}

impl HoleRatioBucket {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::InvalidSpec(format!(
                "hole ratio bucket requires 0 <= lo < hi <= 1, got [{lo}, {hi}]"
            )));
        }
        Ok(HoleRatioBucket { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Inclusive membership test.
    pub fn contains(&self, ratio: f64) -> bool {
        ratio >= self.lo && ratio <= self.hi
    }

    pub fn label(&self) -> String {
        format!("[{:.2},{:.2}]", self.lo, self.hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array3};
    use proptest::prelude::*;

    use crate::image::ValueRange;

    fn img_from_channel(vals: &[[f32; 2]; 2]) -> Image {
        let mut data = Array3::zeros((3, 2, 2));
        for c in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    data[[c, i, j]] = vals[i][j];
                }
            }
        }
        Image::new(data, ValueRange::Unit8).unwrap()
    }

    #[test]
    fn reverse_of_full_mask_is_empty() {
        let m = BinaryMask::ones(4, 4);
        let r = m.reversed();
        assert!(r.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn reverse_elementwise_oracle() {
        // elementwise 1 - x
        let m = BinaryMask::new(arr2(&[[1, 0], [0, 1]])).unwrap();
        let r = m.reversed();
        assert_eq!(r.data(), &arr2(&[[0, 1], [1, 0]]));
    }

    #[test]
    fn apply_identity_and_annihilating_masks() {
        let img = img_from_channel(&[[10.0, 20.0], [30.0, 40.0]]);
        let kept = apply_mask(&img, &BinaryMask::ones(2, 2)).unwrap();
        assert_eq!(kept.data(), img.data());
        let zeroed = apply_mask(&img, &BinaryMask::zeros(2, 2)).unwrap();
        assert!(zeroed.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn apply_mask_elementwise_oracle() {
        let img = img_from_channel(&[[10.0, 20.0], [30.0, 40.0]]);
        let m = BinaryMask::new(arr2(&[[1, 0], [0, 1]])).unwrap();
        let out = apply_mask(&img, &m).unwrap();
        for c in 0..3 {
            assert_eq!(out.data()[[c, 0, 0]], 10.0);
            assert_eq!(out.data()[[c, 0, 1]], 0.0);
            assert_eq!(out.data()[[c, 1, 0]], 0.0);
            assert_eq!(out.data()[[c, 1, 1]], 40.0);
        }
    }

    #[test]
    fn apply_mask_rejects_dim_mismatch_with_shape_report() {
        let img = img_from_channel(&[[1.0, 2.0], [3.0, 4.0]]);
        let err = apply_mask(&img, &BinaryMask::ones(3, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3x3") && msg.contains("2x2"), "got: {msg}");
    }

    #[test]
    fn masked_prediction_endpoints() {
        let pred = img_from_channel(&[[5.0, 5.0], [5.0, 5.0]]);
        // no holes -> zero image
        let none = masked_prediction(&pred, &BinaryMask::ones(2, 2)).unwrap();
        assert!(none.data().iter().all(|&v| v == 0.0));
        // everything is hole -> pred unchanged
        let all = masked_prediction(&pred, &BinaryMask::zeros(2, 2)).unwrap();
        assert_eq!(all.data(), pred.data());
        // elementwise oracle
        let m = BinaryMask::new(arr2(&[[1, 0], [0, 1]])).unwrap();
        let out = masked_prediction(&pred, &m).unwrap();
        for c in 0..3 {
            assert_eq!(out.data()[[c, 0, 0]], 0.0);
            assert_eq!(out.data()[[c, 0, 1]], 5.0);
            assert_eq!(out.data()[[c, 1, 0]], 5.0);
            assert_eq!(out.data()[[c, 1, 1]], 0.0);
        }
    }

    #[test]
    fn composite_endpoints_and_oracle() {
        let ground = img_from_channel(&[[1.0, 2.0], [3.0, 4.0]]);
        let pred = img_from_channel(&[[9.0, 9.0], [9.0, 9.0]]);
        // perfect prediction
        let out = composite(&ground, &ground, &BinaryMask::new(arr2(&[[1, 0], [0, 1]])).unwrap()).unwrap();
        assert_eq!(out.data(), ground.data());
        // nothing to inpaint
        let out = composite(&ground, &pred, &BinaryMask::ones(2, 2)).unwrap();
        assert_eq!(out.data(), ground.data());
        // partition-of-unity oracle
        let m = BinaryMask::new(arr2(&[[1, 0], [0, 1]])).unwrap();
        let out = composite(&ground, &pred, &m).unwrap();
        for c in 0..3 {
            assert_eq!(out.data()[[c, 0, 0]], 1.0);
            assert_eq!(out.data()[[c, 0, 1]], 9.0);
            assert_eq!(out.data()[[c, 1, 0]], 9.0);
            assert_eq!(out.data()[[c, 1, 1]], 4.0);
        }
    }

    #[test]
    fn composite_rejects_range_mismatch() {
        let ground = img_from_channel(&[[1.0, 2.0], [3.0, 4.0]]);
        let pred = Image::splat(0.5, 2, 2, ValueRange::Model).unwrap();
        assert!(matches!(
            composite(&ground, &pred, &BinaryMask::ones(2, 2)),
            Err(Error::RangeMismatch(..))
        ));
    }

    #[test]
    fn hole_ratio_counts_zeros() {
        assert_eq!(BinaryMask::ones(4, 4).hole_ratio(), 0.0);
        assert_eq!(BinaryMask::zeros(4, 4).hole_ratio(), 1.0);
        let mut data = Array2::from_elem((4, 4), 1u8);
        data[[0, 0]] = 0;
        data[[1, 1]] = 0;
        data[[2, 2]] = 0;
        data[[3, 3]] = 0;
        assert_eq!(BinaryMask::new(data).unwrap().hole_ratio(), 0.25);
    }

    #[test]
    fn mask_rejects_non_binary_values() {
        assert!(BinaryMask::new(arr2(&[[0, 2], [1, 0]])).is_err());
    }

    #[test]
    fn bucket_validation() {
        assert!(HoleRatioBucket::new(0.01, 0.6).is_ok());
        assert!(HoleRatioBucket::new(0.6, 0.6).is_err());
        assert!(HoleRatioBucket::new(-0.1, 0.5).is_err());
        assert!(HoleRatioBucket::new(0.5, 1.1).is_err());
    }

    fn arb_mask(max_side: usize) -> impl Strategy<Value = BinaryMask> {
        (2..=max_side, 2..=max_side).prop_flat_map(|(h, w)| {
            proptest::collection::vec(0u8..=1, h * w)
                .prop_map(move |v| BinaryMask::new(Array2::from_shape_vec((h, w), v).unwrap()).unwrap())
        })
    }

    fn arb_image_for(h: usize, w: usize) -> impl Strategy<Value = Image> {
        proptest::collection::vec(0.0f32..=255.0, 3 * h * w).prop_map(move |v| {
            Image::new(Array3::from_shape_vec((3, h, w), v).unwrap(), ValueRange::Unit8).unwrap()
        })
    }

    proptest! {
        #[test]
        fn reverse_is_involution(m in arb_mask(8)) {
            prop_assert_eq!(m.reversed().reversed(), m);
        }

        #[test]
        fn mask_plus_reverse_is_all_ones(m in arb_mask(8)) {
            let r = m.reversed();
            let sum = m.data() + r.data();
            prop_assert!(sum.iter().all(|&v| v == 1));
        }

        #[test]
        fn hole_ratio_complement(m in arb_mask(8)) {
            let lhs = m.reversed().hole_ratio();
            let rhs = 1.0 - m.hole_ratio();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn partition_of_unity((m, img) in arb_mask(6).prop_flat_map(|m| {
            let (h, w) = (m.height(), m.width());
            (Just(m), arb_image_for(h, w))
        })) {
            let visible = apply_mask(&img, &m).unwrap();
            let holes = apply_mask(&img, &m.reversed()).unwrap();
            let sum = visible.data() + holes.data();
            prop_assert_eq!(&sum, img.data());
        }

        #[test]
        fn composite_preserves_visible_pixels((m, g, p) in arb_mask(6).prop_flat_map(|m| {
            let (h, w) = (m.height(), m.width());
            (Just(m), arb_image_for(h, w), arb_image_for(h, w))
        })) {
            let out = composite(&g, &p, &m).unwrap();
            let lhs = apply_mask(&out, &m).unwrap();
            let rhs = apply_mask(&g, &m).unwrap();
            prop_assert_eq!(lhs.data(), rhs.data());
        }
    }
}
