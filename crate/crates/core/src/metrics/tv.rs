//! Total variation as a per-pixel mean over storage-space values.

use serde::{Deserialize, Serialize};

use crate::data::TextureImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvVariant {
    /// `sqrt(dv^2 + dh^2)` per pixel.
    Isotropic,
    /// `|dv| + |dh|` per pixel.
    Anisotropic,
}

/// Mean-per-pixel total variation of an image, computed on `[0,1]` storage
/// values with forward differences; differences that would leave the grid
/// count as zero.
pub fn total_variation(img: &TextureImage, variant: TvVariant) -> Result<f64> {
    let storage = img.to_storage();
    let y = &storage.pixels;
    let (h, w) = y.dim();
    if h < 2 || w < 2 {
        return Err(Error::invalid_param(
            "image",
            "total variation needs at least a 2x2 image",
        ));
    }

    let mut sum = 0.0;
    for i in 0..h {
        for j in 0..w {
            let dv = if i + 1 < h { y[[i + 1, j]] - y[[i, j]] } else { 0.0 };
            let dh = if j + 1 < w { y[[i, j + 1]] - y[[i, j]] } else { 0.0 };
            sum += match variant {
                TvVariant::Isotropic => (dv * dv + dh * dh).sqrt(),
                TvVariant::Anisotropic => dv.abs() + dh.abs(),
            };
        }
    }
    Ok(sum / (h * w) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ValueSpace;
    use ndarray::{arr2, Array2};
    use proptest::prelude::*;

    #[test]
    fn constant_image_has_zero_tv() {
        let img = TextureImage::new(Array2::from_elem((4, 4), 0.3), ValueSpace::Storage);
        assert_eq!(total_variation(&img, TvVariant::Isotropic).unwrap(), 0.0);
        assert_eq!(total_variation(&img, TvVariant::Anisotropic).unwrap(), 0.0);
    }

    #[test]
    fn checkerboard_anisotropic_is_one() {
        let img = TextureImage::new(arr2(&[[0.0, 1.0], [1.0, 0.0]]), ValueSpace::Storage);
        let tv = total_variation(&img, TvVariant::Anisotropic).unwrap();
        assert!((tv - 1.0).abs() < 1e-12, "{tv}");
    }

    #[test]
    fn checkerboard_isotropic_hand_value() {
        // contributions: (sqrt(2) + 1 + 1 + 0) / 4
        let img = TextureImage::new(arr2(&[[0.0, 1.0], [1.0, 0.0]]), ValueSpace::Storage);
        let tv = total_variation(&img, TvVariant::Isotropic).unwrap();
        let expected = (std::f64::consts::SQRT_2 + 2.0) / 4.0;
        assert!((tv - expected).abs() < 1e-12, "{tv}");
    }

    #[test]
    fn model_space_input_is_converted_to_storage() {
        // model -1/+1 checkerboard == storage 0/1 checkerboard
        let img = TextureImage::new(arr2(&[[-1.0, 1.0], [1.0, -1.0]]), ValueSpace::Model);
        let tv = total_variation(&img, TvVariant::Anisotropic).unwrap();
        assert!((tv - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_small_image_rejected() {
        let img = TextureImage::new(Array2::zeros((1, 5)), ValueSpace::Storage);
        assert!(total_variation(&img, TvVariant::Isotropic).is_err());
    }

    proptest! {
        #[test]
        fn isotropic_never_exceeds_anisotropic(
            vals in proptest::collection::vec(0.0f64..1.0, 36)
        ) {
            let img = TextureImage::new(
                Array2::from_shape_vec((6, 6), vals).unwrap(),
                ValueSpace::Storage,
            );
            let iso = total_variation(&img, TvVariant::Isotropic).unwrap();
            let aniso = total_variation(&img, TvVariant::Anisotropic).unwrap();
            prop_assert!(iso >= 0.0);
            prop_assert!(iso <= aniso + 1e-12);
        }
    }
}
