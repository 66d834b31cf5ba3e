//! Histogram of oriented gradients, reduced to a single orientation
//! histogram per image for distribution comparison (no sliding-block
//! normalization).

use serde::{Deserialize, Serialize};

use crate::data::TextureImage;
use crate::error::{Error, Result};

use super::{DescriptorHistogram, DescriptorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HogConfig {
    pub cell: (usize, usize),
    pub bins: usize,
}

impl Default for HogConfig {
    fn default() -> Self {
        HogConfig {
            cell: (8, 8),
            bins: 9,
        }
    }
}

const NORM_EPS: f64 = 1e-6;

/// Orientation histogram of an image: central-difference gradients (borders
/// replicated), unsigned orientation in `[0, 180)` binned by gradient
/// magnitude, per-cell L2 normalization, then a cell average renormalized to
/// sum 1. A gradient-free image yields the uniform histogram by convention.
pub fn hog_histogram(img: &TextureImage, config: &HogConfig) -> Result<DescriptorHistogram> {
    let (cell_h, cell_w) = config.cell;
    if cell_h == 0 || cell_w == 0 || config.bins == 0 {
        return Err(Error::invalid_param("hog", "cell and bins must be >= 1"));
    }
    let storage = img.to_storage();
    let y = &storage.pixels;
    let (h, w) = y.dim();
    if h < cell_h || w < cell_w {
        return Err(Error::invalid_param(
            "image",
            format!("needs at least one {cell_h}x{cell_w} cell"),
        ));
    }

    // central differences with replicated borders
    let gx = |r: usize, c: usize| -> f64 {
        let right = y[[r, (c + 1).min(w - 1)]];
        let left = y[[r, c.saturating_sub(1)]];
        right - left
    };
    let gy = |r: usize, c: usize| -> f64 {
        let down = y[[(r + 1).min(h - 1), c]];
        let up = y[[r.saturating_sub(1), c]];
        down - up
    };

    let bins = config.bins;
    let bin_width = std::f64::consts::PI / bins as f64;
    let cells_y = h / cell_h;
    let cells_x = w / cell_w;

    let mut mean = vec![0.0f64; bins];
    for cy in 0..cells_y {
        for cx in 0..cells_x {
            let mut cell_hist = vec![0.0f64; bins];
            for r in cy * cell_h..(cy + 1) * cell_h {
                for c in cx * cell_w..(cx + 1) * cell_w {
                    let (dx, dy) = (gx(r, c), gy(r, c));
                    let magnitude = dx.hypot(dy);
                    if magnitude == 0.0 {
                        continue;
                    }
                    let mut theta = dy.atan2(dx);
                    if theta < 0.0 {
                        theta += std::f64::consts::PI;
                    }
                    if theta >= std::f64::consts::PI {
                        theta = 0.0;
                    }
                    let bin = ((theta / bin_width) as usize).min(bins - 1);
                    cell_hist[bin] += magnitude;
                }
            }
            let norm = (cell_hist.iter().map(|v| v * v).sum::<f64>() + NORM_EPS * NORM_EPS).sqrt();
            for (m, v) in mean.iter_mut().zip(&cell_hist) {
                *m += v / norm;
            }
        }
    }

    Ok(DescriptorHistogram::from_masses(DescriptorKind::Hog, mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ValueSpace;
    use ndarray::Array2;

    #[test]
    fn constant_image_gives_uniform_histogram() {
        let img = TextureImage::new(Array2::from_elem((16, 16), 0.7), ValueSpace::Storage);
        let hist = hog_histogram(&img, &HogConfig::default()).unwrap();
        for &v in &hist.bins {
            assert!((v - 1.0 / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vertical_step_edge_concentrates_in_horizontal_gradient_bin() {
        // left half 0, right half 1: gy == 0 everywhere, gx >= 0, so every
        // contributing pixel has orientation atan2(0, gx) = 0 -> bin 0
        let img = TextureImage::new(
            Array2::from_shape_fn((16, 16), |(_, c)| if c < 8 { 0.0 } else { 1.0 }),
            ValueSpace::Storage,
        );
        let hist = hog_histogram(&img, &HogConfig::default()).unwrap();
        assert!(hist.bins[0] > 0.999, "{:?}", hist.bins);
    }

    #[test]
    fn histogram_sums_to_one() {
        let img = TextureImage::new(
            Array2::from_shape_fn((24, 24), |(r, c)| ((r * 7 + c * 3) % 11) as f64 / 10.0),
            ValueSpace::Storage,
        );
        let hist = hog_histogram(&img, &HogConfig::default()).unwrap();
        let sum: f64 = hist.bins.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert_eq!(hist.bins.len(), 9);
    }

    #[test]
    fn image_smaller_than_cell_rejected() {
        let img = TextureImage::new(Array2::zeros((4, 4)), ValueSpace::Storage);
        assert!(hog_histogram(&img, &HogConfig::default()).is_err());
    }

    #[test]
    fn translation_on_periodic_texture_changes_little() {
        use crate::data::{make_toy_texture, StripeOrientation, ToyParams, ToyTextureKind};
        let toy = make_toy_texture(
            ToyTextureKind::Stripes,
            64,
            64,
            &ToyParams {
                band_width: 4,
                orientation: StripeOrientation::Horizontal,
                band_count: 0,
            },
            0,
        )
        .unwrap();
        let base = TextureImage::new(toy.pixels.clone(), ValueSpace::Storage);
        let shifted = TextureImage::new(
            Array2::from_shape_fn((64, 64), |(r, c)| toy.pixels[[(r + 2) % 64, (c + 5) % 64]]),
            ValueSpace::Storage,
        );
        let a = hog_histogram(&base, &HogConfig::default()).unwrap();
        let b = hog_histogram(&shifted, &HogConfig::default()).unwrap();
        let l1: f64 = a.bins.iter().zip(&b.bins).map(|(x, y)| (x - y).abs()).sum();
        assert!(l1 < 0.02, "L1 shift sensitivity {l1}");
    }
}
