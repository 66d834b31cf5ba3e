//! Circular 8-neighbor local binary patterns.
//!
//! Sample `k` of a pixel sits at angle `2*pi*k/8` (counter-clockwise from
//! east) and distance `R`; off-lattice positions are bilinearly interpolated.
//! Bit `k` is set when the sample is at least as bright as the center, so a
//! constant image codes every pixel as 255.

use crate::data::TextureImage;
use crate::error::{Error, Result};

use super::{DescriptorHistogram, DescriptorKind};

const NEIGHBORS: usize = 8;
/// Sample coordinates this close to a lattice point are snapped onto it, so
/// exact-lattice neighbors (e.g. at radius 1) do not pick up interpolation
/// dust that could flip a tie.
const SNAP: f64 = 1e-9;

/// 256-bin normalized LBP code histogram at the given radius. Pixels within
/// `ceil(radius)` of the border are excluded.
pub fn lbp_histogram(img: &TextureImage, radius: f64) -> Result<DescriptorHistogram> {
    if !(radius > 0.0) {
        return Err(Error::invalid_param("radius", "must be positive"));
    }
    let storage = img.to_storage();
    let y = &storage.pixels;
    let (h, w) = y.dim();
    let border = radius.ceil() as usize;
    if h <= 2 * border || w <= 2 * border {
        return Err(Error::invalid_param(
            "image",
            format!("needs more than {0}x{0} pixels for radius {radius}", 2 * border + 1),
        ));
    }

    let offsets: Vec<(f64, f64)> = (0..NEIGHBORS)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / NEIGHBORS as f64;
            // row axis points down, so a positive angle decreases the row
            (-radius * theta.sin(), radius * theta.cos())
        })
        .collect();

    let mut counts = vec![0.0f64; 1 << NEIGHBORS];
    for r in border..h - border {
        for c in border..w - border {
            let center = y[[r, c]];
            let mut code = 0usize;
            for (k, &(dr, dc)) in offsets.iter().enumerate() {
                let sample = sample_bilinear(y, r as f64 + dr, c as f64 + dc);
                if sample >= center {
                    code |= 1 << k;
                }
            }
            counts[code] += 1.0;
        }
    }

    Ok(DescriptorHistogram::from_masses(
        DescriptorKind::Lbp { radius },
        counts,
    ))
}

fn sample_bilinear(y: &ndarray::Array2<f64>, r: f64, c: f64) -> f64 {
    let (rr, rc) = (r.round(), c.round());
    let (r, c) = (
        if (r - rr).abs() < SNAP { rr } else { r },
        if (c - rc).abs() < SNAP { rc } else { c },
    );
    let r0 = r.floor() as usize;
    let c0 = c.floor() as usize;
    let fr = r - r0 as f64;
    let fc = c - c0 as f64;
    if fr == 0.0 && fc == 0.0 {
        return y[[r0, c0]];
    }
    let r1 = r0 + 1;
    let c1 = c0 + 1;
    (1.0 - fr) * (1.0 - fc) * y[[r0, c0]]
        + (1.0 - fr) * fc * y[[r0, c1]]
        + fr * (1.0 - fc) * y[[r1, c0]]
        + fr * fc * y[[r1, c1]]
}
