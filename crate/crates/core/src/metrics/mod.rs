//! Evaluation metrics: facies connectivity, total variation, and the LBP /
//! HOG descriptor histograms compared through the χ² distance.

mod connectivity;
mod hog;
mod lbp;
mod tv;

pub use connectivity::{
    binarize, binarize_with_threshold, connectivity_function, Axis2, BinaryFacies, Connectivity,
    ConnectivityCurve,
};
pub use hog::{hog_histogram, HogConfig};
pub use lbp::lbp_histogram;
pub use tv::{total_variation, TvVariant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which descriptor a histogram was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorKind {
    /// Circular 8-neighbor local binary patterns at the given radius.
    Lbp { radius: f64 },
    /// Orientation-binned gradient histogram.
    Hog,
}

/// Normalized descriptor histogram (nonnegative, sums to 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorHistogram {
    pub kind: DescriptorKind,
    pub bins: Vec<f64>,
}

impl DescriptorHistogram {
    /// Normalizes raw bin masses into a probability histogram.
    pub(crate) fn from_masses(kind: DescriptorKind, masses: Vec<f64>) -> Self {
        let total: f64 = masses.iter().sum();
        let n = masses.len() as f64;
        let bins = if total <= 0.0 {
            // degenerate input (e.g. constant image in HOG): uniform by convention
            masses.iter().map(|_| 1.0 / n).collect()
        } else {
            masses.iter().map(|m| m / total).collect()
        };
        DescriptorHistogram { kind, bins }
    }

    /// Arithmetic mean of several same-kind histograms (itself normalized).
    pub fn mean(histograms: &[DescriptorHistogram]) -> Result<DescriptorHistogram> {
        let first = histograms
            .first()
            .ok_or_else(|| Error::invalid_param("histograms", "empty set"))?;
        let mut bins = vec![0.0; first.bins.len()];
        for h in histograms {
            if h.kind != first.kind || h.bins.len() != bins.len() {
                return Err(Error::invalid_param(
                    "histograms",
                    "mixed kinds or bin counts in mean",
                ));
            }
            for (acc, v) in bins.iter_mut().zip(&h.bins) {
                *acc += v;
            }
        }
        let n = histograms.len() as f64;
        bins.iter_mut().for_each(|v| *v /= n);
        Ok(DescriptorHistogram {
            kind: first.kind,
            bins,
        })
    }
}

/// Symmetric χ² distance between two normalized histograms:
/// `0.5 * sum_i (p_i - q_i)^2 / (p_i + q_i + eps)`.
pub fn chi2_distance(p: &DescriptorHistogram, q: &DescriptorHistogram) -> Result<f64> {
    if p.kind != q.kind || p.bins.len() != q.bins.len() {
        return Err(Error::invalid_param(
            "histograms",
            "chi2 distance needs matching kind and bin count",
        ));
    }
    const EPS: f64 = 1e-10;
    Ok(p.bins
        .iter()
        .zip(&q.bins)
        .map(|(&a, &b)| {
            let d = a - b;
            0.5 * d * d / (a + b + EPS)
        })
        .sum())
}
