//! Facies connectivity (cluster) function: the probability that two pixels of
//! the same class at a given lag along an axis belong to the same connected
//! component.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::TextureImage;
use crate::error::{Error, Result};

/// Binary class labels derived from a continuous image.
#[derive(Debug, Clone)]
pub struct BinaryFacies {
    /// Grid of `{0,1}` labels.
    pub labels: Array2<u8>,
    /// Model-space threshold that produced the labels, kept for provenance.
    pub threshold: f64,
}

/// Neighborhood structure for component labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64)] {
        match self {
            Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Connectivity::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }
}

/// Lag direction. `X` walks along columns (horizontal), `Y` along rows
/// (vertical).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis2 {
    X,
    Y,
}

/// Per-facies, per-axis connectivity probabilities indexed by lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityCurve {
    pub facies: u8,
    pub axis: Axis2,
    /// Lags `1..=max_lag`, parallel to `probabilities` and `pair_counts`.
    pub lags: Vec<usize>,
    /// `None` where no same-facies pair exists at that lag (undefined, not 0).
    pub probabilities: Vec<Option<f64>>,
    /// Number of same-facies pairs found at each lag (the denominator).
    pub pair_counts: Vec<u64>,
}

/// Thresholds a model-space image at the midpoint of `[-1,1]`: label 1 where
/// pixel > 0, else 0 (ties go to 0).
pub fn binarize(img: &TextureImage) -> BinaryFacies {
    binarize_with_threshold(img, 0.0)
}

/// Same as [`binarize`] with an explicit model-space threshold.
pub fn binarize_with_threshold(img: &TextureImage, threshold: f64) -> BinaryFacies {
    let model = img.to_model();
    BinaryFacies {
        labels: model.pixels.mapv(|v| u8::from(v > threshold)),
        threshold,
    }
}

/// Labels connected components of the pixels equal to `facies`.
/// Returns a grid where `u32::MAX` marks non-facies pixels and every facies
/// pixel carries its component id.
fn label_components(labels: &Array2<u8>, facies: u8, connectivity: Connectivity) -> Array2<u32> {
    let (h, w) = labels.dim();
    let mut comp = Array2::from_elem((h, w), u32::MAX);
    let mut next = 0u32;
    let mut queue = std::collections::VecDeque::new();

    for r in 0..h {
        for c in 0..w {
            if labels[[r, c]] != facies || comp[[r, c]] != u32::MAX {
                continue;
            }
            comp[[r, c]] = next;
            queue.push_back((r, c));
            while let Some((qr, qc)) = queue.pop_front() {
                for &(dr, dc) in connectivity.offsets() {
                    let nr = qr as i64 + dr;
                    let nc = qc as i64 + dc;
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let (nr, nc) = (nr as usize, nc as usize);
                    if labels[[nr, nc]] == facies && comp[[nr, nc]] == u32::MAX {
                        comp[[nr, nc]] = next;
                        queue.push_back((nr, nc));
                    }
                }
            }
            next += 1;
        }
    }
    comp
}

/// Computes the connectivity curve for one facies along one axis for lags
/// `1..=max_lag`.
///
/// For each lag `h`, the probability is
/// `#(same-facies pairs at lag h in the same component) / #(same-facies pairs
/// at lag h)`; lags with no same-facies pair are reported as undefined. An
/// absent facies therefore yields a curve of undefined entries, not an error.
pub fn connectivity_function(
    fac: &BinaryFacies,
    facies: u8,
    axis: Axis2,
    max_lag: usize,
    connectivity: Connectivity,
) -> Result<ConnectivityCurve> {
    let (height, width) = fac.labels.dim();
    let extent = match axis {
        Axis2::X => width,
        Axis2::Y => height,
    };
    if max_lag == 0 {
        return Err(Error::invalid_param("max_lag", "must be >= 1"));
    }
    if max_lag >= extent {
        return Err(Error::invalid_param(
            "max_lag",
            format!("lag {max_lag} must be smaller than the {extent}-pixel extent along the axis"),
        ));
    }

    let comp = label_components(&fac.labels, facies, connectivity);
    let mut lags = Vec::with_capacity(max_lag);
    let mut probabilities = Vec::with_capacity(max_lag);
    let mut pair_counts = Vec::with_capacity(max_lag);

    for lag in 1..=max_lag {
        let mut pairs = 0u64;
        let mut connected = 0u64;
        match axis {
            Axis2::X => {
                for r in 0..height {
                    for c in 0..width - lag {
                        if fac.labels[[r, c]] == facies && fac.labels[[r, c + lag]] == facies {
                            pairs += 1;
                            if comp[[r, c]] == comp[[r, c + lag]] {
                                connected += 1;
                            }
                        }
                    }
                }
            }
            Axis2::Y => {
                for r in 0..height - lag {
                    for c in 0..width {
                        if fac.labels[[r, c]] == facies && fac.labels[[r + lag, c]] == facies {
                            pairs += 1;
                            if comp[[r, c]] == comp[[r + lag, c]] {
                                connected += 1;
                            }
                        }
                    }
                }
            }
        }
        lags.push(lag);
        pair_counts.push(pairs);
        probabilities.push(if pairs == 0 {
            None
        } else {
            Some(connected as f64 / pairs as f64)
        });
    }

    Ok(ConnectivityCurve {
        facies,
        axis,
        lags,
        probabilities,
        pair_counts,
    })
}
