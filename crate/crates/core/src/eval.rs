//! Real-vs-synthetic comparison: runs every metric over two image sets and
//! aggregates them into a machine-readable report plus plot-ready CSV files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TextureImage;
use crate::error::{Error, Result};
use crate::metrics::{
    binarize_with_threshold, chi2_distance, connectivity_function, hog_histogram, lbp_histogram,
    total_variation, Axis2, Connectivity, ConnectivityCurve, DescriptorHistogram, DescriptorKind,
    HogConfig, TvVariant,
};

pub const REPORT_VERSION: u32 = 1;

/// Metric parameters for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Largest connectivity lag; clamped to the image extent minus one.
    pub max_lag: usize,
    pub lbp_radii: Vec<f64>,
    pub hog: HogConfig,
    pub connectivity: Connectivity,
    /// Model-space binarization threshold.
    pub threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            max_lag: 64,
            lbp_radii: vec![1.0, 2.0],
            hog: HogConfig::default(),
            connectivity: Connectivity::Four,
            threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvSetStats {
    pub isotropic_mean: f64,
    pub isotropic_std: f64,
    pub anisotropic_mean: f64,
    pub anisotropic_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chi2Entry {
    pub kind: DescriptorKind,
    /// Distance between the pooled (mean) real histogram and the pooled
    /// synthetic histogram.
    pub distance: f64,
}

/// One per-image connectivity curve tagged with its image index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub image_id: usize,
    pub curve: ConnectivityCurve,
}

/// Min/max band of a curve family at each lag (over defined entries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCurve {
    pub facies: u8,
    pub axis: Axis2,
    pub lags: Vec<usize>,
    pub min: Vec<Option<f64>>,
    pub max: Vec<Option<f64>>,
}

/// Lag-wise arithmetic mean of a curve family, over images that have pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCurve {
    pub facies: u8,
    pub axis: Axis2,
    pub lags: Vec<usize>,
    pub mean: Vec<Option<f64>>,
    /// How many images contributed at each lag.
    pub contributing: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivitySection {
    pub real: Vec<CurveRecord>,
    pub synthetic: Vec<CurveRecord>,
    pub real_envelope: Vec<EnvelopeCurve>,
    pub real_mean: Vec<MeanCurve>,
    pub synthetic_mean: Vec<MeanCurve>,
}

/// Aggregate comparison of a real and a synthetic image set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    pub config: MetricsConfig,
    pub checkpoint_id: Option<String>,
    pub real_count: usize,
    pub synthetic_count: usize,
    pub tv_real: TvSetStats,
    pub tv_synthetic: TvSetStats,
    pub chi2: Vec<Chi2Entry>,
    pub connectivity: ConnectivitySection,
}

struct PerImage {
    tv_iso: f64,
    tv_aniso: f64,
    lbp: Vec<DescriptorHistogram>,
    hog: DescriptorHistogram,
    curves: Vec<ConnectivityCurve>,
}

fn eval_image(img: &TextureImage, config: &MetricsConfig, max_lag: usize) -> Result<PerImage> {
    let facies = binarize_with_threshold(img, config.threshold);
    let mut curves = Vec::with_capacity(4);
    for f in [0u8, 1] {
        for axis in [Axis2::X, Axis2::Y] {
            curves.push(connectivity_function(
                &facies,
                f,
                axis,
                max_lag,
                config.connectivity,
            )?);
        }
    }
    Ok(PerImage {
        tv_iso: total_variation(img, TvVariant::Isotropic)?,
        tv_aniso: total_variation(img, TvVariant::Anisotropic)?,
        lbp: config
            .lbp_radii
            .iter()
            .map(|&r| lbp_histogram(img, r))
            .collect::<Result<_>>()?,
        hog: hog_histogram(img, &config.hog)?,
        curves,
    })
}

fn tv_stats(per: &[PerImage]) -> TvSetStats {
    let n = per.len() as f64;
    let mean = |vals: &dyn Fn(&PerImage) -> f64| per.iter().map(|p| vals(p)).sum::<f64>() / n;
    let std = |vals: &dyn Fn(&PerImage) -> f64, mu: f64| {
        (per.iter().map(|p| (vals(p) - mu).powi(2)).sum::<f64>() / n).sqrt()
    };
    let iso = mean(&|p: &PerImage| p.tv_iso);
    let aniso = mean(&|p: &PerImage| p.tv_aniso);
    TvSetStats {
        isotropic_mean: iso,
        isotropic_std: std(&|p: &PerImage| p.tv_iso, iso),
        anisotropic_mean: aniso,
        anisotropic_std: std(&|p: &PerImage| p.tv_aniso, aniso),
    }
}

fn envelope(curves: &[&ConnectivityCurve]) -> EnvelopeCurve {
    let first = curves[0];
    let lag_count = first.lags.len();
    let mut min = vec![None; lag_count];
    let mut max = vec![None; lag_count];
    for curve in curves {
        for (i, p) in curve.probabilities.iter().enumerate() {
            if let Some(p) = p {
                min[i] = Some(min[i].map_or(*p, |m: f64| m.min(*p)));
                max[i] = Some(max[i].map_or(*p, |m: f64| m.max(*p)));
            }
        }
    }
    EnvelopeCurve {
        facies: first.facies,
        axis: first.axis,
        lags: first.lags.clone(),
        min,
        max,
    }
}

fn mean_curve(curves: &[&ConnectivityCurve]) -> MeanCurve {
    let first = curves[0];
    let lag_count = first.lags.len();
    let mut sums = vec![0.0f64; lag_count];
    let mut counts = vec![0usize; lag_count];
    for curve in curves {
        for (i, p) in curve.probabilities.iter().enumerate() {
            if let Some(p) = p {
                sums[i] += p;
                counts[i] += 1;
            }
        }
    }
    MeanCurve {
        facies: first.facies,
        axis: first.axis,
        lags: first.lags.clone(),
        mean: sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| if c > 0 { Some(s / c as f64) } else { None })
            .collect(),
        contributing: counts,
    }
}

/// Runs every metric on both sets and aggregates.
///
/// All images must share one spatial size. The connectivity lag range is
/// `1..=min(config.max_lag, extent-1)`. The χ² distances compare the pooled
/// (per-set mean) descriptor histograms, so comparing a set against itself
/// yields exactly zero.
pub fn evaluate(
    real: &[TextureImage],
    synthetic: &[TextureImage],
    config: &MetricsConfig,
    checkpoint_id: Option<String>,
) -> Result<MetricsReport> {
    if real.is_empty() || synthetic.is_empty() {
        return Err(Error::invalid_param(
            "image sets",
            "both sets must be nonempty",
        ));
    }
    let dims = (real[0].height(), real[0].width());
    for img in real.iter().chain(synthetic) {
        if (img.height(), img.width()) != dims {
            return Err(Error::ShapeMismatch {
                context: "evaluation set".into(),
                expected: format!("{}x{}", dims.0, dims.1),
                got: format!("{}x{}", img.height(), img.width()),
            });
        }
    }
    let max_lag = config.max_lag.min(dims.0.min(dims.1) - 1).max(1);

    let real_metrics: Vec<PerImage> = real
        .par_iter()
        .map(|img| eval_image(img, config, max_lag))
        .collect::<Result<_>>()?;
    let synthetic_metrics: Vec<PerImage> = synthetic
        .par_iter()
        .map(|img| eval_image(img, config, max_lag))
        .collect::<Result<_>>()?;

    // pooled descriptor histograms per kind
    let mut chi2 = Vec::new();
    for (ri, _) in config.lbp_radii.iter().enumerate() {
        let real_h: Vec<DescriptorHistogram> =
            real_metrics.iter().map(|p| p.lbp[ri].clone()).collect();
        let synth_h: Vec<DescriptorHistogram> = synthetic_metrics
            .iter()
            .map(|p| p.lbp[ri].clone())
            .collect();
        let pooled_real = DescriptorHistogram::mean(&real_h)?;
        let pooled_synth = DescriptorHistogram::mean(&synth_h)?;
        chi2.push(Chi2Entry {
            kind: pooled_real.kind,
            distance: chi2_distance(&pooled_synth, &pooled_real)?,
        });
    }
    {
        let real_h: Vec<DescriptorHistogram> =
            real_metrics.iter().map(|p| p.hog.clone()).collect();
        let synth_h: Vec<DescriptorHistogram> = synthetic_metrics
            .iter()
            .map(|p| p.hog.clone())
            .collect();
        chi2.push(Chi2Entry {
            kind: DescriptorKind::Hog,
            distance: chi2_distance(
                &DescriptorHistogram::mean(&synth_h)?,
                &DescriptorHistogram::mean(&real_h)?,
            )?,
        });
    }

    // connectivity aggregation per (facies, axis) family
    let families = 4usize; // facies {0,1} x axis {X,Y}, as emitted by eval_image
    let mut real_envelope = Vec::with_capacity(families);
    let mut real_mean = Vec::with_capacity(families);
    let mut synthetic_mean = Vec::with_capacity(families);
    for fam in 0..families {
        let real_fam: Vec<&ConnectivityCurve> =
            real_metrics.iter().map(|p| &p.curves[fam]).collect();
        let synth_fam: Vec<&ConnectivityCurve> =
            synthetic_metrics.iter().map(|p| &p.curves[fam]).collect();
        real_envelope.push(envelope(&real_fam));
        real_mean.push(mean_curve(&real_fam));
        synthetic_mean.push(mean_curve(&synth_fam));
    }

    let collect_records = |metrics: &[PerImage]| -> Vec<CurveRecord> {
        metrics
            .iter()
            .enumerate()
            .flat_map(|(id, p)| {
                p.curves.iter().map(move |c| CurveRecord {
                    image_id: id,
                    curve: c.clone(),
                })
            })
            .collect()
    };

    Ok(MetricsReport {
        version: REPORT_VERSION,
        config: config.clone(),
        checkpoint_id,
        real_count: real.len(),
        synthetic_count: synthetic.len(),
        tv_real: tv_stats(&real_metrics),
        tv_synthetic: tv_stats(&synthetic_metrics),
        chi2,
        connectivity: ConnectivitySection {
            real: collect_records(&real_metrics),
            synthetic: collect_records(&synthetic_metrics),
            real_envelope,
            real_mean,
            synthetic_mean,
        },
    })
}

fn axis_name(axis: Axis2) -> &'static str {
    match axis {
        Axis2::X => "x",
        Axis2::Y => "y",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes `report.json` plus plot-ready connectivity CSV files into `dir`.
/// Returns the paths written.
pub fn emit_report(report: &MetricsReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    written.push(json_path);

    for (name, records) in [
        ("connectivity_real.csv", &report.connectivity.real),
        ("connectivity_synthetic.csv", &report.connectivity.synthetic),
    ] {
        let mut csv = String::from("facies,axis,lag,probability,pair_count,image_id\n");
        for rec in records {
            for ((lag, p), count) in rec
                .curve
                .lags
                .iter()
                .zip(&rec.curve.probabilities)
                .zip(&rec.curve.pair_counts)
            {
                writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    rec.curve.facies,
                    axis_name(rec.curve.axis),
                    lag,
                    opt(*p),
                    count,
                    rec.image_id
                )
                .expect("string write");
            }
        }
        let path = dir.join(name);
        std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    let mut csv = String::from("facies,axis,lag,min,max\n");
    for env in &report.connectivity.real_envelope {
        for ((lag, lo), hi) in env.lags.iter().zip(&env.min).zip(&env.max) {
            writeln!(
                csv,
                "{},{},{},{},{}",
                env.facies,
                axis_name(env.axis),
                lag,
                opt(*lo),
                opt(*hi)
            )
            .expect("string write");
        }
    }
    let path = dir.join("connectivity_real_envelope.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    for (name, means) in [
        ("connectivity_real_mean.csv", &report.connectivity.real_mean),
        (
            "connectivity_synthetic_mean.csv",
            &report.connectivity.synthetic_mean,
        ),
    ] {
        let mut csv = String::from("facies,axis,lag,probability,contributing_images\n");
        for mc in means {
            for ((lag, p), n) in mc.lags.iter().zip(&mc.mean).zip(&mc.contributing) {
                writeln!(
                    csv,
                    "{},{},{},{},{}",
                    mc.facies,
                    axis_name(mc.axis),
                    lag,
                    opt(*p),
                    n
                )
                .expect("string write");
            }
        }
        let path = dir.join(name);
        std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    Ok(written)
}

/// Parses a report emitted by [`emit_report`].
pub fn load_report(path: impl AsRef<Path>) -> Result<MetricsReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Two-column summary of one report: real first, then synthetic.
pub fn summary_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    writeln!(out, "{:<14} {:>14} {:>14}", "metric", "real", "synthetic").unwrap();
    writeln!(
        out,
        "{:<14} {:>14.6e} {:>14.6e}",
        "tv_isotropic", report.tv_real.isotropic_mean, report.tv_synthetic.isotropic_mean
    )
    .unwrap();
    writeln!(
        out,
        "{:<14} {:>14.6e} {:>14.6e}",
        "tv_anisotropic", report.tv_real.anisotropic_mean, report.tv_synthetic.anisotropic_mean
    )
    .unwrap();
    for entry in &report.chi2 {
        let name = match entry.kind {
            DescriptorKind::Lbp { radius } => format!("chi2_lbp_r{radius}"),
            DescriptorKind::Hog => "chi2_hog".to_string(),
        };
        writeln!(out, "{name:<14} {:>14} {:>14.6e}", "-", entry.distance).unwrap();
    }
    out
}

/// Side-by-side table of the scalar metrics of two runs, real-data column
/// first (taken from run A; a differing real column in run B is flagged).
pub fn compare_runs(a: &MetricsReport, b: &MetricsReport, label_a: &str, label_b: &str) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<14} {:>14} {:>14} {:>14}",
        "metric", "real", label_a, label_b
    )
    .unwrap();
    let rows = [
        (
            "tv_isotropic",
            a.tv_real.isotropic_mean,
            a.tv_synthetic.isotropic_mean,
            b.tv_synthetic.isotropic_mean,
        ),
        (
            "tv_anisotropic",
            a.tv_real.anisotropic_mean,
            a.tv_synthetic.anisotropic_mean,
            b.tv_synthetic.anisotropic_mean,
        ),
    ];
    for (name, real, sa, sb) in rows {
        writeln!(out, "{name:<14} {real:>14.6e} {sa:>14.6e} {sb:>14.6e}").unwrap();
    }
    for entry in &a.chi2 {
        let name = match entry.kind {
            DescriptorKind::Lbp { radius } => format!("chi2_lbp_r{radius}"),
            DescriptorKind::Hog => "chi2_hog".to_string(),
        };
        let other = b
            .chi2
            .iter()
            .find(|e| e.kind == entry.kind)
            .map_or(f64::NAN, |e| e.distance);
        writeln!(
            out,
            "{name:<14} {:>14} {:>14.6e} {other:>14.6e}",
            "-", entry.distance
        )
        .unwrap();
    }
    if (a.tv_real.isotropic_mean - b.tv_real.isotropic_mean).abs() > 1e-12 {
        writeln!(
            out,
            "note: run {label_b} was evaluated against a different real set"
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        make_toy_texture, StripeOrientation, ToyParams, ToyTextureKind, ValueSpace,
    };
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stripe_set(n: usize, size: usize) -> Vec<TextureImage> {
        (0..n)
            .map(|i| {
                let toy = make_toy_texture(
                    ToyTextureKind::Stripes,
                    size,
                    size,
                    &ToyParams {
                        band_width: 6 + 2 * (i % 3),
                        orientation: StripeOrientation::Vertical,
                        band_count: 0,
                    },
                    0,
                )
                .unwrap();
                TextureImage::new(toy.pixels, ValueSpace::Storage).to_model()
            })
            .collect()
    }

    fn noise_set(n: usize, size: usize, seed: u64) -> Vec<TextureImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                TextureImage::new(
                    Array2::from_shape_fn((size, size), |_| rng.random_range(-1.0..1.0)),
                    ValueSpace::Model,
                )
            })
            .collect()
    }

    fn small_config() -> MetricsConfig {
        MetricsConfig {
            max_lag: 8,
            ..MetricsConfig::default()
        }
    }

    #[test]
    fn self_comparison_is_the_identity() {
        let set = stripe_set(4, 24);
        let report = evaluate(&set, &set, &small_config(), None).unwrap();
        for entry in &report.chi2 {
            assert!(entry.distance.abs() < 1e-9, "{:?}", entry);
        }
        assert_eq!(report.tv_real, report.tv_synthetic);
    }

    #[test]
    fn noise_has_much_higher_tv_than_stripes() {
        let real = stripe_set(4, 24);
        let synth = noise_set(4, 24, 3);
        let report = evaluate(&real, &synth, &small_config(), None).unwrap();
        assert!(
            report.tv_synthetic.anisotropic_mean > 4.0 * report.tv_real.anisotropic_mean,
            "{:?} vs {:?}",
            report.tv_synthetic,
            report.tv_real
        );
    }

    #[test]
    fn envelope_contains_every_real_curve_and_mean() {
        let real = noise_set(5, 16, 1);
        let synth = noise_set(3, 16, 2);
        let report = evaluate(&real, &synth, &small_config(), None).unwrap();
        for (fam, env) in report.connectivity.real_envelope.iter().enumerate() {
            for rec in report
                .connectivity
                .real
                .iter()
                .filter(|r| r.curve.facies == env.facies && r.curve.axis == env.axis)
            {
                for (i, p) in rec.curve.probabilities.iter().enumerate() {
                    if let Some(p) = p {
                        assert!(env.min[i].unwrap() <= *p + 1e-12);
                        assert!(env.max[i].unwrap() >= *p - 1e-12);
                    }
                }
            }
            let mean = &report.connectivity.real_mean[fam];
            for (i, m) in mean.mean.iter().enumerate() {
                if let Some(m) = m {
                    assert!(env.min[i].unwrap() <= *m + 1e-12);
                    assert!(env.max[i].unwrap() >= *m - 1e-12);
                }
            }
        }
    }

    #[test]
    fn synthetic_mean_is_arithmetic_mean_where_all_defined() {
        let real = stripe_set(2, 16);
        let synth = noise_set(4, 16, 7);
        let report = evaluate(&real, &synth, &small_config(), None).unwrap();
        for (fam, mc) in report.connectivity.synthetic_mean.iter().enumerate() {
            let curves: Vec<_> = report
                .connectivity
                .synthetic
                .iter()
                .filter(|r| {
                    r.curve.facies == mc.facies && r.curve.axis == mc.axis
                })
                .collect();
            assert_eq!(curves.len(), 4, "family {fam}");
            for (i, m) in mc.mean.iter().enumerate() {
                let defined: Vec<f64> = curves
                    .iter()
                    .filter_map(|r| r.curve.probabilities[i])
                    .collect();
                if defined.len() == curves.len() {
                    let expect = defined.iter().sum::<f64>() / defined.len() as f64;
                    assert!((m.unwrap() - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn report_round_trips_every_number() {
        let real = stripe_set(3, 16);
        let synth = noise_set(3, 16, 5);
        let report = evaluate(&real, &synth, &small_config(), Some("ck-test".into())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&report, dir.path()).unwrap();
        assert!(files.iter().any(|p| p.ends_with("report.json")));
        let back = load_report(dir.path().join("report.json")).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let a = stripe_set(2, 16);
        let b = stripe_set(2, 24);
        assert!(evaluate(&a, &b, &small_config(), None).is_err());
        assert!(evaluate(&[], &a, &small_config(), None).is_err());
    }

    #[test]
    fn compare_runs_formats_table() {
        let real = stripe_set(3, 16);
        let synth = noise_set(3, 16, 5);
        let report_a = evaluate(&real, &synth, &small_config(), None).unwrap();
        let report_b = evaluate(&real, &real, &small_config(), None).unwrap();
        let table = compare_runs(&report_a, &report_b, "run_a", "run_b");
        assert!(table.contains("real"));
        assert!(table.contains("tv_isotropic"));
        assert!(table.contains("chi2_lbp_r1"));
        assert!(table.contains("chi2_hog"));
        let first = table.lines().next().unwrap();
        let cols: Vec<&str> = first.split_whitespace().collect();
        assert_eq!(cols, vec!["metric", "real", "run_a", "run_b"]);
    }
}
