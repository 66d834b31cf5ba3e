//! Source images, patch sampling and procedural toy textures.
//!
//! Pixel values live in one of two spaces: `storage` ([0,1], what PNG files
//! hold after `v/255`) and `model` ([-1,1], what the networks consume and
//! produce). The two are related by the affine bijection
//! `v_model = 2*v_storage - 1`.

use std::path::Path;
use std::sync::mpsc;
use std::thread;

use image::{GrayImage, ImageReader};
use ndarray::{Array2, Array4, ArrayView2, s};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Value range a [`TextureImage`] is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ValueSpace {
    /// `[-1, 1]`, the network-facing range.
    Model,
    /// `[0, 1]`, the file-facing range.
    Storage,
}

/// Large ergodic training image, grayscale in `[0,1]`.
#[derive(Debug, Clone)]
pub struct SourceImage {
    pub pixels: Array2<f64>,
    /// Number of discrete classes present (2 for binary channel/matrix data).
    pub facies_count: usize,
}

impl SourceImage {
    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }
}

/// Single-channel 2D image with a declared value space.
#[derive(Debug, Clone)]
pub struct TextureImage {
    pub pixels: Array2<f64>,
    pub value_space: ValueSpace,
}

impl TextureImage {
    pub fn new(pixels: Array2<f64>, value_space: ValueSpace) -> Self {
        TextureImage {
            pixels,
            value_space,
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    /// Channel count. Fixed to 1; color/multi-channel data is out of scope.
    pub fn channels(&self) -> usize {
        1
    }

    /// Same image expressed in model space `[-1,1]`.
    pub fn to_model(&self) -> TextureImage {
        match self.value_space {
            ValueSpace::Model => self.clone(),
            ValueSpace::Storage => TextureImage::new(
                self.pixels.mapv(|v| 2.0 * v - 1.0),
                ValueSpace::Model,
            ),
        }
    }

    /// Same image expressed in storage space `[0,1]`.
    pub fn to_storage(&self) -> TextureImage {
        match self.value_space {
            ValueSpace::Model => TextureImage::new(
                self.pixels.mapv(|v| (v + 1.0) / 2.0),
                ValueSpace::Storage,
            ),
            ValueSpace::Storage => self.clone(),
        }
    }

    /// Quantizes to 8-bit and writes a grayscale PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let storage = self.to_storage();
        let (h, w) = (storage.height() as u32, storage.width() as u32);
        let mut img = GrayImage::new(w, h);
        for (y, row) in storage.pixels.outer_iter().enumerate() {
            for (x, &v) in row.iter().enumerate() {
                let q = (v * 255.0).round().clamp(0.0, 255.0) as u8;
                img.put_pixel(x as u32, y as u32, image::Luma([q]));
            }
        }
        img.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// Loads an 8-bit grayscale PNG and maps pixel values to `[0,1]` by `v/255`.
///
/// Anything else (color, 16-bit, non-PNG) is rejected rather than converted.
pub fn load_source(path: impl AsRef<Path>) -> Result<SourceImage> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;

    match reader.format() {
        Some(image::ImageFormat::Png) => {}
        other => {
            return Err(Error::UnsupportedImage {
                path: path.to_path_buf(),
                got: other.map_or_else(|| "unknown format".to_string(), |f| format!("{f:?}")),
            });
        }
    }

    let dynimg = reader.decode().map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;

    let gray = match dynimg {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::UnsupportedImage {
                path: path.to_path_buf(),
                got: format!("{:?} pixel layout", other.color()),
            });
        }
    };

    let (w, h) = gray.dimensions();
    let mut pixels = Array2::zeros((h as usize, w as usize));
    for (x, y, p) in gray.enumerate_pixels() {
        pixels[[y as usize, x as usize]] = p.0[0] as f64 / 255.0;
    }
    Ok(SourceImage {
        pixels,
        facies_count: 2,
    })
}

/// Loads a file as a model-space [`TextureImage`].
pub fn load_texture(path: impl AsRef<Path>) -> Result<TextureImage> {
    let src = load_source(path)?;
    Ok(TextureImage::new(src.pixels, ValueSpace::Storage).to_model())
}

/// Uniform sampler of square patches from a [`SourceImage`].
///
/// Patches are contiguous windows fully inside the source, sampled with
/// replacement; with a fixed seed the emitted sequence is deterministic.
pub struct PatchSampler {
    source: SourceImage,
    patch_size: usize,
    rng: ChaCha8Rng,
}

impl PatchSampler {
    pub fn new(source: SourceImage, patch_size: usize, rng_seed: u64) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::invalid_param("patch_size", "must be >= 1"));
        }
        if source.height() < patch_size || source.width() < patch_size {
            return Err(Error::PatchTooLarge {
                patch: patch_size,
                height: source.height(),
                width: source.width(),
            });
        }
        Ok(PatchSampler {
            source,
            patch_size,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn source(&self) -> &SourceImage {
        &self.source
    }

    /// Draws one patch and reports the top-left corner it was cut at.
    pub fn sample_patch_with_corner(&mut self) -> (TextureImage, (usize, usize)) {
        let max_r = self.source.height() - self.patch_size;
        let max_c = self.source.width() - self.patch_size;
        let r = self.rng.random_range(0..=max_r);
        let c = self.rng.random_range(0..=max_c);
        let window = self
            .source
            .pixels
            .slice(s![r..r + self.patch_size, c..c + self.patch_size]);
        let patch = TextureImage::new(window.mapv(|v| 2.0 * v - 1.0), ValueSpace::Model);
        (patch, (r, c))
    }

    /// Draws one model-space patch.
    pub fn sample_patch(&mut self) -> TextureImage {
        self.sample_patch_with_corner().0
    }

    /// Fills an NCHW batch tensor with `batch_size` fresh patches.
    pub fn sample_batch(&mut self, batch_size: usize) -> Array4<f64> {
        let ps = self.patch_size;
        let mut out = Array4::zeros((batch_size, 1, ps, ps));
        for n in 0..batch_size {
            let patch = self.sample_patch();
            out.slice_mut(s![n, 0, .., ..]).assign(&patch.pixels);
        }
        out
    }

    /// Current RNG word position, for exact resume.
    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_rng_word_pos(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }
}

/// Infinite stream of NCHW batches drawn from a sampler.
pub struct BatchStream {
    sampler: PatchSampler,
    batch_size: usize,
}

/// Wraps a sampler into an endless batch iterator (sampling with replacement).
pub fn batch_iterator(sampler: PatchSampler, batch_size: usize) -> Result<BatchStream> {
    if batch_size == 0 {
        return Err(Error::invalid_param("batch_size", "must be >= 1"));
    }
    Ok(BatchStream {
        sampler,
        batch_size,
    })
}

impl Iterator for BatchStream {
    type Item = Array4<f64>;

    fn next(&mut self) -> Option<Array4<f64>> {
        Some(self.sampler.sample_batch(self.batch_size))
    }
}

impl BatchStream {
    /// Moves production onto a background thread with a bounded queue.
    ///
    /// The receiver yields the exact same batch sequence as iterating
    /// directly; the queue only overlaps production with consumption.
    pub fn into_prefetch(self, queue_depth: usize) -> mpsc::Receiver<Array4<f64>> {
        let (tx, rx) = mpsc::sync_channel(queue_depth.max(1));
        let mut stream = self;
        thread::spawn(move || {
            loop {
                let batch = stream.next().expect("batch stream is infinite");
                if tx.send(batch).is_err() {
                    break; // receiver dropped, stop producing
                }
            }
        });
        rx
    }
}

/// Procedural toy texture families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyTextureKind {
    /// Periodic bands of a fixed width.
    Stripes,
    /// Meandering random-walk bands on a background, wrap-around ergodic.
    Channels,
}

/// Band orientation for the `stripes` kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StripeOrientation {
    /// Bands vary along X (columns), constant along Y.
    Vertical,
    /// Bands vary along Y (rows), constant along X.
    Horizontal,
}

/// Parameters for [`make_toy_texture`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ToyParams {
    /// Band width in pixels (stripe period is `2*band_width`).
    pub band_width: usize,
    pub orientation: StripeOrientation,
    /// Number of meandering bands for the `channels` kind; 0 picks a
    /// density-based default.
    pub band_count: usize,
}

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams {
            band_width: 4,
            orientation: StripeOrientation::Vertical,
            band_count: 0,
        }
    }
}

/// Generates a binary `{0,1}` toy texture that is statistically
/// translation-invariant, standing in for a large ergodic training image.
pub fn make_toy_texture(
    kind: ToyTextureKind,
    height: usize,
    width: usize,
    params: &ToyParams,
    seed: u64,
) -> Result<SourceImage> {
    if height < 16 || width < 16 {
        return Err(Error::invalid_param(
            "height/width",
            "toy textures must be at least 16x16",
        ));
    }
    if params.band_width == 0 {
        return Err(Error::invalid_param("band_width", "must be >= 1"));
    }

    let pixels = match kind {
        ToyTextureKind::Stripes => stripes(height, width, params),
        ToyTextureKind::Channels => channels(height, width, params, seed),
    };
    Ok(SourceImage {
        pixels,
        facies_count: 2,
    })
}

fn stripes(height: usize, width: usize, params: &ToyParams) -> Array2<f64> {
    let w = params.band_width;
    Array2::from_shape_fn((height, width), |(r, c)| {
        let along = match params.orientation {
            StripeOrientation::Vertical => c,
            StripeOrientation::Horizontal => r,
        };
        if (along / w) % 2 == 0 { 1.0 } else { 0.0 }
    })
}

/// Meandering-band generator: each band is a random walk across the image
/// (wrapping at both borders), thickened to `band_width`. The torus topology
/// keeps the statistics translation-invariant.
fn channels(height: usize, width: usize, params: &ToyParams, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bw = params.band_width;
    let band_count = if params.band_count > 0 {
        params.band_count
    } else {
        // aim for roughly a third of the area covered by bands
        (height / (3 * bw)).max(1)
    };

    let mut pixels = Array2::zeros((height, width));
    for _ in 0..band_count {
        let mut row = rng.random_range(0..height) as i64;
        let phase: usize = rng.random_range(0..width);
        for step in 0..width {
            let c = (phase + step) % width;
            // drift up/down/straight with equal probability
            row += rng.random_range(-1..=1);
            let r0 = row.rem_euclid(height as i64) as usize;
            for dy in 0..bw {
                let r = (r0 + dy) % height;
                pixels[[r, c]] = 1.0;
            }
        }
    }
    pixels
}

/// Borrow of the raw grid for metric code that does not care about provenance.
pub fn as_view(img: &TextureImage) -> ArrayView2<'_, f64> {
    img.pixels.view()
}
