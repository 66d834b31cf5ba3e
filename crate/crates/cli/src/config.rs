//! Run configuration: one TOML file drives every subcommand; command-line
//! flags override file values, file values override the built-in defaults
//! (which reproduce the reference training setup). Unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dilated_sgan::data::{StripeOrientation, ToyParams, ToyTextureKind};
use dilated_sgan::error::{Error, Result};
use dilated_sgan::eval::MetricsConfig;
use dilated_sgan::model::{DiscriminatorLayout, GeneratorLayout, NetworkSpec};
use dilated_sgan::train::TrainConfig;

/// Environment variable that re-roots relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "DSGAN_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output: OutputConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub network: NetworkConfig,
    pub generate: GenerateConfig,
    pub evaluate: EvaluateConfig,
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs/out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training image (8-bit grayscale PNG). When absent, the toy texture
    /// below is generated instead.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    pub patch_size: usize,
    pub toy: ToyConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: None,
            patch_size: 384,
            toy: ToyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub kind: ToyTextureKind,
    pub height: usize,
    pub width: usize,
    pub band_width: usize,
    pub orientation: StripeOrientation,
    pub band_count: usize,
    pub seed: u64,
    /// Destination of `make-toy-data`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            kind: ToyTextureKind::Channels,
            height: 512,
            width: 512,
            band_width: 8,
            orientation: StripeOrientation::Vertical,
            band_count: 0,
            seed: 1,
            out: None,
        }
    }
}

impl ToyConfig {
    pub fn params(&self) -> ToyParams {
        ToyParams {
            band_width: self.band_width,
            orientation: self.orientation,
            band_count: self.band_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub noise_channels: usize,
    pub image_channels: usize,
    pub deconv_filters: Vec<usize>,
    pub dilated_hidden_filters: Vec<usize>,
    pub dilation_rates: Vec<usize>,
    pub deconv_kernel: usize,
    pub dilated_kernel: usize,
    pub discriminator_filters: Vec<usize>,
    pub discriminator_kernel: usize,
    pub leaky_slope: f64,
    pub discriminator_batch_norm: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let g = GeneratorLayout::default();
        let d = DiscriminatorLayout::default();
        NetworkConfig {
            noise_channels: g.noise_channels,
            image_channels: g.image_channels,
            deconv_filters: g.deconv_filters,
            dilated_hidden_filters: g.dilated_hidden_filters,
            dilation_rates: g.dilation_rates,
            deconv_kernel: g.deconv_kernel,
            dilated_kernel: g.dilated_kernel,
            discriminator_filters: d.hidden_filters,
            discriminator_kernel: d.kernel,
            leaky_slope: d.leaky_slope,
            discriminator_batch_norm: d.batch_norm,
        }
    }
}

impl NetworkConfig {
    pub fn generator_spec(&self) -> Result<NetworkSpec> {
        GeneratorLayout {
            noise_channels: self.noise_channels,
            image_channels: self.image_channels,
            deconv_filters: self.deconv_filters.clone(),
            dilated_hidden_filters: self.dilated_hidden_filters.clone(),
            dilation_rates: self.dilation_rates.clone(),
            deconv_kernel: self.deconv_kernel,
            dilated_kernel: self.dilated_kernel,
        }
        .build()
    }

    pub fn discriminator_spec(&self) -> Result<NetworkSpec> {
        DiscriminatorLayout {
            image_channels: self.image_channels,
            hidden_filters: self.discriminator_filters.clone(),
            kernel: self.discriminator_kernel,
            leaky_slope: self.leaky_slope,
            batch_norm: self.discriminator_batch_norm,
        }
        .build()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub noise_height: usize,
    pub noise_width: usize,
    pub count: usize,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            checkpoint: None,
            noise_height: 12,
            noise_width: 12,
            count: 100,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub real_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| {
            Error::invalid_param(format!("config file {}", path.display()), e.to_string())
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.data.patch_size == 0 {
            return Err(Error::invalid_param("data.patch_size", "must be >= 1"));
        }
        self.network.generator_spec()?;
        self.network.discriminator_spec()?;
        if self.generate.count == 0 {
            return Err(Error::invalid_param("generate.count", "must be >= 1"));
        }
        if self.generate.noise_height == 0 || self.generate.noise_width == 0 {
            return Err(Error::invalid_param(
                "generate.noise_height/noise_width",
                "must be >= 1",
            ));
        }
        Ok(())
    }

    /// Output directory with the `DSGAN_OUTPUT_ROOT` override applied to
    /// relative paths.
    pub fn resolved_out_dir(&self) -> PathBuf {
        resolve_under_root(&self.output.dir)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the fully resolved configuration next to the run's outputs.
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

pub fn resolve_under_root(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}
