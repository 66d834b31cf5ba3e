//! Declarative network descriptions for the generator and discriminator.
//!
//! A [`NetworkSpec`] is a plain list of layer descriptions; the runtime in
//! [`crate::nn`] turns it into weights and forward/backward passes. Both
//! networks are fully convolutional, so a spec carries no input size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Transposed convolution ("stride 1/2"): doubles spatial size.
    Deconv,
    /// Plain strided convolution.
    Conv,
    /// Stride-1 convolution with spaced filter taps.
    DilatedConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkRole {
    Generator,
    Discriminator,
}

/// One layer of a fully convolutional network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Output channel count.
    pub filters: usize,
    /// Kernel size (height, width); must be odd so same-padding is symmetric.
    pub kernel: (usize, usize),
    /// Spatial stride. For `Deconv` this is the upsampling factor (the
    /// "stride 1/2" reading: transposed convolution with stride 2).
    pub stride: usize,
    /// Tap spacing; > 1 only for `DilatedConv`.
    pub dilation: usize,
    pub activation: Activation,
    /// Whether the layer's input is batch-normalized before the convolution,
    /// i.e. whether a norm sits between the previous layer and this one.
    pub batch_norm: bool,
}

impl LayerSpec {
    /// Kernel extent actually covered on the input, `(k-1)*dilation + 1`.
    pub fn effective_kernel(&self) -> (usize, usize) {
        (
            (self.kernel.0 - 1) * self.dilation + 1,
            (self.kernel.1 - 1) * self.dilation + 1,
        )
    }

    /// Spatial size after this layer under the same-padding convention.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        match self.kind {
            LayerKind::Deconv => (h * self.stride, w * self.stride),
            LayerKind::Conv | LayerKind::DilatedConv => {
                (h.div_ceil(self.stride), w.div_ceil(self.stride))
            }
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let at = |what: &str, reason: String| {
            Err(Error::invalid_param(format!("layer {index} {what}"), reason))
        };
        if self.filters == 0 {
            return at("filters", "must be >= 1".into());
        }
        if self.kernel.0 % 2 == 0 || self.kernel.1 % 2 == 0 {
            return at(
                "kernel",
                format!("{:?} must be odd for symmetric same padding", self.kernel),
            );
        }
        if self.stride == 0 {
            return at("stride", "must be >= 1".into());
        }
        if self.dilation == 0 {
            return at("dilation", "must be >= 1".into());
        }
        if self.dilation > 1 && self.kind != LayerKind::DilatedConv {
            return at("dilation", "only dilated_conv layers may dilate".into());
        }
        if self.kind == LayerKind::Deconv && self.stride != 2 {
            return at("stride", "deconv encodes exact spatial doubling (stride 2)".into());
        }
        if let Activation::LeakyRelu(alpha) = self.activation {
            if !(alpha > 0.0 && alpha < 1.0) {
                return at("activation", format!("leaky relu slope {alpha} out of (0,1)"));
            }
        }
        Ok(())
    }
}

/// Ordered layer list plus the input channel count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub input_channels: usize,
    pub role: NetworkRole,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid_param("layers", "network has no layers"));
        }
        if self.input_channels == 0 {
            return Err(Error::invalid_param("input_channels", "must be >= 1"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
        }
        let last = self.layers.last().unwrap();
        match self.role {
            NetworkRole::Generator => {
                if last.activation != Activation::Tanh {
                    return Err(Error::invalid_param(
                        "last layer activation",
                        "generator output must be tanh",
                    ));
                }
            }
            NetworkRole::Discriminator => {
                if last.filters != 1 || last.activation != Activation::Sigmoid {
                    return Err(Error::invalid_param(
                        "last layer",
                        "discriminator output must be one filter with a sigmoid",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Output channels of the final layer.
    pub fn output_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.filters)
    }

    /// Input channel count seen by layer `i`.
    pub fn in_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.input_channels
        } else {
            self.layers[i - 1].filters
        }
    }

    /// Net spatial scale factor: upsampling for generators (product of deconv
    /// strides), downsampling divisor for discriminators.
    pub fn spatial_scale(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::Deconv => l.stride,
                LayerKind::Conv | LayerKind::DilatedConv => l.stride,
            })
            .product()
    }

    /// Spatial size of the network output for a given input size.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        self.layers
            .iter()
            .fold((h, w), |(h, w), l| l.output_size(h, w))
    }
}

/// Configurable generator layout: a deconvolution stack that upscales the
/// noise, followed by a dilated stack that widens the receptive field at
/// constant resolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorLayout {
    pub noise_channels: usize,
    pub image_channels: usize,
    pub deconv_filters: Vec<usize>,
    /// Filters for all dilated layers but the last (which always has
    /// `image_channels` filters).
    pub dilated_hidden_filters: Vec<usize>,
    pub dilation_rates: Vec<usize>,
    pub deconv_kernel: usize,
    pub dilated_kernel: usize,
}

impl Default for GeneratorLayout {
    fn default() -> Self {
        GeneratorLayout {
            noise_channels: 1,
            image_channels: 1,
            deconv_filters: vec![256, 128, 64, 64, 64],
            dilated_hidden_filters: vec![64, 64, 64, 64],
            dilation_rates: vec![1, 2, 3, 4, 5],
            deconv_kernel: 5,
            dilated_kernel: 3,
        }
    }
}

impl GeneratorLayout {
    pub fn build(&self) -> Result<NetworkSpec> {
        if self.noise_channels == 0 || self.image_channels == 0 {
            return Err(Error::invalid_param(
                "channels",
                "noise and image channel counts must be >= 1",
            ));
        }
        if self.deconv_filters.is_empty() || self.dilation_rates.is_empty() {
            return Err(Error::invalid_param(
                "layout",
                "need at least one deconv and one dilated layer",
            ));
        }
        if self.dilated_hidden_filters.len() + 1 != self.dilation_rates.len() {
            return Err(Error::invalid_param(
                "dilated_hidden_filters",
                "must have one entry fewer than dilation_rates",
            ));
        }

        let n_deconv = self.deconv_filters.len();
        let n_dilated = self.dilation_rates.len();
        let mut layers = Vec::with_capacity(n_deconv + n_dilated);

        for (i, &filters) in self.deconv_filters.iter().enumerate() {
            let is_last_deconv = i + 1 == n_deconv;
            layers.push(LayerSpec {
                kind: LayerKind::Deconv,
                filters,
                kernel: (self.deconv_kernel, self.deconv_kernel),
                stride: 2,
                dilation: 1,
                activation: Activation::Relu,
                // norm sits between layers, except before the last deconv
                batch_norm: !is_last_deconv,
            });
        }
        for (i, &rate) in self.dilation_rates.iter().enumerate() {
            let is_last = i + 1 == n_dilated;
            let filters = if is_last {
                self.image_channels
            } else {
                self.dilated_hidden_filters[i]
            };
            layers.push(LayerSpec {
                kind: LayerKind::DilatedConv,
                filters,
                kernel: (self.dilated_kernel, self.dilated_kernel),
                stride: 1,
                dilation: rate,
                activation: if is_last {
                    Activation::Tanh
                } else {
                    Activation::Relu
                },
                // ... and none before the last dilated convolution
                batch_norm: !is_last,
            });
        }

        let spec = NetworkSpec {
            layers,
            input_channels: self.noise_channels,
            role: NetworkRole::Generator,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Configurable discriminator layout: a stack of strided convolutions ending
/// in a single-filter sigmoid probability map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscriminatorLayout {
    pub image_channels: usize,
    /// Filters for all layers but the last (which always has one filter).
    pub hidden_filters: Vec<usize>,
    pub kernel: usize,
    pub leaky_slope: f64,
    pub batch_norm: bool,
}

impl Default for DiscriminatorLayout {
    fn default() -> Self {
        DiscriminatorLayout {
            image_channels: 1,
            hidden_filters: vec![64, 128, 256, 512],
            kernel: 9,
            leaky_slope: 0.2,
            batch_norm: false,
        }
    }
}

impl DiscriminatorLayout {
    pub fn build(&self) -> Result<NetworkSpec> {
        if self.image_channels == 0 {
            return Err(Error::invalid_param("image_channels", "must be >= 1"));
        }
        let mut layers: Vec<LayerSpec> = self
            .hidden_filters
            .iter()
            .enumerate()
            .map(|(i, &filters)| LayerSpec {
                kind: LayerKind::Conv,
                filters,
                kernel: (self.kernel, self.kernel),
                stride: 2,
                dilation: 1,
                activation: Activation::LeakyRelu(self.leaky_slope),
                batch_norm: self.batch_norm && i > 0,
            })
            .collect();
        layers.push(LayerSpec {
            kind: LayerKind::Conv,
            filters: 1,
            kernel: (self.kernel, self.kernel),
            stride: 2,
            dilation: 1,
            activation: Activation::Sigmoid,
            batch_norm: self.batch_norm,
        });

        let spec = NetworkSpec {
            layers,
            input_channels: self.image_channels,
            role: NetworkRole::Discriminator,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// The reference generator: five stride-1/2 deconvolutions with 5x5 filters,
/// then five dilated convolutions with rates 1..5, ReLU throughout except the
/// final tanh.
pub fn default_generator_spec(noise_channels: usize, image_channels: usize) -> Result<NetworkSpec> {
    GeneratorLayout {
        noise_channels,
        image_channels,
        ..GeneratorLayout::default()
    }
    .build()
}

/// The reference discriminator: five stride-2 convolutions with 9x9 filters,
/// the last with a single filter and a sigmoid.
pub fn default_discriminator_spec(image_channels: usize) -> Result<NetworkSpec> {
    DiscriminatorLayout {
        image_channels,
        ..DiscriminatorLayout::default()
    }
    .build()
}

/// Upper bound on the dependency window between one network output pixel and
/// one input site, per axis.
///
/// For generators this is the footprint of a single input (noise) cell on the
/// output image — the window a local noise perturbation can touch. For
/// discriminators it is the classic receptive field: the input window one
/// output probability depends on. Both follow from the usual arithmetic over
/// kernels, strides and dilations.
pub fn receptive_field_bound(spec: &NetworkSpec) -> (usize, usize) {
    match spec.role {
        NetworkRole::Generator => {
            let mut f = (1usize, 1usize);
            for layer in &spec.layers {
                f = (
                    grow_footprint(layer, f.0, 0),
                    grow_footprint(layer, f.1, 1),
                );
            }
            f
        }
        NetworkRole::Discriminator => {
            let mut r = (1usize, 1usize);
            for layer in spec.layers.iter().rev() {
                r = (
                    grow_receptive(layer, r.0, 0),
                    grow_receptive(layer, r.1, 1),
                );
            }
            r
        }
    }
}

/// Window of output pixels touched by `f` contiguous input pixels.
fn grow_footprint(layer: &LayerSpec, f: usize, axis: usize) -> usize {
    let k = if axis == 0 {
        layer.effective_kernel().0
    } else {
        layer.effective_kernel().1
    };
    match layer.kind {
        LayerKind::Deconv => layer.stride * (f - 1) + k,
        LayerKind::Conv | LayerKind::DilatedConv => (f + k - 2) / layer.stride + 1,
    }
}

/// Window of input pixels that `r` contiguous output pixels depend on.
fn grow_receptive(layer: &LayerSpec, r: usize, axis: usize) -> usize {
    let k = if axis == 0 {
        layer.effective_kernel().0
    } else {
        layer.effective_kernel().1
    };
    match layer.kind {
        LayerKind::Deconv => (r + k - 2) / layer.stride + 1,
        LayerKind::Conv | LayerKind::DilatedConv => layer.stride * (r - 1) + k,
    }
}
