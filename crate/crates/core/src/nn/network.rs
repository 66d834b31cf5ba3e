//! Network runtime: weights for a [`NetworkSpec`], forward evaluation in
//! train/eval mode, and the full backward pass.

use ndarray::{Array1, Array3, Array4, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::batchnorm::{BatchNorm, BnCache};
use super::conv;
use super::Tensor4;
use crate::error::{Error, Result};
use crate::model::{Activation, LayerKind, LayerSpec, NetworkRole, NetworkSpec};

/// Whether batch norm uses minibatch statistics (`Train`) or the stored
/// running averages (`Eval`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Weights of one layer. Kernel layout is `[filters, in, kh, kw]` for
/// convolutions and `[in, filters, kh, kw]` for transposed convolutions.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub spec: LayerSpec,
    pub in_channels: usize,
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    /// Normalization applied to this layer's input, when the spec asks for it.
    pub norm: Option<BatchNorm>,
}

impl LayerParams {
    fn weight_shape(spec: &LayerSpec, in_channels: usize) -> (usize, usize, usize, usize) {
        let (kh, kw) = spec.kernel;
        match spec.kind {
            LayerKind::Deconv => (in_channels, spec.filters, kh, kw),
            LayerKind::Conv | LayerKind::DilatedConv => (spec.filters, in_channels, kh, kw),
        }
    }
}

/// A spec plus its weights.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    pub layers: Vec<LayerParams>,
}

struct LayerCache {
    bn: Option<BnCache>,
    conv_input: Tensor4,
    output: Tensor4,
}

/// Result of a forward evaluation, carrying everything the backward pass
/// needs. Forward passes never mutate the network; training-mode batch
/// statistics are folded into the running averages separately via
/// [`Network::update_running_stats`].
pub struct ForwardPass {
    pub output: Tensor4,
    caches: Vec<LayerCache>,
}

/// Parameter gradients mirroring the layer list.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

/// Draws fresh weights for a spec: kernels from Normal(0, 0.02^2), biases
/// zero, norm scale/shift at identity. Bitwise deterministic per seed.
pub fn init_weights(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.02).expect("valid std");

    let mut layers = Vec::with_capacity(spec.layers.len());
    for (i, layer_spec) in spec.layers.iter().enumerate() {
        let in_channels = spec.in_channels(i);
        let shape = LayerParams::weight_shape(layer_spec, in_channels);
        let weight = Array4::from_shape_simple_fn(shape, || normal.sample(&mut rng));
        layers.push(LayerParams {
            spec: layer_spec.clone(),
            in_channels,
            weight,
            bias: Array1::zeros(layer_spec.filters),
            norm: layer_spec
                .batch_norm
                .then(|| BatchNorm::identity(in_channels)),
        });
    }
    Ok(Network {
        spec: spec.clone(),
        layers,
    })
}

impl Network {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Total number of trainable scalars (kernels, biases, norm affines).
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weight.len()
                    + l.bias.len()
                    + l.norm.as_ref().map_or(0, |n| n.gamma.len() + n.beta.len())
            })
            .sum()
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != self.spec.input_channels {
            return Err(Error::ShapeMismatch {
                context: "network input".into(),
                expected: format!("{} channels", self.spec.input_channels),
                got: format!("{c} channels"),
            });
        }
        if h == 0 || w == 0 {
            return Err(Error::ShapeMismatch {
                context: "network input".into(),
                expected: "nonempty spatial extent".into(),
                got: format!("{h}x{w}"),
            });
        }
        if self.spec.role == NetworkRole::Discriminator {
            let divisor = self.spec.spatial_scale();
            if h % divisor != 0 || w % divisor != 0 {
                return Err(Error::NotDivisible {
                    height: h,
                    width: w,
                    divisor,
                });
            }
        }
        Ok(())
    }

    /// Forward pass keeping the caches backward needs.
    pub fn forward(&self, x: &Tensor4, mode: Mode) -> Result<ForwardPass> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (conv_input, bn_cache) = match &layer.norm {
                Some(norm) => {
                    let (y, cache) = norm.forward(&cur, mode);
                    (y, Some(cache))
                }
                None => (cur, None),
            };
            let pre_act = match layer.spec.kind {
                LayerKind::Deconv => conv::deconv2d(
                    &conv_input,
                    &layer.weight,
                    &layer.bias,
                    layer.spec.stride,
                ),
                LayerKind::Conv | LayerKind::DilatedConv => conv::conv2d(
                    &conv_input,
                    &layer.weight,
                    &layer.bias,
                    layer.spec.stride,
                    layer.spec.dilation,
                ),
            };
            let output = apply_activation(pre_act, layer.spec.activation);
            caches.push(LayerCache {
                bn: bn_cache,
                conv_input,
                output: output.clone(),
            });
            cur = output;
        }
        Ok(ForwardPass {
            output: cur,
            caches,
        })
    }

    /// Inference forward: running statistics, no caches kept.
    pub fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(self.forward(x, Mode::Eval)?.output)
    }

    /// Folds the batch statistics observed during a training-mode pass into
    /// the running averages.
    pub fn update_running_stats(&mut self, pass: &ForwardPass) {
        for (layer, cache) in self.layers.iter_mut().zip(&pass.caches) {
            if let (Some(norm), Some(bn_cache)) = (layer.norm.as_mut(), cache.bn.as_ref()) {
                norm.fold_running(bn_cache);
            }
        }
    }

    /// Backpropagates `grad_output` through the pass; returns the gradient
    /// with respect to the network input along with all parameter gradients.
    pub fn backward(&self, pass: &ForwardPass, grad_output: &Tensor4) -> (Tensor4, Gradients) {
        let mut grad = grad_output.clone();
        let mut layer_grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());

        for (layer, cache) in self.layers.iter().zip(&pass.caches).rev() {
            activation_backward(&mut grad, &cache.output, layer.spec.activation);

            let (grad_conv_in, grad_w, grad_b) = match layer.spec.kind {
                LayerKind::Deconv => conv::deconv2d_backward(
                    &cache.conv_input,
                    &layer.weight,
                    &grad,
                    layer.spec.stride,
                ),
                LayerKind::Conv | LayerKind::DilatedConv => conv::conv2d_backward(
                    &cache.conv_input,
                    &layer.weight,
                    &grad,
                    layer.spec.stride,
                    layer.spec.dilation,
                ),
            };

            let (grad_in, gamma, beta) = match (&layer.norm, &cache.bn) {
                (Some(norm), Some(bn_cache)) => {
                    let (dx, dgamma, dbeta) = norm.backward(bn_cache, &grad_conv_in);
                    (dx, Some(dgamma), Some(dbeta))
                }
                _ => (grad_conv_in, None, None),
            };

            layer_grads.push(LayerGrads {
                weight: grad_w,
                bias: grad_b,
                gamma,
                beta,
            });
            grad = grad_in;
        }

        layer_grads.reverse();
        (
            grad,
            Gradients {
                layers: layer_grads,
            },
        )
    }

    /// Sum of squared kernel entries (biases and norm affines excluded).
    pub fn kernel_sq_sum(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    /// Stable, ordered list of every tensor in the network.
    pub fn named_tensors(&self) -> Vec<(String, ArrayD<f64>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.kernel"), layer.weight.clone().into_dyn()));
            out.push((format!("layer{i}.bias"), layer.bias.clone().into_dyn()));
            if let Some(norm) = &layer.norm {
                out.push((format!("layer{i}.norm.gamma"), norm.gamma.clone().into_dyn()));
                out.push((format!("layer{i}.norm.beta"), norm.beta.clone().into_dyn()));
                out.push((
                    format!("layer{i}.norm.running_mean"),
                    norm.running_mean.clone().into_dyn(),
                ));
                out.push((
                    format!("layer{i}.norm.running_var"),
                    norm.running_var.clone().into_dyn(),
                ));
            }
        }
        out
    }

    /// Rebuilds a network from a spec and the tensor list produced by
    /// [`Network::named_tensors`]. Shapes are validated against the spec.
    pub fn from_named_tensors(
        spec: &NetworkSpec,
        tensors: &[(String, ArrayD<f64>)],
    ) -> Result<Network> {
        spec.validate()?;
        let lookup = |name: &str| -> Result<&ArrayD<f64>> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::CheckpointCorrupt(format!("missing tensor {name}")))
        };
        let take4 = |name: &str, shape: (usize, usize, usize, usize)| -> Result<Array4<f64>> {
            let t = lookup(name)?;
            if t.shape() != [shape.0, shape.1, shape.2, shape.3] {
                return Err(Error::ShapeMismatch {
                    context: format!("tensor {name}"),
                    expected: format!("{shape:?}"),
                    got: format!("{:?}", t.shape()),
                });
            }
            Ok(t.clone().into_dimensionality().unwrap())
        };
        let take1 = |name: &str, len: usize| -> Result<Array1<f64>> {
            let t = lookup(name)?;
            if t.shape() != [len] {
                return Err(Error::ShapeMismatch {
                    context: format!("tensor {name}"),
                    expected: format!("[{len}]"),
                    got: format!("{:?}", t.shape()),
                });
            }
            Ok(t.clone().into_dimensionality().unwrap())
        };

        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, layer_spec) in spec.layers.iter().enumerate() {
            let in_channels = spec.in_channels(i);
            let shape = LayerParams::weight_shape(layer_spec, in_channels);
            let weight = take4(&format!("layer{i}.kernel"), shape)?;
            let bias = take1(&format!("layer{i}.bias"), layer_spec.filters)?;
            let norm = if layer_spec.batch_norm {
                Some(BatchNorm {
                    gamma: take1(&format!("layer{i}.norm.gamma"), in_channels)?,
                    beta: take1(&format!("layer{i}.norm.beta"), in_channels)?,
                    running_mean: take1(&format!("layer{i}.norm.running_mean"), in_channels)?,
                    running_var: take1(&format!("layer{i}.norm.running_var"), in_channels)?,
                })
            } else {
                None
            };
            layers.push(LayerParams {
                spec: layer_spec.clone(),
                in_channels,
                weight,
                bias,
                norm,
            });
        }
        Ok(Network {
            spec: spec.clone(),
            layers,
        })
    }
}

fn apply_activation(mut z: Tensor4, activation: Activation) -> Tensor4 {
    match activation {
        Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        Activation::LeakyRelu(alpha) => z.mapv_inplace(|v| if v > 0.0 { v } else { alpha * v }),
        Activation::Tanh => z.mapv_inplace(f64::tanh),
        Activation::Sigmoid => z.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp())),
        Activation::None => {}
    }
    z
}

/// In-place chain rule through an activation, using its output `y`.
fn activation_backward(grad: &mut Tensor4, y: &Tensor4, activation: Activation) {
    match activation {
        Activation::Relu => grad.zip_mut_with(y, |g, &y| {
            if y <= 0.0 {
                *g = 0.0;
            }
        }),
        Activation::LeakyRelu(alpha) => grad.zip_mut_with(y, |g, &y| {
            if y <= 0.0 {
                *g *= alpha;
            }
        }),
        Activation::Tanh => grad.zip_mut_with(y, |g, &y| *g *= 1.0 - y * y),
        Activation::Sigmoid => grad.zip_mut_with(y, |g, &y| *g *= y * (1.0 - y)),
        Activation::None => {}
    }
}

/// Uniform noise grid in `[-1,1]`, the generator input.
#[derive(Debug, Clone)]
pub struct NoiseGrid {
    /// `(channels, height, width)`.
    pub values: Array3<f64>,
}

impl NoiseGrid {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        if values.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::invalid_param("noise", "entries must lie in [-1,1]"));
        }
        Ok(NoiseGrid { values })
    }

    /// Draws uniform `[-1,1]` noise.
    pub fn uniform(channels: usize, height: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        use rand::Rng;
        NoiseGrid {
            values: Array3::from_shape_simple_fn((channels, height, width), || {
                rng.random_range(-1.0..=1.0)
            }),
        }
    }

    pub fn height(&self) -> usize {
        self.values.dim().1
    }

    pub fn width(&self) -> usize {
        self.values.dim().2
    }

    fn to_batch(&self) -> Tensor4 {
        let (c, h, w) = self.values.dim();
        self.values
            .clone()
            .into_shape_with_order(IxDyn(&[1, c, h, w]))
            .unwrap()
            .into_dimensionality()
            .unwrap()
    }
}

/// Runs the generator on one noise grid; the output is a model-space image of
/// size `scale * noise_size` with all values in tanh range.
pub fn generator_forward(net: &Network, z: &NoiseGrid) -> Result<crate::data::TextureImage> {
    if net.spec().role != NetworkRole::Generator {
        return Err(Error::invalid_param("network", "not a generator spec"));
    }
    if net.spec().output_channels() != 1 {
        return Err(Error::invalid_param(
            "image_channels",
            "only single-channel texture output is supported",
        ));
    }
    let out = net.forward_eval(&z.to_batch())?;
    let (_, _, h, w) = out.dim();
    let plane = out
        .index_axis(ndarray::Axis(0), 0)
        .index_axis(ndarray::Axis(0), 0)
        .to_owned();
    debug_assert_eq!(plane.dim(), (h, w));
    Ok(crate::data::TextureImage::new(
        plane,
        crate::data::ValueSpace::Model,
    ))
}

/// Runs the discriminator on one image, yielding the probability map of
/// shape `(h/scale, w/scale)`.
pub fn discriminator_forward(
    net: &Network,
    image: &crate::data::TextureImage,
) -> Result<ndarray::Array2<f64>> {
    if net.spec().role != NetworkRole::Discriminator {
        return Err(Error::invalid_param("network", "not a discriminator spec"));
    }
    let model = image.to_model();
    let (h, w) = (model.height(), model.width());
    let mut batch = Tensor4::zeros((1, 1, h, w));
    batch
        .index_axis_mut(ndarray::Axis(0), 0)
        .index_axis_mut(ndarray::Axis(0), 0)
        .assign(&model.pixels);
    let out = net.forward_eval(&batch)?;
    Ok(out
        .index_axis(ndarray::Axis(0), 0)
        .index_axis(ndarray::Axis(0), 0)
        .to_owned())
}
