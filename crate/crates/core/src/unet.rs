//! The shallow encoder-decoder with skip connections.
//!
//! Layout per encoder level i (channels `base << i`): two 3x3 convolutions
//! with leaky-relu, then a stride-2 3x3 convolution down to the next level.
//! The bottleneck is two 3x3 convolutions at `base << depth` channels. Each
//! decoder level does nearest 2x upsampling, a 3x3 convolution halving the
//! channels, concatenation with the matching skip, and a second 3x3
//! convolution. A final 1x1 convolution maps to the output channels; the
//! head is linear, segmentation applies a sigmoid only at inference.
//!
//! Parameter count is a pure function of the config: every 3x3 convolution
//! `cin -> cout` contributes `9*cin*cout + cout`, the 1x1 head contributes
//! `cin*cout + cout`; see [`UNetConfig::param_count`] for the exact sum.

use crate::tensor::{concat_channels, conv2d, leaky_relu, upsample2x_nearest, Shape, Tape, Tensor};
use crate::{PxfrError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Output head of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Unbounded regression values (normals, color, scalar attributes).
    Linear,
    /// Raw logits; sigmoid is applied only when decoding predictions.
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub head: Head,
    pub leaky_slope: f32,
}

impl UNetConfig {
    pub fn new(out_channels: usize, head: Head) -> UNetConfig {
        UNetConfig {
            in_channels: 3,
            out_channels,
            base_channels: 16,
            depth: 4,
            head,
            leaky_slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.base_channels < 1 {
            return Err(PxfrError::InvalidInput(format!(
                "unet config: depth {} and base_channels {} must both be >= 1",
                self.depth, self.base_channels
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(PxfrError::InvalidInput(
                "unet config: zero channel count".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(PxfrError::InvalidInput(format!(
                "unet config: leaky_slope {} outside [0,1)",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Spatial dims of valid inputs must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }

    fn level_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// Total trainable scalar count.
    pub fn param_count(&self) -> usize {
        self.conv_specs()
            .iter()
            .map(|s| s.cout * s.cin * s.k * s.k + s.cout)
            .sum()
    }

    fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut specs = Vec::new();
        let mut prev = self.in_channels;
        for i in 0..self.depth {
            let c = self.level_channels(i);
            specs.push(ConvSpec::new(format!("enc{i}.a"), prev, c, 3, 1));
            specs.push(ConvSpec::new(format!("enc{i}.b"), c, c, 3, 1));
            specs.push(ConvSpec::new(format!("down{i}"), c, c, 3, 2));
            prev = c;
        }
        let mid = self.level_channels(self.depth);
        specs.push(ConvSpec::new("mid.a".into(), prev, mid, 3, 1));
        specs.push(ConvSpec::new("mid.b".into(), mid, mid, 3, 1));
        let mut above = mid;
        for i in (0..self.depth).rev() {
            let c = self.level_channels(i);
            specs.push(ConvSpec::new(format!("dec{i}.a"), above, c, 3, 1));
            specs.push(ConvSpec::new(format!("dec{i}.b"), 2 * c, c, 3, 1));
            above = c;
        }
        specs.push(ConvSpec::new("head".into(), above, self.out_channels, 1, 1));
        specs
    }
}

struct ConvSpec {
    name: String,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
}

impl ConvSpec {
    fn new(name: String, cin: usize, cout: usize, k: usize, stride: usize) -> ConvSpec {
        ConvSpec {
            name,
            cin,
            cout,
            k,
            stride,
        }
    }
}

#[derive(Debug, Clone)]
struct Conv {
    name: String,
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

/// The model: config plus an ordered list of named weight tensors.
///
/// Immutable after training; concurrent read-only forward passes on clones
/// of the underlying buffers are safe. Training mutates weights through the
/// optimizer and needs exclusive access.
#[derive(Debug, Clone)]
pub struct UNetModel {
    config: UNetConfig,
    convs: Vec<Conv>,
}

impl UNetModel {
    /// He-style fan-in initialization scaled for the leaky slope,
    /// deterministic in `seed`; biases start at zero.
    pub fn init(config: UNetConfig, seed: u64) -> Result<UNetModel> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = config
            .conv_specs()
            .into_iter()
            .map(|spec| {
                let fan_in = spec.cin * spec.k * spec.k;
                let std =
                    (2.0 / ((1.0 + config.leaky_slope * config.leaky_slope) * fan_in as f32))
                        .sqrt();
                let normal = Normal::new(0.0f32, std).expect("std > 0");
                let wlen = spec.cout * spec.cin * spec.k * spec.k;
                let weight = Tensor::from_vec(
                    Shape::new(spec.cout, spec.cin, spec.k, spec.k),
                    (0..wlen).map(|_| normal.sample(&mut rng)).collect(),
                )
                .expect("weight shape")
                .with_grad();
                let bias = Tensor::zeros(Shape::new(1, spec.cout, 1, 1)).with_grad();
                Conv {
                    name: spec.name,
                    weight,
                    bias,
                    stride: spec.stride,
                    padding: spec.k / 2,
                }
            })
            .collect();
        Ok(UNetModel { config, convs })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// Named weight tensors in fixed order; clones share storage with the
    /// model, so the optimizer can update them in place.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        self.convs
            .iter()
            .flat_map(|c| {
                [
                    (format!("{}.weight", c.name), c.weight.clone()),
                    (format!("{}.bias", c.name), c.bias.clone()),
                ]
            })
            .collect()
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    /// Rebuilds a model from (name, tensor) pairs, e.g. a loaded checkpoint.
    pub fn from_named_parameters(
        config: UNetConfig,
        params: &[(String, Tensor)],
    ) -> Result<UNetModel> {
        let mut model = UNetModel::init(config, 0)?;
        let expected = model.named_parameters();
        if expected.len() != params.len() {
            return Err(PxfrError::Format(format!(
                "checkpoint has {} tensors, config implies {}",
                params.len(),
                expected.len()
            )));
        }
        for (conv_idx, conv) in model.convs.iter_mut().enumerate() {
            for (slot, tensor) in [(0usize, &mut conv.weight), (1, &mut conv.bias)] {
                let (name, value) = &params[conv_idx * 2 + slot];
                let want = format!(
                    "{}.{}",
                    conv.name,
                    if slot == 0 { "weight" } else { "bias" }
                );
                if *name != want {
                    return Err(PxfrError::Format(format!(
                        "checkpoint tensor {name} where {want} was expected"
                    )));
                }
                if value.shape() != tensor.shape() {
                    return Err(PxfrError::Format(format!(
                        "checkpoint tensor {name} has shape {}, expected {}",
                        value.shape(),
                        tensor.shape()
                    )));
                }
                *tensor = value.detached().with_grad();
            }
        }
        Ok(model)
    }

    /// Forward pass. Input spatial dims must be multiples of 2^depth; the
    /// inference layer pads arbitrary sizes before calling this.
    pub fn forward(&self, tape: &Tape, input: &Tensor) -> Result<Tensor> {
        let sh = input.shape();
        if sh.c != self.config.in_channels {
            return Err(PxfrError::ShapeMismatch(format!(
                "unet forward: input has {} channels, model expects {}",
                sh.c, self.config.in_channels
            )));
        }
        let mult = self.config.spatial_multiple();
        if sh.h % mult != 0 || sh.w % mult != 0 {
            return Err(PxfrError::InvalidInput(format!(
                "unet forward: spatial dims {}x{} must be multiples of {mult}",
                sh.h, sh.w
            )));
        }
        let slope = self.config.leaky_slope;
        let mut idx = 0usize;
        let mut apply = |tape: &Tape, x: &Tensor, activated: bool| -> Result<Tensor> {
            let conv = &self.convs[idx];
            idx += 1;
            let y = conv2d(tape, x, &conv.weight, &conv.bias, conv.stride, conv.padding)?;
            Ok(if activated {
                leaky_relu(tape, &y, slope)
            } else {
                y
            })
        };

        let mut x = input.clone();
        let mut skips = Vec::with_capacity(self.config.depth);
        for _ in 0..self.config.depth {
            x = apply(tape, &x, true)?;
            x = apply(tape, &x, true)?;
            skips.push(x.clone());
            x = apply(tape, &x, true)?;
        }
        x = apply(tape, &x, true)?;
        x = apply(tape, &x, true)?;
        for skip in skips.iter().rev() {
            x = upsample2x_nearest(tape, &x);
            x = apply(tape, &x, true)?;
            x = concat_channels(tape, skip, &x)?;
            x = apply(tape, &x, true)?;
        }
        apply(tape, &x, false)
    }

    /// Radius of the receptive field of one output pixel, from the layer
    /// sequence. Tiled inference uses it as the minimum overlap.
    pub fn receptive_field_radius(&self) -> usize {
        let mut radius = 0usize;
        let mut jump = 1usize;
        for _ in 0..self.config.depth {
            radius += 2 * jump; // two 3x3 convs
            radius += jump; // stride-2 3x3 conv
            jump *= 2;
        }
        radius += 2 * jump; // bottleneck
        for _ in 0..self.config.depth {
            jump /= 2;
            radius += 2 * jump; // decoder convs (the 1x1 head adds nothing)
        }
        // Stride-2 downsampling and nearest upsampling are not
        // center-aligned, which widens the field by two pixels per level
        // (one on the outermost); measured by input-perturbation probes.
        radius + 2 * self.config.depth - 1
    }
}
