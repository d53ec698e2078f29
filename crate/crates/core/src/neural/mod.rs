//! A small UNet `f_theta` with hand-written forward and reverse passes.
//!
//! Layout for `depth = d`, `base = b` (all convolutions 3x3 except the head):
//! - encoder level `l < d`: two convs to `b * 2^l` channels, then 2x2 average pool
//! - bottleneck: two convs to `b * 2^d` channels
//! - decoder level `l = d-1 .. 0`: nearest 2x upsample, concat the level-`l`
//!   skip (upsampled first), two convs to `b * 2^l` channels
//! - head: 1x1 conv to one channel, linear
//!
//! Every conv except the head is followed by leaky-ReLU(0.01). Parameters are a
//! single flat vector, per layer `weights (cout x cin x k x k)` then `bias (cout)`,
//! layers in the order above.

mod checkpoint;
mod layers;
mod unet;

use std::sync::atomic::{AtomicU64, Ordering};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use unet::{unet_backward, unet_forward, GradTape};

use crate::error::{Result, SsiError};
use crate::rng::{streams, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig { depth: 2, base_channels: 16, seed: 0 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.depth) {
            return Err(SsiError::param(format!("unet depth must be 1, 2 or 3, got {}", self.depth)));
        }
        if self.base_channels < 4 {
            return Err(SsiError::param(format!(
                "unet base_channels must be >= 4, got {}",
                self.base_channels
            )));
        }
        Ok(())
    }

    /// Input sides must be multiples of this.
    pub fn granularity(&self) -> usize {
        1 << self.depth
    }

    /// `(cin, cout, k)` for every layer in declaration order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        let b = self.base_channels;
        let d = self.depth;
        let mut shapes = Vec::new();
        let mut cin = 1;
        for l in 0..d {
            let c = b << l;
            shapes.push((cin, c, 3));
            shapes.push((c, c, 3));
            cin = c;
        }
        let bott = b << d;
        shapes.push((cin, bott, 3));
        shapes.push((bott, bott, 3));
        let mut below = bott;
        for l in (0..d).rev() {
            let c = b << l;
            shapes.push((below + c, c, 3));
            shapes.push((c, c, 3));
            below = c;
        }
        shapes.push((b, 1, 1));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|&(ci, co, k)| ci * co * k * k + co).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub cin: usize,
    pub cout: usize,
    pub ksize: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerSpec {
    pub fn weight_len(&self) -> usize {
        self.cin * self.cout * self.ksize * self.ksize
    }

    pub fn weights<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        &values[self.weight_offset..self.weight_offset + self.weight_len()]
    }

    pub fn bias<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        &values[self.bias_offset..self.bias_offset + self.cout]
    }
}

static NEXT_TOKEN: AtomicU64 = AtomicU64::new(1);

fn fresh_token() -> u64 {
    NEXT_TOKEN.fetch_add(1, Ordering::Relaxed)
}

/// All trainable weights `theta` of the network.
#[derive(Clone, Debug)]
pub struct ModelParams {
    config: UNetConfig,
    layers: Vec<LayerSpec>,
    values: Vec<f64>,
    // Changes on every mutable access; gradient tapes record it to detect staleness.
    token: u64,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.values == other.values
    }
}

impl ModelParams {
    /// All-zero parameters for `config`.
    pub fn zeros(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut off = 0;
        for (cin, cout, ksize) in config.layer_shapes() {
            let weight_offset = off;
            off += cin * cout * ksize * ksize;
            let bias_offset = off;
            off += cout;
            layers.push(LayerSpec { cin, cout, ksize, weight_offset, bias_offset });
        }
        Ok(ModelParams { config, layers, values: vec![0.0; off], token: fresh_token() })
    }

    pub fn from_values(config: UNetConfig, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if values.len() != p.values.len() {
            return Err(SsiError::param(format!(
                "expected {} parameters, got {}",
                p.values.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SsiError::param("non-finite parameter"));
        }
        p.values = values;
        Ok(p)
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.token = fresh_token();
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn token(&self) -> u64 {
        self.token
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Indices of convolution weights (biases excluded).
    pub fn weight_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.layers.iter().map(|l| l.weight_offset..l.weight_offset + l.weight_len())
    }
}

/// He-style initialization: weights `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`,
/// biases zero, drawn in declaration order from the config seed.
pub fn unet_init(config: UNetConfig) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(config)?;
    let mut rng = Stream::new(config.seed, streams::INIT);
    let layers = params.layers.clone();
    let values = params.values_mut();
    for l in &layers {
        let fan_in = (l.cin * l.ksize * l.ksize) as f64;
        let bound = (6.0 / fan_in).sqrt();
        for v in &mut values[l.weight_offset..l.weight_offset + l.weight_len()] {
            *v = rng.uniform_range(-bound, bound);
        }
    }
    Ok(params)
}

/// `l1 * sum|w| + l2 * sum w^2` over convolution weights, and its (sub)gradient
/// congruent to the parameter vector (zero on biases and at `w = 0`).
pub fn reg_loss_and_grad(params: &ModelParams, l1_weight: f64, l2_weight: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for range in params.weight_ranges() {
        for i in range {
            let w = params.values[i];
            let sign = if w > 0.0 {
                1.0
            } else if w < 0.0 {
                -1.0
            } else {
                0.0
            };
            loss += l1_weight * w.abs() + l2_weight * w * w;
            grad[i] = l1_weight * sign + 2.0 * l2_weight * w;
        }
    }
    (loss, grad)
}
