//! Blind-spot masks: a random pixel set `J`, the masking function `m_J` that
//! overwrites `J` with values that do not depend on the originals there, and
//! the epoch-dependent masking density.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SsiError};
use crate::rng::{streams, Stream};
use crate::tensor::Image2D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum MaskStrategy {
    /// Masked pixels become 0.
    Zero,
    /// Masked pixels become `U[0, 1]` draws from the plan's seed.
    UniformRandom,
    /// Median of the unmasked 8-neighbours, or the global unmasked mean.
    #[default]
    Interpolate,
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskStrategy::Zero => "zero",
            MaskStrategy::UniformRandom => "uniform_random",
            MaskStrategy::Interpolate => "interpolate",
        })
    }
}

impl FromStr for MaskStrategy {
    type Err = SsiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(MaskStrategy::Zero),
            "uniform_random" | "random" => Ok(MaskStrategy::UniformRandom),
            "interpolate" => Ok(MaskStrategy::Interpolate),
            other => Err(SsiError::param(format!("unknown masking strategy '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    width: usize,
    height: usize,
    masked: Vec<bool>,
    strategy: MaskStrategy,
    seed: u64,
}

impl MaskPlan {
    /// Build a plan from an explicit membership grid (`true` = in `J`).
    pub fn from_mask(
        width: usize,
        height: usize,
        masked: Vec<bool>,
        strategy: MaskStrategy,
        seed: u64,
    ) -> Result<Self> {
        if masked.len() != width * height {
            return Err(SsiError::param("mask grid does not match shape"));
        }
        Ok(MaskPlan { width, height, masked, strategy, seed })
    }

    pub fn with_strategy(mut self, strategy: MaskStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn strategy(&self) -> MaskStrategy {
        self.strategy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn masked(&self) -> &[bool] {
        &self.masked
    }

    #[inline]
    pub fn is_masked(&self, x: usize, y: usize) -> bool {
        self.masked[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.masked.iter().any(|&m| m)
    }

    pub fn fraction(&self) -> f64 {
        if self.masked.is_empty() {
            return 0.0;
        }
        self.count() as f64 / self.masked.len() as f64
    }
}

/// Mask each pixel independently with probability `density`.
///
/// An empty draw on a nonempty image masks pixel `seed mod n` instead.
pub fn sample_mask(width: usize, height: usize, density: f64, seed: u64) -> Result<MaskPlan> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(SsiError::param(format!("mask density must be in (0, 1], got {density}")));
    }
    let n = width * height;
    let mut rng = Stream::new(seed, streams::MASK_SITES);
    let mut masked: Vec<bool> = (0..n).map(|_| rng.uniform() < density).collect();
    if n > 0 && !masked.iter().any(|&m| m) {
        masked[(seed % n as u64) as usize] = true;
    }
    Ok(MaskPlan { width, height, masked, strategy: MaskStrategy::default(), seed })
}

/// `m_J`: copy unmasked pixels, synthesize masked ones without reading them.
pub fn apply_mask(y: &Image2D, plan: &MaskPlan) -> Result<Image2D> {
    if y.shape() != plan.shape() {
        return Err(SsiError::param(format!(
            "mask {}x{} does not match image {}x{}",
            plan.width,
            plan.height,
            y.width(),
            y.height()
        )));
    }
    let (w, h) = y.shape();
    let src = y.data();
    let mut out = src.to_vec();
    match plan.strategy {
        MaskStrategy::Zero => {
            for (o, &m) in out.iter_mut().zip(&plan.masked) {
                if m {
                    *o = 0.0;
                }
            }
        }
        MaskStrategy::UniformRandom => {
            let mut rng = Stream::new(plan.seed, streams::MASK_VALUES);
            for (o, &m) in out.iter_mut().zip(&plan.masked) {
                if m {
                    *o = rng.uniform();
                }
            }
        }
        MaskStrategy::Interpolate => {
            // Mean taken relative to the first unmasked value: exact on constant images.
            let mut unmasked = src.iter().zip(&plan.masked).filter(|(_, &m)| !m).map(|(&v, _)| v);
            let fallback = match unmasked.next() {
                Some(anchor) => {
                    let (sum, count) = unmasked.fold((0.0, 1usize), |(s, c), v| (s + (v - anchor), c + 1));
                    anchor + sum / count as f64
                }
                None => 0.0,
            };
            let mut neighbours = Vec::with_capacity(8);
            for yy in 0..h {
                for xx in 0..w {
                    let i = yy * w + xx;
                    if !plan.masked[i] {
                        continue;
                    }
                    neighbours.clear();
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            if dx == 0 && dy == 0 {
                                continue;
                            }
                            let nx = xx as isize + dx;
                            let ny = yy as isize + dy;
                            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                                continue;
                            }
                            let j = ny as usize * w + nx as usize;
                            if !plan.masked[j] {
                                neighbours.push(src[j]);
                            }
                        }
                    }
                    out[i] = if neighbours.is_empty() { fallback } else { median(&mut neighbours) };
                }
            }
        }
    }
    Ok(Image2D::from_raw(w, h, out))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Geometric decay from `d_start` at epoch 0 to `d_end` at the last epoch.
pub fn density_schedule(epoch: usize, total_epochs: usize, d_start: f64, d_end: f64) -> f64 {
    if total_epochs <= 1 {
        return d_start;
    }
    let t = (epoch.min(total_epochs - 1)) as f64 / (total_epochs - 1) as f64;
    let d = d_start * (d_end / d_start).powf(t);
    d.clamp(d_end.min(d_start), d_start.max(d_end))
}
