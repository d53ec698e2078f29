//! Stochastic observation model: Poisson-Gaussian noise, salt-and-pepper
//! replacement, clamping and quantization.
//!
//! Per pixel `z`, in this order:
//! 1. `z + eta(z) * N` with `eta(z) = sqrt(alpha * max(z, 0) + sigma^2)`, `N ~ N(0, 1)`
//! 2. with probability `p`, replace by `U[0, 1]`
//! 3. clamp to `[0, 1]`
//! 4. snap to the `2^bits - 1` step grid
//!
//! Gaussian draws, replacement sites and replacement values come from three
//! independent [`Stream`]s, so changing `p` leaves the Gaussian field intact.

use crate::error::{Result, SsiError};
use crate::rng::{streams, Stream};
use crate::tensor::Image2D;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub alpha: f64,
    pub sigma: f64,
    pub p: f64,
    pub bits: u32,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { alpha: 0.001, sigma: 0.1, p: 0.01, bits: 10, seed: 0 }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(SsiError::param(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SsiError::param(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(SsiError::param(format!("pepper fraction must be in [0, 1], got {}", self.p)));
        }
        if !(1..=16).contains(&self.bits) {
            return Err(SsiError::param(format!("bits must be in 1..=16, got {}", self.bits)));
        }
        Ok(())
    }
}

/// Signal-dependent noise standard deviation; negative intensities count as 0.
#[inline]
pub fn eta(z: f64, alpha: f64, sigma: f64) -> f64 {
    (alpha * z.max(0.0) + sigma * sigma).sqrt()
}

/// Snap values to the grid `{i / (2^bits - 1)}` (round half away from zero).
pub fn quantize(x: &Image2D, bits: u32) -> Image2D {
    let levels = ((1u64 << bits) - 1) as f64;
    x.map(|v| (v * levels).round() / levels)
}

/// Degrade a clean (or blurred) image according to `spec`.
pub fn apply_noise(x: &Image2D, spec: &NoiseSpec) -> Result<Image2D> {
    spec.validate()?;
    let mut gauss = Stream::new(spec.seed, streams::NOISE_GAUSSIAN);
    let mut sites = Stream::new(spec.seed, streams::NOISE_PEPPER_SITES);
    let mut values = Stream::new(spec.seed, streams::NOISE_PEPPER_VALUES);
    let levels = ((1u64 << spec.bits) - 1) as f64;

    let data = x
        .data()
        .iter()
        .map(|&z| {
            let mut v = z + eta(z, spec.alpha, spec.sigma) * gauss.normal();
            if sites.uniform() < spec.p {
                v = values.uniform();
            }
            (v.clamp(0.0, 1.0) * levels).round() / levels
        })
        .collect();
    Image2D::new(x.width(), x.height(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_examples() {
        assert!((eta(0.0, 0.5, 0.1) - 0.1).abs() < 1e-15);
        assert_eq!(eta(0.7, 0.0, 0.0), 0.0);
        assert!((eta(1.0, 0.001, 0.1) - 0.011f64.sqrt()).abs() < 1e-15);
        assert!((eta(1.0, 0.001, 0.1) - 0.1048809).abs() < 1e-7);
        // negative intensities are clamped
        assert_eq!(eta(-5.0, 1.0, 0.2), 0.2);
    }

    #[test]
    fn degenerate_spec_is_identity_on_representable_image() {
        let levels = 1023.0;
        let x = Image2D::from_fn(32, 32, |i, j| (((i * 37 + j * 11) % 1024) as f64) / levels);
        let spec = NoiseSpec { alpha: 0.0, sigma: 0.0, p: 0.0, bits: 16, seed: 4 };
        let y = apply_noise(&x, &spec).unwrap();
        // 10-bit values are not exactly on the 16-bit grid; they round to within half a 16-bit step.
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
        }
        let spec10 = NoiseSpec { bits: 10, ..spec };
        assert_eq!(apply_noise(&x, &spec10).unwrap(), x);
    }

    #[test]
    fn quantize_rules() {
        let x = Image2D::new(1, 1, vec![0.5001]).unwrap();
        let q = quantize(&x, 10);
        assert_eq!(q.get(0, 0), 512.0 / 1023.0);
        assert!((q.get(0, 0) - 0.50049).abs() < 1e-5);

        let ramp = Image2D::from_fn(4096, 1, |i, _| i as f64 / 4095.0);
        let q = quantize(&ramp, 10);
        let mut levels: Vec<u64> = q.data().iter().map(|v| v.to_bits()).collect();
        levels.sort_unstable();
        levels.dedup();
        assert_eq!(levels.len(), 1024);
        assert_eq!(quantize(&q, 10), q);
        for (a, b) in ramp.data().iter().zip(q.data()) {
            assert!((a - b).abs() <= 0.5 / 1023.0 + 1e-15);
        }
    }

    #[test]
    fn variance_matches_model() {
        let x = Image2D::filled(400, 250, 0.5);
        let spec = NoiseSpec { alpha: 0.001, sigma: 0.1, p: 0.0, bits: 16, seed: 12 };
        let y = apply_noise(&x, &spec).unwrap();
        let n = y.len() as f64;
        let mean = y.data().iter().map(|v| v - 0.5).sum::<f64>() / n;
        let var = y.data().iter().map(|v| (v - 0.5 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 0.0105).abs() / 0.0105 < 0.05, "variance {var}");
        // zero-mean residual within 3 standard errors
        assert!(mean.abs() < 3.0 * (0.0105f64 / n).sqrt(), "mean {mean}");
    }

    #[test]
    fn pepper_fraction_concentrates() {
        // sigma = 0 isolates the replacement: any pixel that moved was replaced.
        let x = Image2D::filled(1000, 1000, 0.25);
        let spec = NoiseSpec { alpha: 0.0, sigma: 0.0, p: 0.01, bits: 16, seed: 99 };
        let y = apply_noise(&x, &spec).unwrap();
        let q = quantize(&x, 16).get(0, 0);
        let moved = y.data().iter().filter(|&&v| v != q).count() as f64 / 1e6;
        assert!((0.009..=0.011).contains(&moved), "fraction {moved}");
    }

    #[test]
    fn deterministic_and_in_range() {
        let x = Image2D::from_fn(40, 30, |i, j| ((i + j) % 7) as f64 / 6.0);
        let spec = NoiseSpec { seed: 5, ..NoiseSpec::default() };
        let a = apply_noise(&x, &spec).unwrap();
        let b = apply_noise(&x, &spec).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(quantize(&a, 10), a);
        let other = apply_noise(&x, &NoiseSpec { seed: 6, ..spec }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn toggling_pepper_keeps_gaussian_field() {
        let x = Image2D::filled(50, 50, 0.5);
        let base = NoiseSpec { alpha: 0.0, sigma: 0.05, p: 0.0, bits: 16, seed: 1 };
        let a = apply_noise(&x, &base).unwrap();
        let b = apply_noise(&x, &NoiseSpec { p: 0.1, ..base }).unwrap();
        let same = a.data().iter().zip(b.data()).filter(|(u, v)| u == v).count();
        assert!(same as f64 / 2500.0 > 0.85);
    }

    #[test]
    fn invalid_specs_rejected() {
        let x = Image2D::zeros(2, 2);
        for spec in [
            NoiseSpec { alpha: -1.0, ..NoiseSpec::default() },
            NoiseSpec { sigma: -0.1, ..NoiseSpec::default() },
            NoiseSpec { p: 1.5, ..NoiseSpec::default() },
            NoiseSpec { bits: 0, ..NoiseSpec::default() },
            NoiseSpec { bits: 17, ..NoiseSpec::default() },
        ] {
            assert!(apply_noise(&x, &spec).is_err());
        }
    }
}
