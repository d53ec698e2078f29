use crate::error::{Result, SsiError};

/// Square convolution kernel of side `2 * radius + 1`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    radius: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(radius: usize, weights: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if weights.len() != side * side {
            return Err(SsiError::param(format!(
                "kernel of radius {radius} needs {} weights, got {}",
                side * side,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(SsiError::param("non-finite kernel weight"));
        }
        Ok(Kernel { radius, weights })
    }

    /// Identity kernel: 1 at the center, 0 elsewhere.
    pub fn delta(radius: usize) -> Self {
        let side = 2 * radius + 1;
        let mut weights = vec![0.0; side * side];
        weights[radius * side + radius] = 1.0;
        Kernel { radius, weights }
    }

    #[inline]
    pub fn radius(&self) -> usize {
        self.radius
    }

    #[inline]
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dx, dy)`, each in `-radius..=radius`.
    #[inline]
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        self.weights[((dy + r) as usize) * self.side() + (dx + r) as usize]
    }

    pub fn center(&self) -> f64 {
        self.at(0, 0)
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Point reflection `w[i, j] -> w[-i, -j]`.
    pub fn flipped(&self) -> Kernel {
        let mut weights = self.weights.clone();
        weights.reverse();
        Kernel { radius: self.radius, weights }
    }
}

/// Sampled isotropic Gaussian truncated at `radius` and renormalized to unit sum.
pub fn gaussian_psf(sigma: f64, radius: usize) -> Result<Kernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(SsiError::param(format!("psf sigma must be positive, got {sigma}")));
    }
    if radius < 1 {
        return Err(SsiError::param("psf radius must be at least 1"));
    }
    let r = radius as isize;
    let two_s2 = 2.0 * sigma * sigma;
    let mut weights = Vec::with_capacity((2 * radius + 1).pow(2));
    for dy in -r..=r {
        for dx in -r..=r {
            weights.push((-((dx * dx + dy * dy) as f64) / two_s2).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(Kernel { radius, weights })
}
