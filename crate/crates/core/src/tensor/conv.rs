use std::fmt;
use std::str::FromStr;

use super::image::reflect_index;
use super::{Image2D, Kernel};
use crate::error::{Result, SsiError};

/// How samples outside the image are synthesized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    /// Half-sample mirror, `d c b a | a b c d | d c b a`.
    Reflect,
    /// Periodic wrap-around.
    Circular,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Reflect => "reflect",
            Boundary::Circular => "circular",
        })
    }
}

impl FromStr for Boundary {
    type Err = SsiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reflect" => Ok(Boundary::Reflect),
            "circular" => Ok(Boundary::Circular),
            other => Err(SsiError::param(format!("unknown boundary '{other}'"))),
        }
    }
}

fn source_index(i: isize, n: usize, boundary: Boundary) -> usize {
    match boundary {
        Boundary::Reflect => reflect_index(i, n),
        Boundary::Circular => i.rem_euclid(n as isize) as usize,
    }
}

pub(crate) fn check_fits(img: &Image2D, k: &Kernel) -> Result<()> {
    if k.side() > img.width().min(img.height()) {
        return Err(SsiError::param(format!(
            "kernel side {} exceeds image {}x{}",
            k.side(),
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// 2-D convolution `out(x, y) = sum k(dx, dy) * img(x - dx, y - dy)`, same shape as `img`.
pub fn convolve(img: &Image2D, k: &Kernel, boundary: Boundary) -> Result<Image2D> {
    check_fits(img, k)?;
    Ok(convolve_unchecked(img, k, boundary))
}

pub(crate) fn convolve_unchecked(img: &Image2D, k: &Kernel, boundary: Boundary) -> Image2D {
    let (w, h) = img.shape();
    let r = k.radius();
    let pw = w + 2 * r;
    let ph = h + 2 * r;
    let xs: Vec<usize> = (0..pw).map(|px| source_index(px as isize - r as isize, w, boundary)).collect();
    let mut padded = vec![0.0; pw * ph];
    for py in 0..ph {
        let sy = source_index(py as isize - r as isize, h, boundary);
        let src = &img.data()[sy * w..(sy + 1) * w];
        let dst = &mut padded[py * pw..(py + 1) * pw];
        for (d, &sx) in dst.iter_mut().zip(&xs) {
            *d = src[sx];
        }
    }

    let mut out = vec![0.0; w * h];
    let ri = r as isize;
    for dy in -ri..=ri {
        for dx in -ri..=ri {
            let wt = k.at(dx, dy);
            if wt == 0.0 {
                continue;
            }
            let ox = (ri - dx) as usize;
            for y in 0..h {
                let py = (y as isize + ri - dy) as usize;
                let src = &padded[py * pw + ox..py * pw + ox + w];
                let dst = &mut out[y * w..(y + 1) * w];
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o += wt * s;
                }
            }
        }
    }
    Image2D::from_raw(w, h, out)
}

/// Exact adjoint of [`convolve`] for the same kernel and boundary:
/// `<convolve(u), v> == <u, convolve_adjoint(v)>`.
pub fn convolve_adjoint(grad: &Image2D, k: &Kernel, boundary: Boundary) -> Result<Image2D> {
    check_fits(grad, k)?;
    Ok(convolve_adjoint_unchecked(grad, k, boundary))
}

pub(crate) fn convolve_adjoint_unchecked(grad: &Image2D, k: &Kernel, boundary: Boundary) -> Image2D {
    if boundary == Boundary::Circular {
        // Periodic convolution is normal; its adjoint is the flipped kernel.
        return convolve_unchecked(grad, &k.flipped(), Boundary::Circular);
    }
    let (w, h) = grad.shape();
    let r = k.radius();
    let pw = w + 2 * r;
    let ph = h + 2 * r;
    let ri = r as isize;
    let mut padded = vec![0.0; pw * ph];
    for dy in -ri..=ri {
        for dx in -ri..=ri {
            let wt = k.at(dx, dy);
            if wt == 0.0 {
                continue;
            }
            let ox = (ri - dx) as usize;
            for y in 0..h {
                let py = (y as isize + ri - dy) as usize;
                let src = &grad.data()[y * w..(y + 1) * w];
                let dst = &mut padded[py * pw + ox..py * pw + ox + w];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += wt * s;
                }
            }
        }
    }
    let mut out = vec![0.0; w * h];
    let xs: Vec<usize> = (0..pw).map(|px| source_index(px as isize - ri, w, boundary)).collect();
    for py in 0..ph {
        let sy = source_index(py as isize - ri, h, boundary);
        let row = &padded[py * pw..(py + 1) * pw];
        let dst = &mut out[sy * w..(sy + 1) * w];
        for (&v, &sx) in row.iter().zip(&xs) {
            dst[sx] += v;
        }
    }
    Image2D::from_raw(w, h, out)
}

/// The fixed linear forward model `g`: convolution with a known kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardModel {
    pub kernel: Kernel,
    pub boundary: Boundary,
}

impl ForwardModel {
    pub fn new(kernel: Kernel, boundary: Boundary) -> Self {
        ForwardModel { kernel, boundary }
    }

    pub fn check(&self, img: &Image2D) -> Result<()> {
        check_fits(img, &self.kernel)
    }

    pub fn apply(&self, img: &Image2D) -> Image2D {
        convolve_unchecked(img, &self.kernel, self.boundary)
    }

    pub fn adjoint(&self, img: &Image2D) -> Image2D {
        convolve_adjoint_unchecked(img, &self.kernel, self.boundary)
    }
}
