use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::conv::check_fits;
use super::{Image2D, Kernel};
use crate::error::Result;

/// In-place 2-D DFT of a row-major `width x height` buffer (unnormalized).
pub(crate) fn fft2(buf: &mut [Complex<f64>], width: usize, height: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = buf[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            buf[y * width + x] = column[y];
        }
    }
}

/// Circular convolution through the DFT; agrees with
/// `convolve(img, k, Boundary::Circular)` up to rounding.
pub fn fft_convolve(img: &Image2D, k: &Kernel) -> Result<Image2D> {
    check_fits(img, k)?;
    let (w, h) = img.shape();
    let mut a: Vec<Complex<f64>> = img.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut b = vec![Complex::new(0.0, 0.0); w * h];
    let r = k.radius() as isize;
    for dy in -r..=r {
        for dx in -r..=r {
            let x = dx.rem_euclid(w as isize) as usize;
            let y = dy.rem_euclid(h as isize) as usize;
            b[y * w + x].re += k.at(dx, dy);
        }
    }
    fft2(&mut a, w, h, false);
    fft2(&mut b, w, h, false);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    fft2(&mut a, w, h, true);
    let scale = 1.0 / (w * h) as f64;
    Ok(Image2D::from_raw(w, h, a.iter().map(|c| c.re * scale).collect()))
}

/// Centered `log(1 + |F|)` of the 2-D DFT, min-max normalized to `[0, 1]`.
/// The DC term lands at `(width / 2, height / 2)`.
pub fn log_spectrum(img: &Image2D) -> Image2D {
    let (w, h) = img.shape();
    if img.is_empty() {
        return img.clone();
    }
    let mut buf: Vec<Complex<f64>> = img.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2(&mut buf, w, h, false);
    let mut out = vec![0.0; w * h];
    for fy in 0..h {
        for fx in 0..w {
            let cx = (fx + w / 2) % w;
            let cy = (fy + h / 2) % h;
            out[cy * w + cx] = buf[fy * w + fx].norm().ln_1p();
        }
    }
    let (lo, hi) = out.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
    let span = hi - lo;
    if span > 0.0 {
        out.iter_mut().for_each(|v| *v = (*v - lo) / span);
    } else {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    Image2D::from_raw(w, h, out)
}
