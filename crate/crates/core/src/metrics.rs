//! Fidelity metrics. By convention the first argument is the reference image.

use rustdct::DctPlanner;

use crate::error::{Result, SsiError};
use crate::tensor::{gaussian_psf, Image2D};

pub const PSNR_CAP_DB: f64 = 100.0;
pub const DEFAULT_BINS: usize = 256;

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image2D, b: &Image2D, peak: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

pub const SSIM_WINDOW_RADIUS: usize = 5;
pub const SSIM_WINDOW_SIGMA: f64 = 1.5;

/// Single-scale SSIM, mean of local values over all window positions fully
/// inside the image, clamped to `[0, 1]`. Peak is 1.
pub fn ssim(a: &Image2D, b: &Image2D) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let side = 2 * SSIM_WINDOW_RADIUS + 1;
    let (w, h) = a.shape();
    if w < side || h < side {
        return Err(SsiError::param(format!("ssim needs both sides >= {side}, got {w}x{h}")));
    }
    let win = gaussian_psf(SSIM_WINDOW_SIGMA, SSIM_WINDOW_RADIUS)?;
    let weights = win.weights();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (da, db) = (a.data(), b.data());
    let mut total = 0.0;
    for y0 in 0..=h - side {
        for x0 in 0..=w - side {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..side {
                let row = (y0 + j) * w + x0;
                for i in 0..side {
                    let g = weights[j * side + i];
                    let (p, q) = (da[row + i], db[row + i]);
                    ma += g * p;
                    mb += g * q;
                    saa += g * p * p;
                    sbb += g * q * q;
                    sab += g * p * q;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    let n = ((w - side + 1) * (h - side + 1)) as f64;
    Ok((total / n).clamp(0.0, 1.0))
}

fn bin_of(v: f64, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts.iter().filter(|&&c| c > 0).map(|&c| {
        let p = c as f64 / n;
        -p * p.ln()
    }).sum()
}

/// Mutual information of the joint `bins x bins` histogram, normalized by
/// `max(H(A), H(B))`. Values are expected in `[0, 1]`; outliers fall in the end bins.
pub fn mutual_information(a: &Image2D, b: &Image2D, bins: usize) -> Result<f64> {
    a.ensure_same_shape(b)?;
    mutual_information_slices(a.data(), b.data(), bins)
}

fn mutual_information_slices(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(SsiError::param(format!("need at least 2 bins, got {bins}")));
    }
    if a.is_empty() {
        return Err(SsiError::param("mutual information of empty images"));
    }
    let mut joint = vec![0u64; bins * bins];
    let mut ha = vec![0u64; bins];
    let mut hb = vec![0u64; bins];
    for (&x, &y) in a.iter().zip(b) {
        let (i, j) = (bin_of(x, bins), bin_of(y, bins));
        joint[i * bins + j] += 1;
        ha[i] += 1;
        hb[j] += 1;
    }
    let n = a.len() as f64;
    let (ea, eb) = (entropy(&ha, n), entropy(&hb, n));
    let norm = ea.max(eb);
    if norm == 0.0 {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c > 0 {
                let pij = c as f64 / n;
                mi += pij * (pij * n * n / (ha[i] as f64 * hb[j] as f64)).ln();
            }
        }
    }
    Ok((mi / norm).clamp(0.0, 1.0))
}

/// Orthonormal 2D DCT-II.
pub fn dct2(img: &Image2D) -> Image2D {
    let (w, h) = img.shape();
    let mut planner = DctPlanner::new();
    let mut rows = img.data().to_vec();
    let dct_w = planner.plan_dct2(w);
    for row in rows.chunks_exact_mut(w) {
        dct_w.process_dct2(row);
        orthonormalize(row);
    }
    let dct_h = planner.plan_dct2(h);
    let mut col = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        dct_h.process_dct2(&mut col);
        orthonormalize(&mut col);
        for y in 0..h {
            rows[y * w + x] = col[y];
        }
    }
    Image2D::from_raw(w, h, rows)
}

fn orthonormalize(v: &mut [f64]) {
    let n = v.len() as f64;
    let s = (2.0 / n).sqrt();
    for c in v.iter_mut() {
        *c *= s;
    }
    v[0] *= std::f64::consts::FRAC_1_SQRT_2;
}

/// Median of `|c|` over the DCT of `reference`; falls back to the mean of `|c|`
/// and then to 1 when the median is zero.
pub fn smi_scale(reference: &Image2D) -> f64 {
    let mut mags: Vec<f64> = dct2(reference).data().iter().map(|c| c.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let n = mags.len();
    let median = if n % 2 == 1 { mags[n / 2] } else { 0.5 * (mags[n / 2 - 1] + mags[n / 2]) };
    if median > 0.0 {
        return median;
    }
    let mean = mags.iter().sum::<f64>() / n as f64;
    if mean > 0.0 {
        mean
    } else {
        1.0
    }
}

fn compressed_spectrum(img: &Image2D, q: f64) -> Vec<f64> {
    let mut v: Vec<f64> = dct2(img).data().iter().map(|&c| c.signum() * (c.abs() / q).ln_1p()).collect();
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let span = hi - lo;
    for x in &mut v {
        *x = if span > 0.0 { (*x - lo) / span } else { 0.0 };
    }
    v
}

/// Spectral mutual information with the log scale taken from `a`.
pub fn smi(a: &Image2D, b: &Image2D, bins: usize) -> Result<f64> {
    a.ensure_same_shape(b)?;
    smi_with_scale(a, b, bins, smi_scale(a))
}

/// [`smi`] with an explicit log-compression scale `q > 0`.
pub fn smi_with_scale(a: &Image2D, b: &Image2D, bins: usize, q: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if !(q > 0.0 && q.is_finite()) {
        return Err(SsiError::param(format!("smi scale must be positive, got {q}")));
    }
    mutual_information_slices(&compressed_spectrum(a, q), &compressed_spectrum(b, q), bins)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub mi: f64,
    pub smi: f64,
}

impl MetricReport {
    /// All four metrics of `estimate` against `reference` (peak 1, 256 bins).
    pub fn compute(reference: &Image2D, estimate: &Image2D) -> Result<Self> {
        Ok(MetricReport {
            psnr: psnr(reference, estimate, 1.0)?,
            ssim: ssim(reference, estimate)?,
            mi: mutual_information(reference, estimate, DEFAULT_BINS)?,
            smi: smi(reference, estimate, DEFAULT_BINS)?,
        })
    }
}
