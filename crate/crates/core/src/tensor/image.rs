use crate::error::{Result, SsiError};

/// Dense single-channel image, row-major, `f64` intensities nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image2D {
    /// Wrap a row-major buffer. Rejects length mismatches and non-finite values.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(SsiError::param(format!(
                "buffer of {} values does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(SsiError::param(format!("non-finite value at index {i}")));
        }
        Ok(Image2D { width, height, data })
    }

    /// Internal constructor for buffers produced by finite arithmetic.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Image2D { width, height, data }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image2D { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image2D { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Overwrite one pixel. Non-finite values are rejected.
    pub fn set(&mut self, x: usize, y: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(SsiError::param("non-finite pixel value"));
        }
        if x >= self.width || y >= self.height {
            return Err(SsiError::param(format!("pixel ({x}, {y}) out of bounds")));
        }
        self.data[y * self.width + x] = value;
        Ok(())
    }

    pub fn ensure_same_shape(&self, other: &Image2D) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(SsiError::param(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image2D {
        Image2D::from_raw(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Image2D {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Pad every side by mirroring (edge pixel repeated, `d c b a | a b c d`).
    pub fn pad_reflect(&self, left: usize, right: usize, top: usize, bottom: usize) -> Image2D {
        let w = self.width + left + right;
        let h = self.height + top + bottom;
        Image2D::from_fn(w, h, |x, y| {
            let sx = reflect_index(x as isize - left as isize, self.width);
            let sy = reflect_index(y as isize - top as isize, self.height);
            self.get(sx, sy)
        })
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Image2D> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(SsiError::param("crop window exceeds image"));
        }
        Ok(Image2D::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y)))
    }
}

/// Half-sample symmetric reflection of an index into `0..n`; valid for any offset.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_buffers() {
        assert!(Image2D::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image2D::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(Image2D::new(2, 1, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn reflect_index_mirrors() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }

    #[test]
    fn pad_then_crop_roundtrips() {
        let img = Image2D::from_fn(5, 3, |x, y| (x * 10 + y) as f64);
        let padded = img.pad_reflect(2, 1, 0, 3);
        assert_eq!(padded.shape(), (8, 6));
        assert_eq!(padded.crop(2, 0, 5, 3).unwrap(), img);
        assert_eq!(padded.get(0, 0), img.get(1, 0));
    }
}
