//! Grayscale image files: PNG and PGM (8 or 16 bit) via the `image` crate, and
//! SSIF, a raw float format (`"SSIF"`, u32 LE width, u32 LE height, f32 LE
//! row-major samples).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};

use crate::error::{Result, SsiError};
use crate::tensor::Image2D;

pub const SSIF_MAGIC: &[u8; 4] = b"SSIF";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileKind {
    Png,
    Pgm,
    Ssif,
}

impl FileKind {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("png") => Ok(FileKind::Png),
            Some("pgm") | Some("pnm") => Ok(FileKind::Pgm),
            Some("ssif") | Some("raw") => Ok(FileKind::Ssif),
            _ => Err(SsiError::format(path, "unknown image extension (expected .png, .pgm or .ssif)")),
        }
    }
}

/// Read a grayscale image scaled to `[0, 1]`. Color images are converted to luma.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    if FileKind::from_path(path)? == FileKind::Ssif {
        let f = File::open(path).map_err(|e| SsiError::io(path, e))?;
        return read_ssif(&mut BufReader::new(f), path);
    }
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => SsiError::io(path, io),
        other => SsiError::format(path, other.to_string()),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) | DynamicImage::ImageLumaA8(_) => {
            img.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
        }
        other => other.to_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
    };
    Image2D::new(w, h, data)
}

/// Write `img` clamped to `[0, 1]`. `bits` (8 or 16) applies to PNG and PGM.
pub fn write_image(path: impl AsRef<Path>, img: &Image2D, bits: u8) -> Result<()> {
    let path = path.as_ref();
    let kind = FileKind::from_path(path)?;
    if kind == FileKind::Ssif {
        let f = File::create(path).map_err(|e| SsiError::io(path, e))?;
        let mut out = BufWriter::new(f);
        write_ssif(&mut out, img).and_then(|_| out.flush()).map_err(|e| SsiError::io(path, e))?;
        return Ok(());
    }
    let format = if kind == FileKind::Png { ImageFormat::Png } else { ImageFormat::Pnm };
    let (w, h) = (img.width() as u32, img.height() as u32);
    let result = match bits {
        8 => {
            let raw: Vec<u8> = img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("buffer length").save_with_format(path, format)
        }
        16 => {
            let raw: Vec<u16> = img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("buffer length").save_with_format(path, format)
        }
        _ => return Err(SsiError::param(format!("bit depth must be 8 or 16, got {bits}"))),
    };
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => SsiError::io(path, io),
        other => SsiError::format(path, other.to_string()),
    })
}

pub fn write_ssif(out: &mut impl Write, img: &Image2D) -> std::io::Result<()> {
    out.write_all(SSIF_MAGIC)?;
    out.write_all(&(img.width() as u32).to_le_bytes())?;
    out.write_all(&(img.height() as u32).to_le_bytes())?;
    for &v in img.data() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_ssif(input: &mut impl Read, origin: &Path) -> Result<Image2D> {
    let mut head = [0u8; 12];
    input.read_exact(&mut head).map_err(|_| SsiError::format(origin, "truncated SSIF header"))?;
    if &head[..4] != SSIF_MAGIC {
        return Err(SsiError::format(origin, "missing SSIF magic"));
    }
    let w = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let n = w.checked_mul(h).ok_or_else(|| SsiError::format(origin, "SSIF dimensions overflow"))?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| SsiError::io(origin, e))?;
    if bytes.len() != n * 4 {
        return Err(SsiError::format(origin, format!("expected {} data bytes, found {}", n * 4, bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Image2D::new(w, h, data).map_err(|e| SsiError::format(origin, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize) -> Image2D {
        Image2D::from_fn(w, h, |x, y| (x + w * y) as f64 / (w * h - 1) as f64)
    }

    #[test]
    fn png_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = gradient(17, 9);
        for (name, bits, tol) in [("a.png", 8, 0.5 / 255.0), ("b.png", 16, 0.5 / 65535.0), ("c.pgm", 8, 0.5 / 255.0), ("d.pgm", 16, 0.5 / 65535.0)] {
            let p = dir.path().join(name);
            write_image(&p, &img, bits).unwrap();
            let back = read_image(&p).unwrap();
            assert_eq!(back.shape(), (17, 9));
            for (a, b) in img.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= tol + 1e-12, "{name}");
            }
        }
    }

    #[test]
    fn eight_bit_values_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image2D::from_fn(16, 16, |x, y| (x + 16 * y) as f64 / 255.0);
        let p = dir.path().join("x.png");
        write_image(&p, &img, 8).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
    }

    #[test]
    fn ssif_round_trip_and_layout() {
        let img = Image2D::new(3, 2, vec![0.0, 0.25, 0.5, 1.0, -2.0, 3.5]).unwrap();
        let mut buf = Vec::new();
        write_ssif(&mut buf, &img).unwrap();
        assert_eq!(&buf[..4], b"SSIF");
        assert_eq!(&buf[4..12], &[3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(buf.len(), 12 + 6 * 4);
        assert_eq!(read_ssif(&mut buf.as_slice(), Path::new("mem")).unwrap(), img);
    }

    #[test]
    fn ssif_errors() {
        let p = Path::new("mem");
        assert!(read_ssif(&mut &b"SSI"[..], p).is_err());
        assert!(read_ssif(&mut &b"XXXX\x01\0\0\0\x01\0\0\0\0\0\0\0"[..], p).is_err());
        assert!(read_ssif(&mut &b"SSIF\x02\0\0\0\x01\0\0\0\0\0\0\0"[..], p).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_image("/nonexistent/none.png").unwrap_err();
        assert!(matches!(err, SsiError::Io { .. }), "{err:?}");
        assert!(matches!(read_image("x.tiff").unwrap_err(), SsiError::Format { .. }));
    }

    #[test]
    fn writes_clamp_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        write_image(&p, &Image2D::new(2, 1, vec![-0.5, 1.5]).unwrap(), 8).unwrap();
        assert_eq!(read_image(&p).unwrap().data(), &[0.0, 1.0]);
        assert!(write_image(&p, &Image2D::zeros(2, 2), 12).is_err());
    }
}
