//! C ABI over `ssi-core`.
//!
//! Images and models are opaque heap handles owned by the caller and released
//! with the matching `*_free` function. Every fallible call returns an
//! [`SsiStatus`]; on failure [`ssi_last_error`] describes the cause for the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ssi_core::classical::{cg_tv, chambolle_pock_tv, lucy_richardson, TvConfig};
use ssi_core::degrade::{apply_noise, NoiseSpec};
use ssi_core::io::{read_image, write_image};
use ssi_core::metrics::MetricReport;
use ssi_core::neural::{load_checkpoint, save_checkpoint, ModelParams, UNetConfig};
use ssi_core::tensor::{convolve, gaussian_psf, Boundary, ForwardModel, Image2D};
use ssi_core::trainer::{infer, train, Regularization, TrainConfig};
use ssi_core::SsiError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    InvalidState = 3,
    NumericFailure = 4,
    Io = 5,
    Format = 6,
    Panic = 7,
}

/// Grayscale image with values nominally in `[0, 1]`.
pub struct SsiImage(Image2D);

/// Trained network parameters.
pub struct SsiModel(ModelParams);

/// Gaussian point spread function.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SsiPsf {
    pub sigma: f64,
    pub radius: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SsiNoise {
    pub alpha: f64,
    pub sigma: f64,
    pub pepper: f64,
    pub bits: u32,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SsiTrainOptions {
    pub epochs: u32,
    pub batches_per_epoch: u32,
    pub depth: u32,
    pub base_channels: u32,
    pub learning_rate: f64,
    pub l1: f64,
    pub l2: f64,
    pub seed: u64,
    /// Nonzero trains on the unmasked full-image loss.
    pub no_mask: u8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SsiMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub mi: f64,
    pub smi: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &SsiError) -> SsiStatus {
    match e {
        SsiError::Parameter(_) => SsiStatus::InvalidParameter,
        SsiError::State(_) => SsiStatus::InvalidState,
        SsiError::NonFiniteLoss { .. } => SsiStatus::NumericFailure,
        SsiError::Io { .. } => SsiStatus::Io,
        SsiError::Format { .. } => SsiStatus::Format,
    }
}

enum Failure {
    Null(&'static str),
    Core(SsiError),
}

impl From<SsiError> for Failure {
    fn from(e: SsiError) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SsiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SsiStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            SsiStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            SsiStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| SsiError::param(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn psf_model(psf: &SsiPsf, boundary: Boundary) -> Result<ForwardModel, SsiError> {
    Ok(ForwardModel::new(gaussian_psf(psf.sigma, psf.radius as usize)?, boundary))
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ssi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Copies `width * height` row-major values from `data` into a new image.
///
/// # Safety
/// `data` must point to `width * height` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssi_image_new(width: usize, height: usize, data: *const f64, out: *mut *mut SsiImage) -> SsiStatus {
    guard(|| {
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        let n = width.checked_mul(height).ok_or_else(|| SsiError::param("image size overflows"))?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        emit(out, SsiImage(Image2D::new(width, height, values)?))
    })
}

/// # Safety
/// `image` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ssi_image_free(image: *mut SsiImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// # Safety
/// `image` must be a live handle; `width` and `height` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssi_image_shape(image: *const SsiImage, width: *mut usize, height: *mut usize) -> SsiStatus {
    guard(|| {
        let img = deref(image, "image")?;
        if width.is_null() || height.is_null() {
            return Err(Failure::Null("width/height"));
        }
        (*width, *height) = img.0.shape();
        Ok(())
    })
}

/// Copies the pixels row-major into `buffer`, which must hold exactly `len` doubles.
///
/// # Safety
/// `image` must be a live handle; `buffer` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ssi_image_copy_data(image: *const SsiImage, buffer: *mut f64, len: usize) -> SsiStatus {
    guard(|| {
        let img = deref(image, "image")?;
        if buffer.is_null() {
            return Err(Failure::Null("buffer"));
        }
        if len != img.0.len() {
            return Err(SsiError::param(format!("buffer holds {len} values, image has {}", img.0.len())).into());
        }
        std::slice::from_raw_parts_mut(buffer, len).copy_from_slice(img.0.data());
        Ok(())
    })
}

/// Reads a PNG, PGM or SSIF file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssi_image_read(path: *const c_char, out: *mut *mut SsiImage) -> SsiStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        emit(out, SsiImage(read_image(&p)?))
    })
}

/// Writes the image; `bits` is 8 or 16 for PNG and PGM and ignored for SSIF.
///
/// # Safety
/// `image` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ssi_image_write(image: *const SsiImage, path: *const c_char, bits: u32) -> SsiStatus {
    guard(|| {
        let img = deref(image, "image")?;
        let p = path_arg(path, "path")?;
        let bits = u8::try_from(bits).map_err(|_| SsiError::param(format!("unsupported bit depth {bits}")))?;
        Ok(write_image(&p, &img.0, bits)?)
    })
}

/// Blurs `clean` with the PSF (reflect boundary) and applies the noise model.
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssi_degrade(
    clean: *const SsiImage,
    psf: *const SsiPsf,
    noise: *const SsiNoise,
    out: *mut *mut SsiImage,
) -> SsiStatus {
    guard(|| {
        let (x, psf, n) = (deref(clean, "clean")?, deref(psf, "psf")?, deref(noise, "noise")?);
        let spec = NoiseSpec { alpha: n.alpha, sigma: n.sigma, p: n.pepper, bits: n.bits, seed: n.seed };
        let blurred = convolve(&x.0, &gaussian_psf(psf.sigma, psf.radius as usize)?, Boundary::Reflect)?;
        emit(out, SsiImage(apply_noise(&blurred, &spec)?))
    })
}

/// Library defaults for [`ssi_train`].
#[no_mangle]
pub extern "C" fn ssi_train_options_default() -> SsiTrainOptions {
    let d = TrainConfig::default();
    SsiTrainOptions {
        epochs: d.epochs as u32,
        batches_per_epoch: d.batches_per_epoch as u32,
        depth: d.unet.depth as u32,
        base_channels: d.unet.base_channels as u32,
        learning_rate: d.adam.lr,
        l1: d.reg.l1,
        l2: d.reg.l2,
        seed: d.seed,
        no_mask: d.no_mask as u8,
    }
}

/// Fits a network to the single observation `observed` blurred by `psf`.
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssi_train(
    observed: *const SsiImage,
    psf: *const SsiPsf,
    options: *const SsiTrainOptions,
    out: *mut *mut SsiModel,
) -> SsiStatus {
    guard(|| {
        let (y, psf, o) = (deref(observed, "observed")?, deref(psf, "psf")?, deref(options, "options")?);
        let mut cfg = TrainConfig {
            epochs: o.epochs as usize,
            batches_per_epoch: o.batches_per_epoch as usize,
            reg: Regularization { l1: o.l1, l2: o.l2 },
            unet: UNetConfig { depth: o.depth as usize, base_channels: o.base_channels as usize, seed: 0 },
            no_mask: o.no_mask != 0,
            ..Default::default()
        }
        .with_seed(o.seed);
        cfg.adam.lr = o.learning_rate;
        let kernel = gaussian_psf(psf.sigma, psf.radius as usize)?;
        emit(out, SsiModel(train(&y.0, &kernel, &cfg)?.params))
    })
}

/// Deconvolved estimate of `observed`, clamped to `[0, 1]`.
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssi_infer(model: *const SsiModel, observed: *const SsiImage, out: *mut *mut SsiImage) -> SsiStatus {
    guard(|| {
        let (m, y) = (deref(model, "model")?, deref(observed, "observed")?);
        emit(out, SsiImage(infer(&m.0, &y.0)?))
    })
}

/// # Safety
/// `model` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ssi_model_free(model: *mut SsiModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ssi_model_save(model: *const SsiModel, path: *const c_char) -> SsiStatus {
    guard(|| {
        let m = deref(model, "model")?;
        Ok(save_checkpoint(&m.0, &path_arg(path, "path")?)?)
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssi_model_load(path: *const c_char, out: *mut *mut SsiModel) -> SsiStatus {
    guard(|| emit(out, SsiModel(load_checkpoint(&path_arg(path, "path")?)?)))
}

/// Richardson-Lucy deconvolution (reflect boundary).
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssi_lucy_richardson(
    observed: *const SsiImage,
    psf: *const SsiPsf,
    iters: u32,
    out: *mut *mut SsiImage,
) -> SsiStatus {
    guard(|| {
        let (y, psf) = (deref(observed, "observed")?, deref(psf, "psf")?);
        let model = psf_model(psf, Boundary::Reflect)?;
        emit(out, SsiImage(lucy_richardson(&y.0, &model, iters as usize)?))
    })
}

/// TV-regularized deconvolution by primal-dual iterations (reflect boundary).
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssi_tv_primal_dual(
    observed: *const SsiImage,
    psf: *const SsiPsf,
    lambda: f64,
    iters: u32,
    eps_tv: f64,
    out: *mut *mut SsiImage,
) -> SsiStatus {
    guard(|| {
        let (y, psf) = (deref(observed, "observed")?, deref(psf, "psf")?);
        let model = psf_model(psf, Boundary::Reflect)?;
        let cfg = TvConfig::new(lambda, iters as usize, eps_tv)?;
        emit(out, SsiImage(chambolle_pock_tv(&y.0, &model, &cfg)?))
    })
}

/// Smoothed-TV deconvolution by nonlinear conjugate gradients (reflect
/// boundary). `line_search_failed` may be null.
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssi_tv_conjugate_gradient(
    observed: *const SsiImage,
    psf: *const SsiPsf,
    lambda: f64,
    iters: u32,
    eps_tv: f64,
    line_search_failed: *mut u8,
    out: *mut *mut SsiImage,
) -> SsiStatus {
    guard(|| {
        let (y, psf) = (deref(observed, "observed")?, deref(psf, "psf")?);
        let model = psf_model(psf, Boundary::Reflect)?;
        let cfg = TvConfig::new(lambda, iters as usize, eps_tv)?;
        let res = cg_tv(&y.0, &model, &cfg)?;
        if !line_search_failed.is_null() {
            *line_search_failed = res.line_search_failed as u8;
        }
        emit(out, SsiImage(res.image))
    })
}

/// PSNR (peak 1), SSIM, MI and SMI of `estimate` against `reference`.
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssi_metrics(
    reference: *const SsiImage,
    estimate: *const SsiImage,
    out: *mut SsiMetrics,
) -> SsiStatus {
    guard(|| {
        let (r, e) = (deref(reference, "reference")?, deref(estimate, "estimate")?);
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let m = MetricReport::compute(&r.0, &e.0)?;
        *out = SsiMetrics { psnr: m.psnr, ssim: m.ssim, mi: m.mi, smi: m.smi };
        Ok(())
    })
}
