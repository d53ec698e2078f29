use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use ssi_ffi::*;

const PSF: SsiPsf = SsiPsf { sigma: 1.0, radius: 2 };

fn last_error() -> String {
    unsafe { CStr::from_ptr(ssi_last_error()) }.to_string_lossy().into_owned()
}

fn scene(w: usize, h: usize) -> Vec<f64> {
    (0..w * h).map(|i| 0.2 + 0.6 * (((i % w) / 3 + (i / w) / 3) % 2) as f64).collect()
}

fn image(w: usize, h: usize, data: &[f64]) -> *mut SsiImage {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ssi_image_new(w, h, data.as_ptr(), &mut out) }, SsiStatus::Ok);
    out
}

fn pixels(img: *const SsiImage) -> Vec<f64> {
    let (mut w, mut h) = (0, 0);
    unsafe {
        assert_eq!(ssi_image_shape(img, &mut w, &mut h), SsiStatus::Ok);
        let mut buf = vec![0.0; w * h];
        assert_eq!(ssi_image_copy_data(img, buf.as_mut_ptr(), buf.len()), SsiStatus::Ok);
        buf
    }
}

#[test]
fn image_round_trip() {
    let data = scene(6, 4);
    let img = image(6, 4, &data);
    assert_eq!(pixels(img), data);
    let mut short = vec![0.0; 3];
    let st = unsafe { ssi_image_copy_data(img, short.as_mut_ptr(), 3) };
    assert_eq!(st, SsiStatus::InvalidParameter);
    assert!(last_error().contains("buffer"));
    unsafe { ssi_image_free(img) };
    unsafe { ssi_image_free(ptr::null_mut()) };
}

#[test]
fn null_and_parameter_errors() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ssi_image_new(2, 2, ptr::null(), &mut out) }, SsiStatus::NullPointer);
    assert!(out.is_null());
    assert!(last_error().contains("data"));
    let img = image(16, 16, &scene(16, 16));
    let bad = SsiPsf { sigma: -1.0, radius: 2 };
    assert_eq!(unsafe { ssi_lucy_richardson(img, &bad, 3, &mut out) }, SsiStatus::InvalidParameter);
    assert!(!last_error().is_empty());
    let mut m = SsiMetrics::default();
    assert_eq!(unsafe { ssi_metrics(img, img, &mut m) }, SsiStatus::Ok);
    assert!(last_error().is_empty());
    unsafe { ssi_image_free(img) };
}

#[test]
fn missing_file_is_io_error() {
    let path = CString::new("/nonexistent/dir/none.png").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ssi_image_read(path.as_ptr(), &mut out) }, SsiStatus::Io);
    assert!(last_error().contains("none.png"));
}

#[test]
fn metrics_of_identical_images() {
    let img = image(16, 16, &scene(16, 16));
    let mut m = SsiMetrics::default();
    assert_eq!(unsafe { ssi_metrics(img, img, &mut m) }, SsiStatus::Ok);
    assert_eq!(m.psnr, 100.0);
    assert!((m.ssim - 1.0).abs() < 1e-12 && (m.mi - 1.0).abs() < 1e-12 && (m.smi - 1.0).abs() < 1e-12);
    unsafe { ssi_image_free(img) };
}

#[test]
fn degrade_then_classical_solvers() {
    let clean = image(24, 24, &scene(24, 24));
    let noise = SsiNoise { alpha: 0.0, sigma: 0.01, pepper: 0.0, bits: 16, seed: 3 };
    let mut y = ptr::null_mut();
    unsafe {
        assert_eq!(ssi_degrade(clean, &PSF, &noise, &mut y), SsiStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(ssi_degrade(clean, &PSF, &noise, &mut again), SsiStatus::Ok);
        assert_eq!(pixels(y), pixels(again));
        ssi_image_free(again);

        let (mut lr, mut cp, mut cg) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(ssi_lucy_richardson(y, &PSF, 5, &mut lr), SsiStatus::Ok);
        assert_eq!(ssi_tv_primal_dual(y, &PSF, 0.01, 50, 1e-3, &mut cp), SsiStatus::Ok);
        let mut failed = 7u8;
        assert_eq!(ssi_tv_conjugate_gradient(y, &PSF, 0.01, 30, 1e-3, &mut failed, &mut cg), SsiStatus::Ok);
        assert!(failed <= 1);
        for img in [lr, cp, cg] {
            assert_eq!(pixels(img).len(), 24 * 24);
            assert!(pixels(img).iter().all(|v| v.is_finite()));
            ssi_image_free(img);
        }
        ssi_image_free(y);
        ssi_image_free(clean);
    }
}

#[test]
fn train_save_load_infer() {
    let y = image(16, 16, &scene(16, 16));
    let opts = SsiTrainOptions { epochs: 2, batches_per_epoch: 2, depth: 1, base_channels: 4, ..ssi_train_options_default() };
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("net.ckpt").to_str().unwrap()).unwrap();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(ssi_train(y, &PSF, &opts, &mut model), SsiStatus::Ok);
        assert_eq!(ssi_model_save(model, path.as_ptr()), SsiStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(ssi_model_load(path.as_ptr(), &mut loaded), SsiStatus::Ok);
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(ssi_infer(model, y, &mut a), SsiStatus::Ok);
        assert_eq!(ssi_infer(loaded, y, &mut b), SsiStatus::Ok);
        let out = pixels(a);
        assert_eq!(out, pixels(b));
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        for img in [a, b, y] {
            ssi_image_free(img);
        }
        ssi_model_free(model);
        ssi_model_free(loaded);
    }
}

#[test]
fn diverging_training_reports_numeric_failure() {
    let y = image(16, 16, &scene(16, 16));
    let opts = SsiTrainOptions {
        epochs: 4,
        batches_per_epoch: 2,
        depth: 1,
        base_channels: 4,
        learning_rate: 1e300,
        ..ssi_train_options_default()
    };
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { ssi_train(y, &PSF, &opts, &mut model) }, SsiStatus::NumericFailure);
    assert!(model.is_null());
    assert!(last_error().contains("non-finite"));
    unsafe { ssi_image_free(y) };
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ssi.h");
    assert!(header.exists());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ SsiImage *img = 0; SsiTrainOptions o = ssi_train_options_default(); \
             (void)o; ssi_image_free(img); return ssi_last_error() == 0; }}\n",
            header.display()
        ),
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc).args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).output() {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(e) => eprintln!("skipping header check, no C compiler ({cc}): {e}"),
    }
}
