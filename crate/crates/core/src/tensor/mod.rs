//! Dense image arithmetic, PSF synthesis and the convolutional forward model.

mod conv;
mod fft;
mod image;
mod kernel;

pub use conv::{convolve, convolve_adjoint, Boundary, ForwardModel};
pub use fft::{fft_convolve, log_spectrum};
pub use image::Image2D;
pub use kernel::{gaussian_psf, Kernel};
