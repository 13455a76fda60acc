//! Centered 2-D FFT, the four k-space artifact models, randomized severities
//! and phantom-based synthetic dataset generation.

mod degrade;
mod fft;
mod image;
mod phantom;
mod severity;
mod synth;

pub use degrade::{
    alias_subsample, cardiac_motion, cardiac_rows, central_band, gibbs_truncate, radial_deform, respiratory_motion,
};
pub use fft::{fft2_centered, ifft2_centered, ifft2_centered_complex, KSpace};
pub use image::Image;
pub use phantom::{draw_anatomy, render_slice, texture_field, Anatomy, DomainSpec};
pub use severity::{sample_severity, Severity, SeverityRanges};
pub use synth::{image_tensor, kspace_planes, synth_dataset, SynthOptions, THREADS_ENV};

#[derive(Debug, thiserror::Error)]
pub enum KspaceError {
    #[error("image {height}x{width} is too small (need at least 4x4)")]
    TooSmall { height: usize, width: usize },
    #[error("non-finite pixel value")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("unknown class id {0}")]
    UnknownClass(usize),
}
