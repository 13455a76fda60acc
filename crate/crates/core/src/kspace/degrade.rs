//! The four k-space degradations. Rows are the phase-encode direction for
//! every row-wise corruption, and every output is clamped to `[0, 1]`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fft2_centered, ifft2_centered, Image, KSpace, KspaceError};

/// Inclusive signed-frequency band `[-a, b]` of `round(fraction * n)` bins
/// around DC. The full fraction covers every bin.
pub fn central_band(n: usize, fraction: f64) -> (isize, isize) {
    let kept = ((fraction * n as f64).round() as usize).clamp(1, n);
    let lo = (kept / 2) as isize;
    let hi = (kept - 1) as isize - lo;
    (-lo, hi)
}

/// Ideal rectangular low-pass in k-space (signal truncation).
pub fn gibbs_truncate(img: &Image, keep_fraction: f64) -> Result<Image, KspaceError> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(KspaceError::InvalidParam(format!("keep_fraction {keep_fraction} outside (0, 1]")));
    }
    let mut k = fft2_centered(img)?;
    let (rlo, rhi) = central_band(k.height(), keep_fraction);
    let (clo, chi) = central_band(k.width(), keep_fraction);
    for r in 0..k.height() {
        let fr = k.row_frequency(r);
        let row_kept = (rlo..=rhi).contains(&fr);
        for c in 0..k.width() {
            let fc = k.col_frequency(c);
            if !row_kept || !(clo..=chi).contains(&fc) {
                k.data_mut()[r * img.width() + c] = Complex64::new(0.0, 0.0);
            }
        }
    }
    Ok(ifft2_centered(&k).clamp01())
}

/// Phase-encode undersampling by `factor`, keeping `center_keep` rows around DC.
///
/// Comb rows are those whose signed frequency is a multiple of `factor`;
/// without the center band the result is the average of `factor` copies of
/// the image rolled by multiples of `H / factor` rows.
pub fn alias_subsample(img: &Image, factor: usize, center_keep: usize) -> Result<Image, KspaceError> {
    let h = img.height();
    if factor < 2 {
        return Err(KspaceError::InvalidParam(format!("aliasing factor {factor} must be at least 2")));
    }
    if h % factor != 0 {
        return Err(KspaceError::InvalidParam(format!("height {h} is not divisible by factor {factor}")));
    }
    if center_keep % 2 != 0 || center_keep >= h {
        return Err(KspaceError::InvalidParam(format!(
            "center_keep {center_keep} must be even and below the height {h}"
        )));
    }
    let mut k = fft2_centered(img)?;
    let half = (center_keep / 2) as isize;
    for r in 0..h {
        let f = k.row_frequency(r);
        let on_comb = f.rem_euclid(factor as isize) == 0;
        let in_center = f >= -half && f < half;
        if !on_comb && !in_center {
            k.row_mut(r).fill(Complex64::new(0.0, 0.0));
        }
    }
    Ok(ifft2_centered(&k).clamp01())
}

/// Multiplies centered row `r` by the linear phase of a vertical shift `d`.
fn shift_row(k: &mut KSpace, r: usize, d: f64) {
    let f = k.row_frequency(r) as f64;
    let h = k.height() as f64;
    let phase = Complex64::from_polar(1.0, -2.0 * PI * f * d / h);
    for v in k.row_mut(r) {
        *v *= phase;
    }
}

/// Rigid vertical motion during sequential top-to-bottom line acquisition.
///
/// Row `r` is acquired at `t = r / H` while the object is displaced by
/// `amplitude_px * sin(2 pi cycles t + phase0)` rows.
pub fn respiratory_motion(img: &Image, amplitude_px: f64, cycles: f64, phase0: f64) -> Result<Image, KspaceError> {
    if !(amplitude_px >= 0.0) || !cycles.is_finite() || !phase0.is_finite() {
        return Err(KspaceError::InvalidParam(format!(
            "respiratory motion needs amplitude >= 0 and finite timing, got {amplitude_px}, {cycles}, {phase0}"
        )));
    }
    let mut k = fft2_centered(img)?;
    let h = k.height();
    for r in 0..h {
        let t = r as f64 / h as f64;
        let d = amplitude_px * (2.0 * PI * cycles * t + phase0).sin();
        shift_row(&mut k, r, d);
    }
    Ok(ifft2_centered(&k).clamp01())
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn bilinear(img: &Image, y: f64, x: f64) -> f64 {
    let (h, w) = (img.height(), img.width());
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = img.get(y0, x0) * (1.0 - fx) + img.get(y0, x1) * fx;
    let bottom = img.get(y1, x0) * (1.0 - fx) + img.get(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Radially scales the central region by `1 + strength`, blending back to the
/// identity between 30% and 50% of the smaller extent from the center.
pub fn radial_deform(img: &Image, strength: f64) -> Image {
    let (h, w) = (img.height(), img.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let m = h.min(w) as f64;
    let (r0, r1) = (0.3 * m, 0.5 * m);
    Image::from_fn(h, w, |y, x| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        let rho = (dy * dy + dx * dx).sqrt();
        let weight = 1.0 - smoothstep(r0, r1, rho);
        let scale = 1.0 + strength * weight;
        bilinear(img, cy + dy / scale, cx + dx / scale)
    })
}

/// Rows replaced by the cardiac-motion model: `floor(fraction * H)` distinct
/// rows drawn with a Gaussian preference for the center band.
pub fn cardiac_rows(height: usize, line_fraction: f64, seed: u64) -> Vec<usize> {
    let n = ((line_fraction * height as f64).floor() as usize).min(height);
    if n == 0 {
        return Vec::new();
    }
    let sigma = height as f64 / 4.0;
    let center = (height / 2) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rand::seq::index::sample_weighted(
        &mut rng,
        height,
        |r| {
            let d = (r as f64 - center) / sigma;
            (-d * d).exp()
        },
        n,
    )
    .expect("gaussian weights are positive and finite")
    .into_vec();
    rows.sort_unstable();
    rows
}

/// Cardiac motion: k-space rows taken from a radially deformed motion state.
pub fn cardiac_motion(img: &Image, deform_strength: f64, line_fraction: f64, seed: u64) -> Result<Image, KspaceError> {
    if !(0.0..=1.0).contains(&line_fraction) {
        return Err(KspaceError::InvalidParam(format!("line_fraction {line_fraction} outside [0, 1]")));
    }
    if !deform_strength.is_finite() || deform_strength <= -1.0 {
        return Err(KspaceError::InvalidParam(format!("deform_strength {deform_strength} must exceed -1")));
    }
    let mut k = fft2_centered(img)?;
    let moved = fft2_centered(&radial_deform(img, deform_strength))?;
    for r in cardiac_rows(img.height(), line_fraction, seed) {
        k.row_mut(r).copy_from_slice(moved.row(r));
    }
    Ok(ifft2_centered(&k).clamp01())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phantom() -> Image {
        Image::from_fn(16, 16, |y, x| {
            let (dy, dx) = (y as f64 - 7.0, x as f64 - 8.5);
            if dy * dy + dx * dx < 20.0 {
                0.9
            } else {
                0.1 + 0.01 * ((x * y) % 5) as f64
            }
        })
    }

    #[test]
    fn band_covers_everything_at_full_fraction() {
        assert_eq!(central_band(32, 1.0), (-16, 15));
        assert_eq!(central_band(32, 0.25), (-4, 3));
        assert_eq!(central_band(7, 1.0), (-3, 3));
        assert_eq!(central_band(32, 0.001), (0, 0));
    }

    #[test]
    fn zero_severity_is_identity() {
        let img = phantom();
        assert!(gibbs_truncate(&img, 1.0).unwrap().max_abs_diff(&img) < 1e-10);
        assert!(respiratory_motion(&img, 0.0, 3.0, 0.4).unwrap().max_abs_diff(&img) < 1e-10);
        assert!(cardiac_motion(&img, 0.2, 0.0, 1).unwrap().max_abs_diff(&img) < 1e-10);
        assert!(cardiac_motion(&img, 0.0, 0.7, 1).unwrap().max_abs_diff(&img) < 1e-10);
    }

    #[test]
    fn full_replacement_gives_deformed_image() {
        let img = phantom();
        let out = cardiac_motion(&img, 0.2, 1.0, 9).unwrap();
        let want = radial_deform(&img, 0.2).clamp01();
        assert!(out.max_abs_diff(&want) < 1e-8);
    }

    #[test]
    fn cardiac_rows_are_distinct_and_counted() {
        let rows = cardiac_rows(32, 0.45, 3);
        assert_eq!(rows.len(), 14);
        let mut dedup = rows.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), rows.len());
        assert_eq!(rows, cardiac_rows(32, 0.45, 3));
    }

    #[test]
    fn constant_image_survives_truncation() {
        let img = Image::filled(12, 12, 0.4);
        for f in [0.1, 0.3, 0.77] {
            assert!(gibbs_truncate(&img, f).unwrap().max_abs_diff(&img) < 1e-12);
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let img = phantom();
        assert!(gibbs_truncate(&img, 0.0).is_err());
        assert!(gibbs_truncate(&img, 1.2).is_err());
        assert!(alias_subsample(&img, 3, 0).is_err());
        assert!(alias_subsample(&img, 1, 0).is_err());
        assert!(alias_subsample(&img, 2, 16).is_err());
        assert!(alias_subsample(&img, 2, 3).is_err());
        assert!(cardiac_motion(&img, 0.1, 1.5, 0).is_err());
        assert!(respiratory_motion(&img, -1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn aliasing_preserves_mean() {
        let img = Image::from_fn(16, 16, |y, x| 0.3 + 0.2 * ((y * 3 + x) % 4) as f64 / 4.0);
        let out = alias_subsample(&img, 4, 0).unwrap();
        assert!((out.mean() - img.mean()).abs() < 1e-12);
    }
}
