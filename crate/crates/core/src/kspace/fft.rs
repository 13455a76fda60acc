//! Centered 2-D DFT. The forward transform is unnormalized and the inverse
//! carries the `1 / (H W)` factor, so `sum |x|^2 = sum |X|^2 / (H W)`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use super::{Image, KspaceError};

/// Complex k-space grid with the DC bin at `(H / 2, W / 2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpace {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl KSpace {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self, KspaceError> {
        if height * width != data.len() {
            return Err(KspaceError::InvalidParam(format!(
                "{} bins for a {height}x{width} grid",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.width + c]
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.width..(r + 1) * self.width]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Complex64] {
        &mut self.data[r * self.width..(r + 1) * self.width]
    }

    /// Signed frequency index of centered row `r`.
    pub fn row_frequency(&self, r: usize) -> isize {
        r as isize - (self.height / 2) as isize
    }

    pub fn col_frequency(&self, c: usize) -> isize {
        c as isize - (self.width / 2) as isize
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, dir: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, dir))
}

/// In-place unnormalized 2-D transform of a row-major buffer.
fn transform(h: usize, w: usize, buf: &mut [Complex64], dir: FftDirection) {
    plan(w, dir).process(buf);
    let mut t = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        for x in 0..w {
            t[x * h + y] = buf[y * w + x];
        }
    }
    plan(h, dir).process(&mut t);
    for x in 0..w {
        for y in 0..h {
            buf[y * w + x] = t[x * h + y];
        }
    }
}

/// Moves bin 0 to the center: `out[(i + n/2) % n] = in[i]` on both axes.
fn shift(h: usize, w: usize, src: &[Complex64], forward: bool) -> Vec<Complex64> {
    let (oy, ox) = (h / 2, w / 2);
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        for x in 0..w {
            let (ty, tx) = ((y + oy) % h, (x + ox) % w);
            if forward {
                out[ty * w + tx] = src[y * w + x];
            } else {
                out[y * w + x] = src[ty * w + tx];
            }
        }
    }
    out
}

pub fn fft2_centered(img: &Image) -> Result<KSpace, KspaceError> {
    let (h, w) = (img.height(), img.width());
    if h < 4 || w < 4 {
        return Err(KspaceError::TooSmall { height: h, width: w });
    }
    if img.data().iter().any(|v| !v.is_finite()) {
        return Err(KspaceError::NonFinite);
    }
    let mut buf: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(h, w, &mut buf, FftDirection::Forward);
    KSpace::new(h, w, shift(h, w, &buf, true))
}

/// Full complex inverse of [`fft2_centered`].
pub fn ifft2_centered_complex(k: &KSpace) -> Vec<Complex64> {
    let (h, w) = (k.height(), k.width());
    let mut buf = shift(h, w, k.data(), false);
    transform(h, w, &mut buf, FftDirection::Inverse);
    let norm = 1.0 / (h * w) as f64;
    buf.iter_mut().for_each(|c| *c *= norm);
    buf
}

/// Real part of the inverse transform.
pub fn ifft2_centered(k: &KSpace) -> Image {
    let data = ifft2_centered_complex(k).into_iter().map(|c| c.re).collect();
    Image::new(k.height(), k.width(), data).expect("finite k-space gives a finite image")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo_image(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, x| ((y * 31 + x * 17) % 23) as f64 / 23.0)
    }

    #[test]
    fn constant_image_has_only_dc() {
        let img = Image::filled(8, 6, 0.7);
        let k = fft2_centered(&img).unwrap();
        for r in 0..8 {
            for c in 0..6 {
                let v = k.get(r, c);
                if (r, c) == (4, 3) {
                    assert!((v.re - 0.7 * 48.0).abs() < 1e-12 && v.im.abs() < 1e-12);
                } else {
                    assert!(v.norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        for (h, w) in [(8, 8), (12, 10), (9, 7)] {
            let img = pseudo_image(h, w);
            let k = fft2_centered(&img).unwrap();
            assert!(ifft2_centered(&k).max_abs_diff(&img) < 1e-12);
            let e_img: f64 = img.data().iter().map(|v| v * v).sum();
            let rel = (k.energy() / (h * w) as f64 - e_img).abs() / e_img;
            assert!(rel < 1e-12);
        }
    }

    #[test]
    fn rejects_tiny_or_nonfinite() {
        assert!(fft2_centered(&Image::filled(3, 8, 0.0)).is_err());
        let mut img = Image::filled(4, 4, 0.0);
        img.data_mut()[3] = f64::NAN;
        assert!(fft2_centered(&img).is_err());
    }
}
