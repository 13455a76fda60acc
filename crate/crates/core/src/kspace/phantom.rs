//! Ellipse phantoms standing in for cine slices. A [`DomainSpec`] controls the
//! intensity scale, background texture spectrum, ellipse shapes and noise, so
//! two specs produce two statistically distinct domains.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ifft2_centered_complex, KSpace, KspaceError, Image};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    /// Square image extent in pixels.
    pub size: usize,
    /// Range of the brightest-tissue intensity.
    pub intensity: [f64; 2],
    /// Range of the additive background level.
    pub background: [f64; 2],
    /// Standard deviation of the background texture field.
    pub texture_amplitude: f64,
    /// Power-law exponent of the texture spectrum; larger is smoother.
    pub texture_exponent: f64,
    /// Minor/major axis ratio range of the body and heart ellipses.
    pub axis_ratio: [f64; 2],
    /// Standard deviation of white noise added after degradation.
    pub noise_sigma: f64,
}

impl DomainSpec {
    /// Bright, smooth, round phantoms with little noise.
    pub fn standard_source(size: usize) -> Self {
        Self {
            name: "source".into(),
            size,
            intensity: [0.85, 1.0],
            background: [0.0, 0.04],
            texture_amplitude: 0.015,
            texture_exponent: 3.0,
            axis_ratio: [0.8, 1.0],
            noise_sigma: 0.005,
        }
    }

    /// Darker, rougher, more eccentric phantoms with more noise.
    pub fn standard_target(size: usize) -> Self {
        Self {
            name: "target".into(),
            size,
            intensity: [0.45, 0.6],
            background: [0.08, 0.16],
            texture_amplitude: 0.035,
            texture_exponent: 1.0,
            axis_ratio: [0.55, 0.75],
            noise_sigma: 0.015,
        }
    }

    pub fn validate(&self) -> Result<(), KspaceError> {
        let bad = |msg: &str| Err(KspaceError::InvalidParam(format!("domain `{}`: {msg}", self.name)));
        if self.size < 8 || self.size % 2 != 0 {
            return bad("size must be even and at least 8");
        }
        for (name, [lo, hi]) in [("intensity", self.intensity), ("background", self.background), ("axis_ratio", self.axis_ratio)] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi && hi <= 1.0) {
                return bad(&format!("{name} must be an ordered range inside [0, 1]"));
            }
        }
        if self.axis_ratio[0] <= 0.0 {
            return bad("axis_ratio must be positive");
        }
        if !(self.texture_amplitude >= 0.0 && self.noise_sigma >= 0.0 && self.texture_exponent.is_finite()) {
            return bad("texture and noise parameters must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

/// Per-patient anatomy, jittered per slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Anatomy {
    layers: Vec<Ellipse>,
    scale: f64,
    background: f64,
}

fn range(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Body, optional organs, myocardium and blood pool, drawn back to front.
pub fn draw_anatomy(spec: &DomainSpec, rng: &mut impl Rng) -> Anatomy {
    let n = spec.size as f64;
    let c = (n - 1.0) / 2.0;
    let mut layers = Vec::with_capacity(6);

    let body_major = n * rng.random_range(0.38..0.46);
    let body_ratio = range(rng, spec.axis_ratio);
    layers.push(Ellipse {
        cy: c + rng.random_range(-0.03..0.03) * n,
        cx: c + rng.random_range(-0.03..0.03) * n,
        ry: body_major * body_ratio,
        rx: body_major,
        angle: rng.random_range(-0.3..0.3),
        value: rng.random_range(0.3..0.42),
    });

    let extras = rng.random_range(0..=3);
    for _ in 0..extras {
        let angle = rng.random_range(0.0..2.0 * PI);
        let dist = n * rng.random_range(0.2..0.3);
        layers.push(Ellipse {
            cy: c + dist * angle.sin(),
            cx: c + dist * angle.cos(),
            ry: n * rng.random_range(0.05..0.1),
            rx: n * rng.random_range(0.05..0.1),
            angle: rng.random_range(0.0..PI),
            value: rng.random_range(0.05..0.6),
        });
    }

    let heart_major = n * rng.random_range(0.15..0.2);
    let heart_ratio = range(rng, spec.axis_ratio);
    let (hy, hx) = (c + rng.random_range(-0.06..0.06) * n, c + rng.random_range(-0.06..0.06) * n);
    let heart_angle = rng.random_range(0.0..PI);
    layers.push(Ellipse {
        cy: hy,
        cx: hx,
        ry: heart_major * heart_ratio,
        rx: heart_major,
        angle: heart_angle,
        value: rng.random_range(0.45..0.55),
    });
    let wall = rng.random_range(0.55..0.7);
    layers.push(Ellipse {
        cy: hy,
        cx: hx,
        ry: heart_major * heart_ratio * wall,
        rx: heart_major * wall,
        angle: heart_angle,
        value: rng.random_range(0.9..1.0),
    });

    Anatomy { layers, scale: range(rng, spec.intensity), background: range(rng, spec.background) }
}

/// Zero-mean unit-variance random field with power spectrum `(1 + |k|)^-exponent`.
pub fn texture_field(size: usize, exponent: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut bins = Vec::with_capacity(size * size);
    let half = (size / 2) as f64;
    for r in 0..size {
        for c in 0..size {
            let (fy, fx) = (r as f64 - half, c as f64 - half);
            let radius = (fy * fy + fx * fx).sqrt();
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            let amp = if radius == 0.0 { 0.0 } else { (1.0 + radius).powf(-exponent / 2.0) };
            bins.push(Complex64::new(re, im) * amp);
        }
    }
    let k = KSpace::new(size, size, bins).expect("square grid");
    let field: Vec<f64> = ifft2_centered_complex(&k).into_iter().map(|c| c.re).collect();
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / field.len() as f64;
    let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    field.into_iter().map(|v| (v - mean) * inv).collect()
}

const SUPERSAMPLE: usize = 3;

/// One clean slice: anatomy with per-slice jitter, supersampled edges and texture.
pub fn render_slice(spec: &DomainSpec, anatomy: &Anatomy, rng: &mut impl Rng) -> Image {
    let n = spec.size;
    let mut layers = anatomy.layers.clone();
    let (shift_y, shift_x) = (rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5));
    for e in &mut layers {
        e.ry *= rng.random_range(0.8..1.2);
        e.rx *= rng.random_range(0.8..1.2);
        e.cy += shift_y + rng.random_range(-1.5..1.5);
        e.cx += shift_x + rng.random_range(-1.5..1.5);
        e.angle += rng.random_range(-0.4..0.4);
        e.value = (e.value * rng.random_range(0.9..1.1)).min(1.0);
    }
    let texture = texture_field(n, spec.texture_exponent, rng);
    let step = 1.0 / SUPERSAMPLE as f64;
    Image::from_fn(n, n, |y, x| {
        let mut acc = 0.0;
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let py = y as f64 - 0.5 + (sy as f64 + 0.5) * step;
                let px = x as f64 - 0.5 + (sx as f64 + 0.5) * step;
                let v = layers.iter().rev().find(|e| e.contains(py, px)).map_or(0.0, |e| e.value);
                acc += v;
            }
        }
        let tissue = acc / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        anatomy.background + anatomy.scale * tissue + spec.texture_amplitude * texture[y * n + x]
    })
    .clamp01()
}
