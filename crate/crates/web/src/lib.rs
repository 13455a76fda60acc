//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function has a plain Rust twin so the logic can be tested
//! natively.

use uda_core::data::ArtifactClass;
use uda_core::grad::{AdamConfig, GradientPenalty, Tensor};
use uda_core::kspace::{draw_anatomy, fft2_centered, render_slice, DomainSpec, Image, Severity, SeverityRanges};
use uda_core::nets::{build_critic, NetSpec, CRITIC_INPUT, SCORE};
use uda_core::seed::stream;
use uda_core::train::{critic_inner_loop, lipschitz_distance, CriticSettings};
use wasm_bindgen::prelude::*;

fn lerp([lo, hi]: [f64; 2], t: f64) -> f64 {
    lo + (hi - lo) * t
}

/// Maps a class id and a strength in [0, 1] onto concrete degradation
/// parameters inside the default sampling ranges.
pub fn severity_for(class_id: usize, strength: f64, size: usize, seed: u64) -> Result<Severity, String> {
    let t = strength.clamp(0.0, 1.0);
    let r = SeverityRanges::default();
    let class = ArtifactClass::from_index(class_id).ok_or(format!("unknown class {class_id}"))?;
    Ok(match class {
        ArtifactClass::Clean => Severity::Clean,
        ArtifactClass::CardiacMotion => Severity::CardiacMotion {
            deform_strength: lerp(r.cardiac_deform_strength, t),
            line_fraction: lerp(r.cardiac_line_fraction, t),
            row_seed: seed,
        },
        ArtifactClass::RespiratoryMotion => Severity::RespiratoryMotion {
            amplitude_px: lerp(r.respiratory_amplitude_px, t),
            cycles: lerp(r.respiratory_cycles, t),
            phase0: 0.0,
        },
        // Stronger means fewer retained lines.
        ArtifactClass::Gibbs => Severity::Gibbs { keep_fraction: lerp(r.gibbs_keep_fraction, 1.0 - t) },
        ArtifactClass::Aliasing => {
            let factors: Vec<usize> = r.aliasing_factors.iter().copied().filter(|f| size % f == 0).collect();
            if factors.is_empty() {
                return Err(format!("no aliasing factor divides {size}"));
            }
            let i = ((t * factors.len() as f64) as usize).min(factors.len() - 1);
            Severity::Aliasing { factor: factors[i], center_keep: 0 }
        }
    })
}

/// Renders one phantom slice of the chosen domain and degrades it.
pub fn degraded_phantom(target: bool, class_id: usize, strength: f64, size: usize, seed: u64) -> Result<Vec<f64>, String> {
    if !(8..=256).contains(&size) {
        return Err(format!("size {size} outside 8..=256"));
    }
    let spec = if target { DomainSpec::standard_target(size) } else { DomainSpec::standard_source(size) };
    let mut rng = stream(seed, &[0]);
    let anatomy = draw_anatomy(&spec, &mut rng);
    let clean = render_slice(&spec, &anatomy, &mut rng);
    let sev = severity_for(class_id, strength, size, seed)?;
    let img = sev.apply(&clean).map_err(|e| e.to_string())?;
    Ok(img.into_data())
}

/// `log(1 + |K|)` of the centered spectrum, scaled to [0, 1].
pub fn log_magnitude(pixels: &[f64], size: usize) -> Result<Vec<f64>, String> {
    let img = Image::new(size, size, pixels.to_vec()).map_err(|e| e.to_string())?;
    let k = fft2_centered(&img).map_err(|e| e.to_string())?;
    let mut out: Vec<f64> = k.data().iter().map(|c| c.norm().ln_1p()).collect();
    let max = out.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        out.iter_mut().for_each(|v| *v /= max);
    }
    Ok(out)
}

/// Trains a one-dimensional critic between point masses at 0 and `gap` and
/// returns `[raw score gap, gap over the measured slope]`.
pub fn critic_estimate(gap: f64, steps: usize, lambda: f64, seed: u64) -> Result<[f64; 2], String> {
    let spec = NetSpec { feature_dim: 1, attention: false, ..NetSpec::default() };
    let mut critic = build_critic(&spec, seed).map_err(|e| e.to_string())?;
    let pen = GradientPenalty::new(&critic.graph, CRITIC_INPUT, SCORE).map_err(|e| e.to_string())?;
    let n = 32;
    let zs = Tensor::filled(&[n, 1], 0.0);
    let zt = Tensor::filled(&[n, 1], gap);
    let mut rng = stream(seed, &[1]);
    let settings = CriticSettings { steps, lambda, lr: 1e-3, adam: AdamConfig::default() };
    let report = critic_inner_loop(&mut critic, &pen, &zs, &zt, settings, &mut rng).map_err(|e| e.to_string())?;
    let normalized = lipschitz_distance(&critic, &zs, &zt).map_err(|e| e.to_string())?;
    Ok([report.distance, normalized])
}

#[wasm_bindgen]
pub fn degrade(target: bool, class_id: u32, strength: f64, size: u32, seed: u32) -> Result<Vec<f64>, JsValue> {
    degraded_phantom(target, class_id as usize, strength, size as usize, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn kspace_view(pixels: &[f64], size: u32) -> Result<Vec<f64>, JsValue> {
    log_magnitude(pixels, size as usize).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn critic_distance(gap: f64, steps: u32, lambda: f64, seed: u32) -> Result<Vec<f64>, JsValue> {
    critic_estimate(gap, steps as usize, lambda, seed as u64).map(|r| r.to_vec()).map_err(|e| JsValue::from_str(&e))
}
