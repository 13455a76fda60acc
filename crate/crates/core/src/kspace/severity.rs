use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::degrade::{alias_subsample, cardiac_motion, gibbs_truncate, respiratory_motion};
use super::{Image, KspaceError};
use crate::data::ArtifactClass;

/// Parameters of one degradation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Severity {
    Clean,
    CardiacMotion { deform_strength: f64, line_fraction: f64, row_seed: u64 },
    RespiratoryMotion { amplitude_px: f64, cycles: f64, phase0: f64 },
    Gibbs { keep_fraction: f64 },
    Aliasing { factor: usize, center_keep: usize },
}

impl Severity {
    pub fn class(&self) -> ArtifactClass {
        match self {
            Severity::Clean => ArtifactClass::Clean,
            Severity::CardiacMotion { .. } => ArtifactClass::CardiacMotion,
            Severity::RespiratoryMotion { .. } => ArtifactClass::RespiratoryMotion,
            Severity::Gibbs { .. } => ArtifactClass::Gibbs,
            Severity::Aliasing { .. } => ArtifactClass::Aliasing,
        }
    }

    pub fn apply(&self, img: &Image) -> Result<Image, KspaceError> {
        match *self {
            Severity::Clean => Ok(img.clone().clamp01()),
            Severity::CardiacMotion { deform_strength, line_fraction, row_seed } => {
                cardiac_motion(img, deform_strength, line_fraction, row_seed)
            }
            Severity::RespiratoryMotion { amplitude_px, cycles, phase0 } => {
                respiratory_motion(img, amplitude_px, cycles, phase0)
            }
            Severity::Gibbs { keep_fraction } => gibbs_truncate(img, keep_fraction),
            Severity::Aliasing { factor, center_keep } => alias_subsample(img, factor, center_keep),
        }
    }
}

/// Sampling ranges for randomized artifact intensity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeverityRanges {
    pub gibbs_keep_fraction: [f64; 2],
    pub aliasing_factors: Vec<usize>,
    pub aliasing_center_keep: Vec<usize>,
    pub respiratory_amplitude_px: [f64; 2],
    pub respiratory_cycles: [f64; 2],
    pub cardiac_deform_strength: [f64; 2],
    pub cardiac_line_fraction: [f64; 2],
}

impl Default for SeverityRanges {
    fn default() -> Self {
        Self {
            gibbs_keep_fraction: [0.15, 0.35],
            aliasing_factors: vec![2, 3, 4],
            aliasing_center_keep: vec![0, 2, 4],
            respiratory_amplitude_px: [2.0, 6.0],
            respiratory_cycles: [2.0, 8.0],
            cardiac_deform_strength: [0.15, 0.35],
            cardiac_line_fraction: [0.3, 0.6],
        }
    }
}

impl SeverityRanges {
    pub fn validate(&self) -> Result<(), KspaceError> {
        let ranges = [
            ("gibbs_keep_fraction", self.gibbs_keep_fraction),
            ("respiratory_amplitude_px", self.respiratory_amplitude_px),
            ("respiratory_cycles", self.respiratory_cycles),
            ("cardiac_deform_strength", self.cardiac_deform_strength),
            ("cardiac_line_fraction", self.cardiac_line_fraction),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(KspaceError::InvalidParam(format!("range {name} = [{lo}, {hi}]")));
            }
        }
        let g = self.gibbs_keep_fraction;
        let c = self.cardiac_line_fraction;
        if g[0] <= 0.0 || g[1] > 1.0 || c[0] < 0.0 || c[1] > 1.0 || self.respiratory_amplitude_px[0] < 0.0 {
            return Err(KspaceError::InvalidParam("severity range outside the valid domain".into()));
        }
        if self.aliasing_factors.is_empty() || self.aliasing_factors.iter().any(|&r| r < 2) {
            return Err(KspaceError::InvalidParam("aliasing factors must be >= 2".into()));
        }
        if self.aliasing_center_keep.is_empty() || self.aliasing_center_keep.iter().any(|&c| c % 2 != 0) {
            return Err(KspaceError::InvalidParam("aliasing center_keep values must be even".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Draws degradation parameters for a class.
///
/// Aliasing factors that do not divide `height` are skipped, since the comb
/// sampling rejects them.
pub fn sample_severity(
    rng: &mut impl Rng,
    class_id: usize,
    ranges: &SeverityRanges,
    height: usize,
) -> Result<Severity, KspaceError> {
    let class = ArtifactClass::from_index(class_id).ok_or(KspaceError::UnknownClass(class_id))?;
    Ok(match class {
        ArtifactClass::Clean => Severity::Clean,
        ArtifactClass::CardiacMotion => Severity::CardiacMotion {
            deform_strength: uniform(rng, ranges.cardiac_deform_strength),
            line_fraction: uniform(rng, ranges.cardiac_line_fraction),
            row_seed: rng.random(),
        },
        ArtifactClass::RespiratoryMotion => Severity::RespiratoryMotion {
            amplitude_px: uniform(rng, ranges.respiratory_amplitude_px),
            cycles: uniform(rng, ranges.respiratory_cycles),
            phase0: rng.random_range(0.0..2.0 * PI),
        },
        ArtifactClass::Gibbs => Severity::Gibbs { keep_fraction: uniform(rng, ranges.gibbs_keep_fraction) },
        ArtifactClass::Aliasing => {
            let factors: Vec<usize> = ranges.aliasing_factors.iter().copied().filter(|r| height % r == 0).collect();
            if factors.is_empty() {
                return Err(KspaceError::InvalidParam(format!("no aliasing factor divides height {height}")));
            }
            let keeps: Vec<usize> = ranges.aliasing_center_keep.iter().copied().filter(|&c| c < height).collect();
            if keeps.is_empty() {
                return Err(KspaceError::InvalidParam(format!("no center_keep fits height {height}")));
            }
            Severity::Aliasing {
                factor: factors[rng.random_range(0..factors.len())],
                center_keep: keeps[rng.random_range(0..keeps.len())],
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    #[test]
    fn draws_stay_in_range() {
        let ranges = SeverityRanges::default();
        let mut rng = stream(5, &[]);
        for _ in 0..500 {
            match sample_severity(&mut rng, 3, &ranges, 32).unwrap() {
                Severity::Gibbs { keep_fraction } => assert!((0.15..=0.35).contains(&keep_fraction)),
                other => panic!("unexpected {other:?}"),
            }
            match sample_severity(&mut rng, 4, &ranges, 32).unwrap() {
                Severity::Aliasing { factor, center_keep } => {
                    assert!(factor == 2 || factor == 4, "3 does not divide 32");
                    assert!(ranges.aliasing_center_keep.contains(&center_keep));
                }
                other => panic!("unexpected {other:?}"),
            }
            match sample_severity(&mut rng, 2, &ranges, 32).unwrap() {
                Severity::RespiratoryMotion { amplitude_px, cycles, .. } => {
                    assert!((2.0..=6.0).contains(&amplitude_px) && (2.0..=8.0).contains(&cycles));
                }
                other => panic!("unexpected {other:?}"),
            }
            match sample_severity(&mut rng, 1, &ranges, 32).unwrap() {
                Severity::CardiacMotion { deform_strength, line_fraction, .. } => {
                    assert!((0.15..=0.35).contains(&deform_strength) && (0.3..=0.6).contains(&line_fraction));
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn clean_class_is_a_no_op() {
        let mut rng = stream(0, &[]);
        let s = sample_severity(&mut rng, 0, &SeverityRanges::default(), 32).unwrap();
        assert_eq!(s, Severity::Clean);
        let img = Image::from_fn(8, 8, |y, x| (y * x) as f64 / 64.0);
        assert_eq!(s.apply(&img).unwrap(), img);
    }

    #[test]
    fn unknown_class_is_rejected() {
        let mut rng = stream(0, &[]);
        assert!(matches!(
            sample_severity(&mut rng, 5, &SeverityRanges::default(), 32),
            Err(KspaceError::UnknownClass(5))
        ));
    }

    #[test]
    fn fixed_seed_repeats_sequence() {
        let draw = |seed| {
            let mut rng = stream(seed, &[]);
            (0..20).map(|i| sample_severity(&mut rng, i % 5, &SeverityRanges::default(), 24).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }
}
