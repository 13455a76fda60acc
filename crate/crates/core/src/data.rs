//! Samples, labels and datasets shared by synthesis, training and I/O.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::grad::Tensor;

pub const NUM_CLASSES: usize = 5;

/// Image-quality class of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactClass {
    Clean = 0,
    CardiacMotion = 1,
    RespiratoryMotion = 2,
    Gibbs = 3,
    Aliasing = 4,
}

impl ArtifactClass {
    pub const ALL: [ArtifactClass; NUM_CLASSES] = [
        ArtifactClass::Clean,
        ArtifactClass::CardiacMotion,
        ArtifactClass::RespiratoryMotion,
        ArtifactClass::Gibbs,
        ArtifactClass::Aliasing,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ArtifactClass::Clean => "artifact_free",
            ArtifactClass::CardiacMotion => "cardiac_motion",
            ArtifactClass::RespiratoryMotion => "respiratory_motion",
            ArtifactClass::Gibbs => "gibbs",
            ArtifactClass::Aliasing => "aliasing",
        }
    }
}

impl fmt::Display for ArtifactClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source = 0,
    Target = 1,
}

/// How a sample is presented to the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// One `[1, H, W]` intensity plane.
    #[default]
    Spatial,
    /// `[2, H, W]` real and imaginary planes of the centered k-space.
    Kspace,
}

impl InputMode {
    pub fn channels(self) -> usize {
        match self {
            InputMode::Spatial => 1,
            InputMode::Kspace => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[channels, H, W]`.
    pub input: Tensor,
    /// `None` for unlabeled samples.
    pub label: Option<ArtifactClass>,
    pub domain: Domain,
    pub patient: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub mode: InputMode,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(mode: InputMode, height: usize, width: usize) -> Self {
        Self { mode, height, width, samples: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        [self.mode.channels(), self.height, self.width]
    }

    /// Distinct patient ids in first-seen order.
    pub fn patients(&self) -> Vec<u32> {
        let mut seen = Vec::new();
        for s in &self.samples {
            if !seen.contains(&s.patient) {
                seen.push(s.patient);
            }
        }
        seen
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for s in &self.samples {
            if let Some(c) = s.label {
                counts[c.index()] += 1;
            }
        }
        counts
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.samples.iter().all(|s| s.label.is_some())
    }

    /// Copy with every label removed.
    pub fn without_labels(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.label = None;
        }
        out
    }

    /// Samples whose patient satisfies `keep`.
    pub fn filter_patients(&self, keep: impl Fn(u32) -> bool) -> Self {
        Self {
            mode: self.mode,
            height: self.height,
            width: self.width,
            samples: self.samples.iter().filter(|s| keep(s.patient)).cloned().collect(),
        }
    }
}
