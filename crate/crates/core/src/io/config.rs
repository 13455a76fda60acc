use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::container::Dtype;
use super::IoError;
use crate::data::InputMode;
use crate::kspace::{DomainSpec, SeverityRanges};
use crate::train::TrainConfig;

/// Synthetic data generation for both domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub input_mode: InputMode,
    pub n_patients: usize,
    pub slices_per_patient: usize,
    /// Base seed; the two domains use distinct seeds derived from it.
    pub seed: u64,
    pub dtype: Dtype,
    pub ranges: SeverityRanges,
    pub source: DomainSpec,
    pub target: DomainSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            input_mode: InputMode::Spatial,
            n_patients: 20,
            slices_per_patient: 10,
            seed: 0,
            dtype: Dtype::F32,
            ranges: SeverityRanges::default(),
            source: DomainSpec::standard_source(32),
            target: DomainSpec::standard_target(32),
        }
    }
}

/// Paths of the two dataset files; relative paths resolve against the output
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub source: PathBuf,
    pub target: PathBuf,
}

impl Default for DataPaths {
    fn default() -> Self {
        Self { source: "source.uds".into(), target: "target.uds".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResumeConfig {
    /// Checkpoint directory to continue from.
    pub from: Option<PathBuf>,
    /// Stop once this many epochs are complete.
    pub stop_after_epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    /// Defaults to the target dataset.
    pub dataset: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { checkpoint: "checkpoint".into(), dataset: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub k: usize,
    pub seeds: Vec<u64>,
    /// Folds run per seed; all folds when unset.
    pub folds: Option<Vec<usize>>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self { k: 5, seeds: vec![0, 1, 2], folds: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Protocol result files to tabulate.
    pub protocols: Vec<PathBuf>,
    /// Feature dump projected to two principal components when present.
    pub features: Option<PathBuf>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { protocols: vec!["protocol.json".into()], features: Some("features.csv".into()) }
    }
}

/// Everything one invocation of the command line tool needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub data: DataPaths,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub resume: ResumeConfig,
    pub eval: EvalConfig,
    pub protocol: ProtocolConfig,
    pub report: ReportConfig,
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self, IoError> {
        serde_json::from_str(text).map_err(|source| IoError::Json { path: origin.display().to_string(), source })
    }

    /// Reads a config file; a relative `out_dir` is taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
        let mut cfg = Self::from_json(&text, path)?;
        if cfg.out_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new(""));
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }
}
