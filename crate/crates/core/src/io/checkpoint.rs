//! Checkpoint directory: `manifest.json` plus `tensors.bin`, the 64-bit
//! containers of every stored array in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::{decode_tensor, encode_tensor, Dtype, Reader};
use super::{read_file, write_atomic, IoError};
use crate::grad::{ParamSet, Tensor};
use crate::nets::{build_critic, build_extractor, build_predictor, NetSpec};
use crate::train::{CenterBank, InputNorm, Networks, TrainConfig, TrainState};

pub const MANIFEST: &str = "manifest.json";
pub const TENSORS: &str = "tensors.bin";
const FORMAT: &str = "uda-forge-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    config: TrainConfig,
    spec: NetSpec,
    iteration: u64,
    epochs_done: usize,
    /// Adam step counters of the extractor, predictor and critic.
    optimizer_steps: [u64; 3],
    center_dim: usize,
    center_counts: Vec<u64>,
    entries: Vec<String>,
}

/// A trained model together with everything needed to resume its run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub spec: NetSpec,
    pub state: TrainState,
}

const NETS: [&str; 3] = ["extractor", "predictor", "critic"];

impl Checkpoint {
    fn param_sets(&self) -> [&ParamSet; 3] {
        [&self.state.extractor, &self.state.predictor, &self.state.critic]
    }

    pub fn networks(&self) -> Result<Networks, IoError> {
        let mut nets = Networks::build(&self.spec, 0)?;
        nets.extractor.params = self.state.extractor.clone();
        nets.predictor.params = self.state.predictor.clone();
        nets.critic.params = self.state.critic.clone();
        nets.norm = self.state.norm.clone();
        Ok(nets)
    }

    pub fn to_files(&self) -> Result<(String, Vec<u8>), IoError> {
        let mut entries = Vec::new();
        let mut blob = Vec::new();
        let mut push = |name: String, t: &Tensor| -> Result<(), IoError> {
            entries.push(name);
            encode_tensor(t, Dtype::F64, &mut blob)
        };
        for (net, params) in NETS.iter().zip(self.param_sets()) {
            for (name, value) in params.iter() {
                let (first, second) = params.moments(name).expect("every parameter has moments");
                push(format!("{net}/{name}"), value)?;
                push(format!("{net}/{name}#m1"), first)?;
                push(format!("{net}/{name}#m2"), second)?;
            }
        }
        let norm = &self.state.norm;
        push("norm/mean".into(), &Tensor::new(vec![norm.mean.len()], norm.mean.clone())?)?;
        push("norm/std".into(), &Tensor::new(vec![norm.std.len()], norm.std.clone())?)?;
        let centers = &self.state.centers;
        for l in 0..centers.counts().len() {
            if let Some(c) = centers.center(l) {
                push(format!("centers/{l}"), &Tensor::new(vec![c.len()], c.to_vec())?)?;
            }
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: 1,
            config: self.config.clone(),
            spec: self.spec.clone(),
            iteration: self.state.iteration,
            epochs_done: self.state.epochs_done,
            optimizer_steps: self.param_sets().map(ParamSet::step),
            center_dim: centers.dim(),
            center_counts: centers.counts().to_vec(),
            entries,
        };
        Ok((serde_json::to_string_pretty(&manifest).expect("manifest serializes"), blob))
    }

    pub fn from_files(manifest: &str, blob: &[u8]) -> Result<Self, IoError> {
        let bad = |msg: String| IoError::Checkpoint(msg);
        let m: Manifest = serde_json::from_str(manifest).map_err(|e| bad(format!("manifest: {e}")))?;
        if m.format != FORMAT || m.version != 1 {
            return Err(bad(format!("unsupported checkpoint {} v{}", m.format, m.version)));
        }
        let mut nets = [build_extractor(&m.spec, 0)?.params, build_predictor(&m.spec, 0)?.params, build_critic(&m.spec, 0)?.params];
        let mut norm = InputNorm::identity(m.spec.input_channels);
        let mut centers = vec![None; m.center_counts.len()];
        let mut r = Reader::new(blob);
        let mut loaded = 0usize;
        for entry in &m.entries {
            let (t, _) = decode_tensor(&mut r)?;
            if let Some((net, rest)) = entry.split_once('/').filter(|(n, _)| NETS.contains(n)) {
                let params = &mut nets[NETS.iter().position(|n| *n == net).expect("filtered")];
                let (name, kind) = rest.split_once('#').map_or((rest, ""), |(a, b)| (a, b));
                let current = params.get(name).ok_or_else(|| bad(format!("unknown parameter {entry}")))?;
                if current.shape() != t.shape() {
                    return Err(bad(format!("{entry} has shape {:?}, expected {:?}", t.shape(), current.shape())));
                }
                match kind {
                    "" => {
                        *params.get_mut(name).expect("present") = t;
                        loaded += 1;
                    }
                    "m1" => {
                        let second = params.moments(name).expect("present").1.clone();
                        params.restore_moments(name, t, second)?;
                    }
                    "m2" => {
                        let first = params.moments(name).expect("present").0.clone();
                        params.restore_moments(name, first, t)?;
                    }
                    _ => return Err(bad(format!("unknown entry {entry}"))),
                }
            } else if entry == "norm/mean" {
                norm.mean = t.into_data();
            } else if entry == "norm/std" {
                norm.std = t.into_data();
            } else if let Some(l) = entry.strip_prefix("centers/").and_then(|l| l.parse::<usize>().ok()) {
                *centers.get_mut(l).ok_or_else(|| bad(format!("center index {l}")))? = Some(t.into_data());
            } else {
                return Err(bad(format!("unknown entry {entry}")));
            }
        }
        if r.remaining() > 0 {
            return Err(IoError::TrailingBytes(r.remaining()));
        }
        let expected: usize = nets.iter().map(ParamSet::len).sum();
        if loaded != expected {
            return Err(bad(format!("{loaded} of {expected} parameters stored")));
        }
        for (params, step) in nets.iter_mut().zip(m.optimizer_steps) {
            params.set_step(step);
        }
        let centers = CenterBank::from_parts(m.center_dim, centers, m.center_counts)
            .ok_or_else(|| bad("inconsistent center bank".into()))?;
        let [extractor, predictor, critic] = nets;
        Ok(Self {
            config: m.config,
            spec: m.spec,
            state: TrainState { norm, extractor, predictor, critic, centers, iteration: m.iteration, epochs_done: m.epochs_done },
        })
    }

    /// Writes the directory through a temporary sibling and a rename.
    pub fn save(&self, dir: &Path) -> Result<(), IoError> {
        let (manifest, blob) = self.to_files()?;
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoint".into());
        let tmp = dir.with_file_name(format!(".{name}.tmp"));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| IoError::file(&tmp, e))?;
        }
        std::fs::create_dir_all(&tmp).map_err(|e| IoError::file(&tmp, e))?;
        write_atomic(&tmp.join(TENSORS), &blob)?;
        write_atomic(&tmp.join(MANIFEST), manifest.as_bytes())?;
        if dir.exists() {
            std::fs::remove_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
        }
        std::fs::rename(&tmp, dir).map_err(|e| IoError::file(dir, e))
    }

    pub fn load(dir: &Path) -> Result<Self, IoError> {
        let manifest = read_file(&dir.join(MANIFEST))?;
        let blob = read_file(&dir.join(TENSORS))?;
        let manifest = String::from_utf8(manifest).map_err(|_| IoError::Checkpoint("manifest is not UTF-8".into()))?;
        Self::from_files(&manifest, &blob)
    }
}
