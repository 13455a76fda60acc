use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::grad::{forward, GradError, Tensor};
use crate::nets::{build_critic, build_extractor, build_predictor, Net, NetSpec};
use crate::nets::{EXTRACTOR_INPUT, FEATURES, HIDDEN, PREDICTOR_INPUT, PROBS};

/// The extractor, predictor and critic trained together.
#[derive(Clone, Debug)]
pub struct Networks {
    pub spec: NetSpec,
    pub norm: InputNorm,
    pub extractor: Net,
    pub predictor: Net,
    pub critic: Net,
}

const EVAL_CHUNK: usize = 128;

impl Networks {
    pub fn build(spec: &NetSpec, seed: u64) -> Result<Self, GradError> {
        Ok(Self {
            spec: spec.clone(),
            norm: InputNorm::identity(spec.input_channels),
            extractor: build_extractor(spec, seed)?,
            predictor: build_predictor(spec, seed)?,
            critic: build_critic(spec, seed)?,
        })
    }

    /// Dataset inputs stacked and standardized for this model.
    pub fn prepare(&self, ds: &Dataset) -> Result<Tensor, GradError> {
        self.norm.apply(network_inputs(ds)?)
    }

    pub fn features(&self, x: &Tensor) -> Result<Tensor, GradError> {
        chunked(x, |chunk| {
            forward(&self.extractor.graph, &self.extractor.params, &[(EXTRACTOR_INPUT, chunk)])?
                .into_output(&self.extractor.graph, FEATURES)
        })
    }

    /// Class probabilities, `[N, n_classes]`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, GradError> {
        chunked(x, |chunk| {
            let z = forward(&self.extractor.graph, &self.extractor.params, &[(EXTRACTOR_INPUT, chunk)])?
                .into_output(&self.extractor.graph, FEATURES)?;
            forward(&self.predictor.graph, &self.predictor.params, &[(PREDICTOR_INPUT, &z)])?
                .into_output(&self.predictor.graph, PROBS)
        })
    }

    /// Penultimate predictor activations, `[N, penultimate_dim]`.
    pub fn penultimate(&self, x: &Tensor) -> Result<Tensor, GradError> {
        let z = self.features(x)?;
        forward(&self.predictor.graph, &self.predictor.params, &[(PREDICTOR_INPUT, &z)])?
            .into_output(&self.predictor.graph, HIDDEN)
    }
}

fn chunked(x: &Tensor, f: impl Fn(&Tensor) -> Result<Tensor, GradError>) -> Result<Tensor, GradError> {
    let n = x.rows();
    let mut parts = Vec::new();
    for start in (0..n).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
        parts.push(f(&x.select_rows(&idx))?);
    }
    if parts.is_empty() {
        return Err(GradError::Shape("cannot evaluate an empty batch".into()));
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    let width = parts[0].row_len();
    let data: Vec<f64> = refs.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(vec![n, width], data)
}

/// Stacks dataset inputs as a raw `[N, C, H, W]` batch.
pub fn network_inputs(ds: &Dataset) -> Result<Tensor, GradError> {
    let [c, h, w] = ds.sample_shape();
    let mut data = Vec::with_capacity(ds.len() * c * h * w);
    for s in &ds.samples {
        if s.input.shape() != [c, h, w] {
            return Err(GradError::Shape(format!("sample shape {:?} differs from [{c}, {h}, {w}]", s.input.shape())));
        }
        data.extend_from_slice(s.input.data());
    }
    Tensor::new(vec![ds.len(), c, h, w], data)
}

/// Per-channel affine input standardization fitted on a training pool and
/// applied unchanged to every other set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    pub fn fit(x: &Tensor) -> Self {
        let (n, c) = (x.shape()[0], x.shape()[1]);
        let plane: usize = x.shape()[2..].iter().product();
        let mut mean = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                let start = (i * c + ch) * plane;
                for &v in &x.data()[start..start + plane] {
                    mean[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let count = (n * plane).max(1) as f64;
        let std = mean
            .iter_mut()
            .zip(&sq)
            .map(|(m, s)| {
                *m /= count;
                (s / count - *m * *m).max(0.0).sqrt().max(1e-8)
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, mut x: Tensor) -> Result<Tensor, GradError> {
        let c = self.mean.len();
        if x.shape().len() < 2 || x.shape()[1] != c {
            return Err(GradError::Shape(format!("input {:?} does not have {c} channels", x.shape())));
        }
        let plane: usize = x.shape()[2..].iter().product();
        for (k, chunk) in x.data_mut().chunks_mut(plane).enumerate() {
            let ch = k % c;
            chunk.iter_mut().for_each(|v| *v = (*v - self.mean[ch]) / self.std[ch]);
        }
        Ok(x)
    }
}
