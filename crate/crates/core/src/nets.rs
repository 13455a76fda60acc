//! Feature extractor, label predictor and distance critic as [`Graph`]s with
//! seeded initialization.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{InputMode, NUM_CLASSES};
use crate::grad::{Activation, GradError, Graph, NodeId, ParamSet, Tensor};
use crate::seed::stream;

pub const EXTRACTOR_INPUT: &str = "x";
pub const FEATURES: &str = "features";
pub const PREDICTOR_INPUT: &str = "z";
pub const HIDDEN: &str = "hidden";
pub const LOGITS: &str = "logits";
pub const PROBS: &str = "probs";
pub const CRITIC_INPUT: &str = "z";
pub const SCORE: &str = "score";
pub const GATE: &str = "gate";

/// Architecture knobs shared by the three networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSpec {
    pub input_channels: usize,
    pub image_size: usize,
    /// Output channels of each conv block; every block halves the resolution.
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    pub feature_dim: usize,
    /// Hidden widths of the label predictor; the last one is the penultimate layer.
    pub predictor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub critic_activation: Activation,
    pub attention: bool,
    pub attention_hidden: usize,
    pub n_classes: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self::for_mode(InputMode::Spatial, 32)
    }
}

impl NetSpec {
    pub fn for_mode(mode: InputMode, image_size: usize) -> Self {
        let predictor_hidden = match mode {
            InputMode::Spatial => vec![64, 32],
            InputMode::Kspace => vec![128, 64, 32],
        };
        Self {
            input_channels: mode.channels(),
            image_size,
            conv_channels: vec![8, 16, 32],
            kernel_size: 3,
            feature_dim: 64,
            predictor_hidden,
            critic_hidden: vec![64],
            critic_activation: Activation::Elu,
            attention: true,
            attention_hidden: 32,
            n_classes: NUM_CLASSES,
        }
    }

    pub fn validate(&self) -> Result<(), GradError> {
        let blocks = self.conv_channels.len() as u32;
        if self.input_channels == 0 || self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(GradError::Config("extractor needs positive channel counts".into()));
        }
        if self.image_size == 0 || self.image_size % (1 << blocks) != 0 {
            return Err(GradError::Config(format!(
                "image size {} must be divisible by 2^{blocks}",
                self.image_size
            )));
        }
        if self.kernel_size % 2 == 0 {
            return Err(GradError::Config("kernel size must be odd".into()));
        }
        if self.feature_dim == 0 || self.predictor_hidden.is_empty() || self.predictor_hidden.contains(&0) {
            return Err(GradError::Config("predictor needs a penultimate layer".into()));
        }
        if self.critic_hidden.contains(&0) || self.attention_hidden == 0 || self.n_classes < 2 {
            return Err(GradError::Config("invalid critic or class configuration".into()));
        }
        if !self.critic_activation.is_smooth() {
            return Err(GradError::Config("critic activations must be smooth for the gradient penalty".into()));
        }
        Ok(())
    }

    pub fn penultimate_dim(&self) -> usize {
        *self.predictor_hidden.last().expect("validated")
    }
}

/// A graph and its parameters.
#[derive(Clone, Debug)]
pub struct Net {
    pub graph: Graph,
    pub params: ParamSet,
}

/// Gaussian weights with variance `gain / fan_in`, zero biases.
fn init_params(graph: &Graph, seed: u64, stream_id: u64, gains: impl Fn(&str) -> f64) -> ParamSet {
    let mut rng = stream(seed, &[0x1417, stream_id]);
    let mut params = ParamSet::new();
    for (name, shape) in graph.param_shapes() {
        if params.get(&name).is_some() {
            continue;
        }
        let n: usize = shape.iter().product();
        let data = if name.ends_with(".b") {
            vec![0.0; n]
        } else {
            let fan_in: usize = if shape.len() == 4 { shape[1] * shape[2] * shape[3] } else { shape[0] };
            let std = (gains(&name) / fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("finite std");
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        };
        params.insert(&name, Tensor::new(shape, data).expect("declared shape"));
    }
    params
}

/// Conv-ELU-pool blocks, flatten, linear projection to the feature space.
pub fn build_extractor(spec: &NetSpec, seed: u64) -> Result<Net, GradError> {
    spec.validate()?;
    let mut g = Graph::new();
    let mut h = g.input(EXTRACTOR_INPUT, &[spec.input_channels, spec.image_size, spec.image_size])?;
    let mut cin = spec.input_channels;
    let s = spec.kernel_size;
    for (i, &cout) in spec.conv_channels.iter().enumerate() {
        let k = g.param(&format!("conv{i}.k"), &[cout, cin, s, s])?;
        let b = g.param(&format!("conv{i}.b"), &[cout])?;
        h = g.conv2d(h, k)?;
        h = g.bias_add(h, b)?;
        h = g.activation(Activation::Elu, h)?;
        h = g.avg_pool2(h)?;
        cin = cout;
    }
    let flat = g.flatten(h)?;
    let z = g.dense("fc", flat, spec.feature_dim)?;
    g.set_output(FEATURES, z);
    let params = init_params(&g, seed, 1, |name| if name.starts_with("fc") { 1.0 } else { 2.0 });
    Ok(Net { graph: g, params })
}

/// MLP over features exposing the penultimate activations, logits and softmax.
pub fn build_predictor(spec: &NetSpec, seed: u64) -> Result<Net, GradError> {
    spec.validate()?;
    let mut g = Graph::new();
    let mut h = g.input(PREDICTOR_INPUT, &[spec.feature_dim])?;
    for (i, &width) in spec.predictor_hidden.iter().enumerate() {
        h = g.dense(&format!("fc{i}"), h, width)?;
        h = g.activation(Activation::Relu, h)?;
    }
    g.set_output(HIDDEN, h);
    let logits = g.dense("out", h, spec.n_classes)?;
    let probs = g.softmax(logits)?;
    g.set_output(LOGITS, logits);
    g.set_output(PROBS, probs);
    let params = init_params(&g, seed, 2, |name| if name.starts_with("out") { 1.0 } else { 2.0 });
    Ok(Net { graph: g, params })
}

fn critic_gate(g: &mut Graph, spec: &NetSpec, z: NodeId) -> Result<NodeId, GradError> {
    let a = g.dense("gate0", z, spec.attention_hidden)?;
    let a = g.activation(Activation::Elu, a)?;
    let a = g.dense("gate1", a, spec.feature_dim)?;
    let gate = g.activation(Activation::Sigmoid, a)?;
    g.set_output(GATE, gate);
    g.mul(z, gate)
}

/// Scalar critic, optionally preceded by feature-wise sigmoid gating.
pub fn build_critic(spec: &NetSpec, seed: u64) -> Result<Net, GradError> {
    spec.validate()?;
    let mut g = Graph::new();
    let z = g.input(CRITIC_INPUT, &[spec.feature_dim])?;
    let mut h = if spec.attention { critic_gate(&mut g, spec, z)? } else { z };
    for (i, &width) in spec.critic_hidden.iter().enumerate() {
        h = g.dense(&format!("fc{i}"), h, width)?;
        h = g.activation(spec.critic_activation, h)?;
    }
    let score = g.dense("out", h, 1)?;
    g.set_output(SCORE, score);
    let params = init_params(&g, seed, 3, |name| if name.starts_with("fc") { 2.0 } else { 1.0 });
    Ok(Net { graph: g, params })
}
