use serde::{Deserialize, Serialize};

use crate::data::InputMode;
use crate::grad::{Activation, AdamConfig, GradError};
use crate::nets::NetSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Uda,
    SourceOnly,
    TargetSupervised,
}

impl TrainMode {
    pub const ALL: [TrainMode; 3] = [TrainMode::SourceOnly, TrainMode::Uda, TrainMode::TargetSupervised];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Uda => "uda",
            TrainMode::SourceOnly => "source_only",
            TrainMode::TargetSupervised => "target_supervised",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Representation the class centers live in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterSpace {
    Features,
    Penultimate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub center_loss_on: bool,
    pub critic_on: bool,
    pub attention_on: bool,
    pub gamma_ramp_on: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self { center_loss_on: true, critic_on: true, attention_on: true, gamma_ramp_on: true }
    }
}

/// Architecture knobs that do not depend on the dataset shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub conv_channels: Vec<usize>,
    pub feature_dim: usize,
    /// Overrides the per-mode predictor stack when set.
    pub predictor_hidden: Option<Vec<usize>>,
    pub critic_hidden: Vec<usize>,
    pub critic_activation: Activation,
    pub attention_hidden: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let spec = NetSpec::default();
        Self {
            conv_channels: spec.conv_channels,
            feature_dim: spec.feature_dim,
            predictor_hidden: None,
            critic_hidden: spec.critic_hidden,
            critic_activation: spec.critic_activation,
            attention_hidden: spec.attention_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub input_mode: InputMode,
    pub lambda: f64,
    pub center_weight: f64,
    /// EMA rate of the center update; 1 replaces centers by the batch means.
    pub center_alpha: f64,
    pub center_space: CenterSpace,
    pub n_critic: usize,
    pub epochs: usize,
    /// Source half plus target half.
    pub batch_size: usize,
    pub base_lr: f64,
    /// Critic learning rate; follows the predictor schedule when unset.
    pub critic_lr: Option<f64>,
    pub step_size: usize,
    pub decay: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub ablation: Ablation,
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Uda,
            input_mode: InputMode::Spatial,
            lambda: 10.0,
            center_weight: 1.0,
            center_alpha: 0.5,
            center_space: CenterSpace::Features,
            n_critic: 5,
            epochs: 30,
            batch_size: 64,
            base_lr: 0.001,
            critic_lr: None,
            step_size: 20,
            decay: 0.5,
            adam: AdamConfig::default(),
            seed: 0,
            ablation: Ablation::default(),
            network: NetworkConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GradError> {
        let bad = |msg: &str| Err(GradError::Config(msg.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.center_weight >= 0.0 && self.center_weight.is_finite()) {
            return bad("center_weight must be finite and non-negative");
        }
        if !(self.center_alpha > 0.0 && self.center_alpha <= 1.0) {
            return bad("center_alpha must lie in (0, 1]");
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return bad("batch_size must be even and at least 2");
        }
        if self.epochs == 0 || self.step_size == 0 {
            return bad("epochs and step_size must be positive");
        }
        if !(self.base_lr > 0.0) || self.critic_lr.is_some_and(|lr| !(lr > 0.0)) {
            return bad("learning rates must be positive");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must lie in (0, 1]");
        }
        if self.uses_critic() && self.n_critic == 0 {
            return bad("n_critic must be positive when the critic is on");
        }
        Ok(())
    }

    pub fn half_batch(&self) -> usize {
        self.batch_size / 2
    }

    pub fn uses_critic(&self) -> bool {
        self.mode == TrainMode::Uda && self.ablation.critic_on
    }

    pub fn net_spec(&self, image_size: usize) -> NetSpec {
        let base = NetSpec::for_mode(self.input_mode, image_size);
        let n = &self.network;
        NetSpec {
            conv_channels: n.conv_channels.clone(),
            feature_dim: n.feature_dim,
            predictor_hidden: n.predictor_hidden.clone().unwrap_or(base.predictor_hidden.clone()),
            critic_hidden: n.critic_hidden.clone(),
            critic_activation: n.critic_activation,
            attention: self.ablation.attention_on,
            attention_hidden: n.attention_hidden,
            ..base
        }
    }
}

/// Weight of the distance term at a 1-based iteration.
pub fn gamma(iteration: u64, total: u64, ramp_on: bool) -> f64 {
    if !ramp_on {
        return 1.0;
    }
    debug_assert!(total >= 1 && iteration <= total);
    iteration as f64 / total.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_values() {
        assert_eq!(gamma(0, 100, true), 0.0);
        assert_eq!(gamma(100, 100, true), 1.0);
        assert_eq!(gamma(50, 100, false), 1.0);
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let json = serde_json::to_string(&TrainConfig::default()).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, TrainConfig::default());
        let typo = r#"{"ablation": {"center_los_on": false}}"#;
        assert!(serde_json::from_str::<TrainConfig>(typo).is_err());
        let partial: TrainConfig = serde_json::from_str(r#"{"mode": "source_only", "epochs": 3}"#).unwrap();
        assert_eq!(partial.mode, TrainMode::SourceOnly);
        assert_eq!(partial.lambda, 10.0);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 63, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { center_alpha: 0.0, ..Default::default() }.validate().is_err());
    }
}
