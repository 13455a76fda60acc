//! Adversarial feature alignment with a gradient-penalized critic, plus the
//! supervised baselines.

mod centers;
mod config;
mod model;
mod run;
mod step;

pub use centers::CenterBank;
pub use config::{gamma, Ablation, CenterSpace, NetworkConfig, TrainConfig, TrainMode};
pub use model::{network_inputs, InputNorm, Networks};
pub use run::{assemble_epoch, train, EpochRecord, StepRecord, TrainControl, TrainLog, TrainOutcome, TrainState};
pub use step::{
    apply_predictor_grads, critic_distance, critic_inner_loop, extractor_pass, lipschitz_distance, objective_from_features, predictor_objective, softmax_cross_entropy, CriticReport,
    CriticSettings, LossParts, Objective, PredictorGrads,
};
