use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::centers::CenterBank;
use super::config::{gamma, CenterSpace, TrainConfig, TrainMode};
use super::model::{network_inputs, InputNorm, Networks};
use super::step::{apply_predictor_grads, critic_inner_loop, extractor_pass, objective_from_features, CriticSettings, Objective};
use crate::data::Dataset;
use crate::grad::{lr_schedule, GradError, GradientPenalty, ParamSet, Tensor};
use crate::nets::{CRITIC_INPUT, FEATURES, SCORE};
use crate::seed::stream;

const EPOCH_STREAM: u64 = 0xE90C;

/// One predictor update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: u64,
    pub epoch: usize,
    pub gamma: f64,
    pub lr: f64,
    pub ce: f64,
    pub center: f64,
    pub stat: Option<f64>,
    pub critic_loss: Option<f64>,
    pub distance: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_ce: f64,
    pub mean_distance: Option<f64>,
    pub eval_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub norm: InputNorm,
    pub extractor: ParamSet,
    pub predictor: ParamSet,
    pub critic: ParamSet,
    pub centers: CenterBank,
    pub iteration: u64,
    pub epochs_done: usize,
}

#[derive(Clone, Debug, Default)]
pub struct TrainControl<'a> {
    pub resume: Option<TrainState>,
    /// Stop once this many epochs are complete.
    pub stop_after: Option<usize>,
    /// Scored after every epoch.
    pub eval: Option<&'a Dataset>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub networks: Networks,
    pub centers: CenterBank,
    pub iteration: u64,
    pub epochs_done: usize,
    pub log: TrainLog,
}

impl TrainOutcome {
    pub fn state(&self) -> TrainState {
        TrainState {
            norm: self.networks.norm.clone(),
            extractor: self.networks.extractor.params.clone(),
            predictor: self.networks.predictor.params.clone(),
            critic: self.networks.critic.params.clone(),
            centers: self.centers.clone(),
            iteration: self.iteration,
            epochs_done: self.epochs_done,
        }
    }
}

fn check_dataset(cfg: &TrainConfig, ds: &Dataset, role: &str) -> Result<(), GradError> {
    if ds.mode != cfg.input_mode {
        return Err(GradError::Config(format!("{role} set is {:?} but the run expects {:?}", ds.mode, cfg.input_mode)));
    }
    if ds.height != ds.width {
        return Err(GradError::Config(format!("{role} images must be square")));
    }
    if ds.is_empty() {
        return Err(GradError::Config(format!("{role} set is empty")));
    }
    Ok(())
}

/// Labeled and unlabeled pools for a mode.
fn pools<'a>(
    cfg: &TrainConfig,
    source: Option<&'a Dataset>,
    target: Option<&'a Dataset>,
) -> Result<(&'a Dataset, Option<&'a Dataset>), GradError> {
    let need = |d: Option<&'a Dataset>, role: &str| {
        d.ok_or_else(|| GradError::Config(format!("mode {} needs a {role} set", cfg.mode.name())))
    };
    let (labeled, unlabeled) = match cfg.mode {
        TrainMode::SourceOnly => (need(source, "source")?, None),
        TrainMode::TargetSupervised => (need(target, "target")?, None),
        TrainMode::Uda if cfg.ablation.critic_on => (need(source, "source")?, Some(need(target, "target")?)),
        TrainMode::Uda => (need(source, "source")?, None),
    };
    check_dataset(cfg, labeled, "labeled")?;
    if !labeled.is_fully_labeled() {
        return Err(GradError::Config(format!("mode {} needs a fully labeled training set", cfg.mode.name())));
    }
    if let Some(u) = unlabeled {
        check_dataset(cfg, u, "target")?;
        if (u.height, u.width) != (labeled.height, labeled.width) {
            return Err(GradError::Config("source and target image sizes differ".into()));
        }
    }
    Ok((labeled, unlabeled))
}

/// Epoch-level shuffle of `n` indices, repeated when more than `n` are needed.
fn epoch_order(n: usize, needed: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut order = Vec::with_capacity(needed.max(n));
    while order.len() < needed {
        let mut pass: Vec<usize> = (0..n).collect();
        pass.shuffle(rng);
        order.extend(pass);
    }
    order.truncate(needed);
    order
}

/// Index batches for one epoch: labeled halves and, when a target pool is
/// given, unlabeled halves of the same size.
pub fn assemble_epoch(
    n_labeled: usize,
    n_unlabeled: Option<usize>,
    half: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<(Vec<usize>, Option<Vec<usize>>)>, GradError> {
    if n_labeled == 0 || n_unlabeled == Some(0) {
        return Err(GradError::Config("cannot draw batches from an empty pool".into()));
    }
    let iters = (n_labeled / half).max(1);
    let half_s = half.min(n_labeled);
    let source = epoch_order(n_labeled, iters * half_s, &mut stream(seed, &[EPOCH_STREAM, epoch as u64, 0]));
    let target = n_unlabeled.map(|n| epoch_order(n, iters * half_s, &mut stream(seed, &[EPOCH_STREAM, epoch as u64, 1])));
    Ok((0..iters)
        .map(|i| {
            let r = i * half_s..(i + 1) * half_s;
            (source[r.clone()].to_vec(), target.as_ref().map(|t| t[r].to_vec()))
        })
        .collect())
}

fn accuracy(nets: &Networks, ds: &Dataset) -> Result<f64, GradError> {
    let probs = nets.predict(&nets.prepare(ds)?)?;
    let mut correct = 0usize;
    let mut counted = 0usize;
    for (i, s) in ds.samples.iter().enumerate() {
        let Some(label) = s.label else { continue };
        let row = probs.row(i);
        let pred = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
        counted += 1;
        correct += usize::from(pred == label.index());
    }
    Ok(if counted == 0 { f64::NAN } else { correct as f64 / counted as f64 })
}

/// Runs the configured mode. In `uda` mode target labels are never read.
pub fn train(
    cfg: &TrainConfig,
    source: Option<&Dataset>,
    target: Option<&Dataset>,
    control: TrainControl<'_>,
) -> Result<TrainOutcome, GradError> {
    cfg.validate()?;
    let (labeled, unlabeled) = pools(cfg, source, target)?;
    let spec = cfg.net_spec(labeled.height);
    let mut nets = Networks::build(&spec, cfg.seed)?;
    let center_dim = match cfg.center_space {
        CenterSpace::Features => spec.feature_dim,
        CenterSpace::Penultimate => spec.penultimate_dim(),
    };
    let mut centers = CenterBank::new(center_dim);
    let mut iteration = 0u64;
    let mut epochs_done = 0usize;
    if let Some(state) = &control.resume {
        for (name, current, saved) in [
            ("extractor", &mut nets.extractor.params, &state.extractor),
            ("predictor", &mut nets.predictor.params, &state.predictor),
            ("critic", &mut nets.critic.params, &state.critic),
        ] {
            if current.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).ne(saved.iter().map(|(n, t)| (n.clone(), t.shape().to_vec()))) {
                return Err(GradError::Config(format!("checkpoint {name} does not match the configured network")));
            }
            *current = saved.clone();
        }
        if state.centers.dim() != center_dim {
            return Err(GradError::Config("checkpoint centers do not match the center space".into()));
        }
        centers = state.centers.clone();
        iteration = state.iteration;
        epochs_done = state.epochs_done;
    }

    let x_lab = network_inputs(labeled)?;
    nets.norm = match &control.resume {
        Some(state) => state.norm.clone(),
        None => InputNorm::fit(&x_lab),
    };
    let x_lab = nets.norm.apply(x_lab)?;
    let y_lab: Vec<usize> = labeled.samples.iter().map(|s| s.label.expect("checked").index()).collect();
    let x_unl = unlabeled.map(|u| nets.prepare(u)).transpose()?;
    let half = cfg.half_batch();
    let iters_per_epoch = (labeled.len() / half).max(1) as u64;
    let total = iters_per_epoch * cfg.epochs as u64;
    let penalty = if cfg.uses_critic() { Some(GradientPenalty::new(&nets.critic.graph, CRITIC_INPUT, SCORE)?) } else { None };

    let stop = control.stop_after.unwrap_or(cfg.epochs).min(cfg.epochs);
    let mut log = TrainLog::default();
    for epoch in epochs_done..stop {
        let lr = lr_schedule(cfg.base_lr, epoch, cfg.step_size, cfg.decay);
        let critic_lr = cfg.critic_lr.map_or(lr, |c| lr_schedule(c, epoch, cfg.step_size, cfg.decay));
        let batches = assemble_epoch(labeled.len(), x_unl.as_ref().map(Tensor::rows), half, cfg.seed, epoch)?;
        let mut critic_rng = stream(cfg.seed, &[EPOCH_STREAM, epoch as u64, 2]);
        let (mut ce_sum, mut dist_sum) = (0.0, 0.0);
        for (src_idx, tgt_idx) in &batches {
            iteration += 1;
            let g = gamma(iteration, total, cfg.ablation.gamma_ramp_on);
            let xs = x_lab.select_rows(src_idx);
            let ys: Vec<usize> = src_idx.iter().map(|&i| y_lab[i]).collect();
            let xt = match (&x_unl, tgt_idx) {
                (Some(x), Some(idx)) => Some(x.select_rows(idx)),
                _ => None,
            };
            let ex_acts = extractor_pass(&nets, &xs, xt.as_ref())?;
            let critic_report = match (&penalty, &xt) {
                (Some(pen), Some(_)) => {
                    let z = ex_acts.output(&nets.extractor.graph, FEATURES)?;
                    let z_s = z.select_rows(&(0..ys.len()).collect::<Vec<_>>());
                    let z_t = z.select_rows(&(ys.len()..z.rows()).collect::<Vec<_>>());
                    let settings = CriticSettings { steps: cfg.n_critic, lambda: cfg.lambda, lr: critic_lr, adam: cfg.adam };
                    Some(critic_inner_loop(&mut nets.critic, pen, &z_s, &z_t, settings, &mut critic_rng)?)
                }
                _ => None,
            };
            let obj = Objective {
                center_on: cfg.ablation.center_loss_on,
                center_weight: cfg.center_weight,
                center_space: cfg.center_space,
                stat_on: critic_report.is_some(),
                gamma: if critic_report.is_some() { g } else { 0.0 },
            };
            let (parts, grads) =
                objective_from_features(&nets, &ex_acts, &ys, &mut centers, Some(cfg.center_alpha), obj)?;
            apply_predictor_grads(&mut nets, &grads, lr, cfg.adam)?;
            ce_sum += parts.ce;
            if let Some(r) = critic_report {
                dist_sum += r.distance;
            }
            log.steps.push(StepRecord {
                iteration,
                epoch,
                gamma: parts.gamma,
                lr,
                ce: parts.ce,
                center: parts.center,
                stat: parts.stat,
                critic_loss: critic_report.map(|r| r.loss),
                distance: critic_report.map(|r| r.distance),
                total: parts.total,
            });
        }
        let n = batches.len() as f64;
        let eval_accuracy = control.eval.map(|ds| accuracy(&nets, ds)).transpose()?;
        log.epochs.push(EpochRecord {
            epoch,
            mean_ce: ce_sum / n,
            mean_distance: penalty.as_ref().map(|_| dist_sum / n),
            eval_accuracy,
        });
        epochs_done = epoch + 1;
    }
    Ok(TrainOutcome { networks: nets, centers, iteration, epochs_done, log })
}
