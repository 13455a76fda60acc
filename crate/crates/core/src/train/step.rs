use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::centers::CenterBank;
use super::config::CenterSpace;
use super::model::Networks;
use crate::grad::{adam_step, backward, forward, Activations, AdamConfig, GradError, GradientPenalty, Gradients, Tensor, input_gradient};
use crate::nets::Net;
use crate::nets::{CRITIC_INPUT, EXTRACTOR_INPUT, FEATURES, HIDDEN, LOGITS, PREDICTOR_INPUT, SCORE};

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let n = logits.rows();
    assert_eq!(n, labels.len());
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let log_z = m + sum.ln();
        loss += log_z - row[y];
        for (k, g) in grad.row_mut(i).iter_mut().enumerate() {
            let p = (row[k] - log_z).exp();
            *g = (p - if k == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

/// Row-mean difference of a per-row scalar between the first `n_first` rows
/// and the rest, plus the per-row seed of its gradient.
fn mean_difference(scores: &Tensor, n_first: usize) -> (f64, Tensor) {
    let n = scores.rows();
    let n_rest = n - n_first;
    let mut seed = Tensor::zeros(scores.shape());
    let (mut a, mut b) = (0.0, 0.0);
    for i in 0..n {
        if i < n_first {
            a += scores.row(i)[0];
            seed.row_mut(i)[0] = 1.0 / n_first as f64;
        } else {
            b += scores.row(i)[0];
            seed.row_mut(i)[0] = -1.0 / n_rest as f64;
        }
    }
    (a / n_first as f64 - b / n_rest as f64, seed)
}

fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor, GradError> {
    if a.shape()[1..] != b.shape()[1..] {
        return Err(GradError::Shape(format!("cannot stack {:?} on {:?}", b.shape(), a.shape())));
    }
    let mut shape = a.shape().to_vec();
    shape[0] += b.rows();
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::new(shape, data)
}

/// Mean critic score difference between two feature sets.
pub fn critic_distance(critic: &Net, z_s: &Tensor, z_t: &Tensor) -> Result<f64, GradError> {
    let z = concat_rows(z_s, z_t)?;
    let scores = forward(&critic.graph, &critic.params, &[(CRITIC_INPUT, &z)])?.into_output(&critic.graph, SCORE)?;
    Ok(mean_difference(&scores, z_s.rows()).0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticReport {
    /// Mean score gap measured before the last update.
    pub distance: f64,
    /// `-distance + lambda * penalty` at the last step.
    pub loss: f64,
    pub penalty: f64,
}

/// Settings for one run of [`critic_inner_loop`].

/// Score gap divided by the largest critic input-gradient norm seen on the
/// samples and on a fixed grid of points between paired rows.
///
/// The penalized critic is only approximately 1-Lipschitz; rescaling by the
/// measured slope gives a lower-bound style estimate of the transport
/// distance. The sign is dropped because `f` and `-f` are equally admissible.
pub fn lipschitz_distance(critic: &Net, z_s: &Tensor, z_t: &Tensor) -> Result<f64, GradError> {
    const GRID: usize = 8;
    let (ns, nt) = (z_s.rows(), z_t.rows());
    let pairs = ns.max(nt);
    let dim = z_s.row_len();
    let mut probe = Tensor::zeros(&[pairs * (GRID + 1), dim]);
    for i in 0..pairs {
        let (a, b) = (z_s.row(i % ns), z_t.row(i % nt));
        for k in 0..=GRID {
            let eps = k as f64 / GRID as f64;
            for ((m, &a), &b) in probe.row_mut(i * (GRID + 1) + k).iter_mut().zip(a).zip(b) {
                *m = eps * a + (1.0 - eps) * b;
            }
        }
    }
    let g = input_gradient(&critic.graph, &critic.params, CRITIC_INPUT, &probe, SCORE)?;
    let slope = (0..g.rows())
        .map(|i| g.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if slope == 0.0 {
        return Ok(0.0);
    }
    Ok(critic_distance(critic, z_s, z_t)?.abs() / slope)
}

#[derive(Clone, Copy, Debug)]
pub struct CriticSettings {
    pub steps: usize,
    pub lambda: f64,
    pub lr: f64,
    pub adam: AdamConfig,
}

/// Trains the critic on fixed feature sets: each step ascends the score gap
/// minus `lambda` times the gradient penalty at random interpolates.
pub fn critic_inner_loop(
    critic: &mut Net,
    penalty: &GradientPenalty,
    z_s: &Tensor,
    z_t: &Tensor,
    settings: CriticSettings,
    rng: &mut impl Rng,
) -> Result<CriticReport, GradError> {
    let (ns, nt) = (z_s.rows(), z_t.rows());
    if ns == 0 || nt == 0 {
        return Err(GradError::Shape("critic needs features from both domains".into()));
    }
    let z = concat_rows(z_s, z_t)?;
    let score_id = critic.graph.output(SCORE)?;
    let pairs = ns.max(nt);
    let dim = z_s.row_len();
    let mut report = CriticReport { distance: 0.0, loss: 0.0, penalty: 0.0 };
    let mut perm: Vec<usize> = (0..nt).collect();
    for _ in 0..settings.steps {
        perm.shuffle(rng);
        let mut mix = Tensor::zeros(&[pairs, dim]);
        for i in 0..pairs {
            let eps: f64 = rng.random();
            let (a, b) = (z_s.row(i % ns), z_t.row(perm[i % nt]));
            for ((m, &a), &b) in mix.row_mut(i).iter_mut().zip(a).zip(b) {
                *m = eps * a + (1.0 - eps) * b;
            }
        }

        let acts = forward(&critic.graph, &critic.params, &[(CRITIC_INPUT, &z)])?;
        let (distance, seed) = mean_difference(acts.output(&critic.graph, SCORE)?, ns);
        let adj = backward(&critic.graph, &critic.params, &acts, &[(score_id, seed)], &[])?;
        let mut grads = adj.param_grads(&critic.graph, &critic.params)?;
        grads.scale(-1.0);
        let gp = penalty.evaluate(&critic.params, &mix, settings.lambda)?;
        grads.axpy(1.0, &gp.grads);
        adam_step(&mut critic.params, &grads, settings.lr, settings.adam)?;
        report = CriticReport { distance, loss: -distance + settings.lambda * gp.penalty, penalty: gp.penalty };
    }
    Ok(report)
}

/// Weights of the predictor-side objective for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub center_on: bool,
    pub center_weight: f64,
    pub center_space: CenterSpace,
    /// Includes the critic score gap between source and target features.
    pub stat_on: bool,
    pub gamma: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub ce: f64,
    pub center: f64,
    /// Critic score gap; `None` when the distance term is off.
    pub stat: Option<f64>,
    pub gamma: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct PredictorGrads {
    pub extractor: Gradients,
    pub predictor: Gradients,
}

/// Loss of the extractor and predictor on one batch and its gradient. The
/// critic contributes gradients through its input only. When
/// `center_alpha` is given the centers first absorb this batch.
#[allow(clippy::too_many_arguments)]
pub fn predictor_objective(
    nets: &Networks,
    x_source: &Tensor,
    labels: &[usize],
    x_target: Option<&Tensor>,
    centers: &mut CenterBank,
    center_alpha: Option<f64>,
    obj: Objective,
) -> Result<(LossParts, PredictorGrads), GradError> {
    let ns = x_source.rows();
    if ns == 0 || ns != labels.len() {
        return Err(GradError::Shape(format!("{ns} source rows for {} labels", labels.len())));
    }
    let x = match (obj.stat_on, x_target) {
        (true, Some(xt)) if xt.rows() > 0 => concat_rows(x_source, xt)?,
        (true, _) => return Err(GradError::Shape("distance term needs target rows".into())),
        (false, _) => x_source.clone(),
    };
    let ex = &nets.extractor;
    let ex_acts = forward(&ex.graph, &ex.params, &[(EXTRACTOR_INPUT, &x)])?;
    objective_from_features(nets, &ex_acts, labels, centers, center_alpha, obj)
}

/// Extractor forward pass over source rows followed by target rows.
pub fn extractor_pass(nets: &Networks, x_source: &Tensor, x_target: Option<&Tensor>) -> Result<Activations, GradError> {
    let x = match x_target {
        Some(xt) => concat_rows(x_source, xt)?,
        None => x_source.clone(),
    };
    forward(&nets.extractor.graph, &nets.extractor.params, &[(EXTRACTOR_INPUT, &x)])
}

/// [`predictor_objective`] on an existing extractor pass whose first
/// `labels.len()` rows are source samples.
pub fn objective_from_features(
    nets: &Networks,
    ex_acts: &Activations,
    labels: &[usize],
    centers: &mut CenterBank,
    center_alpha: Option<f64>,
    obj: Objective,
) -> Result<(LossParts, PredictorGrads), GradError> {
    let ns = labels.len();
    let ex = &nets.extractor;
    let z = ex_acts.output(&ex.graph, FEATURES)?;
    if obj.stat_on && z.rows() <= ns {
        return Err(GradError::Shape("distance term needs target rows".into()));
    }
    let source_rows: Vec<usize> = (0..ns).collect();
    let z_s = z.select_rows(&source_rows);

    let pr = &nets.predictor;
    let pr_acts = forward(&pr.graph, &pr.params, &[(PREDICTOR_INPUT, &z_s)])?;
    let (ce, dlogits) = softmax_cross_entropy(pr_acts.output(&pr.graph, LOGITS)?, labels);
    let mut pr_seeds = vec![(pr.graph.output(LOGITS)?, dlogits)];
    let mut center = 0.0;
    let mut center_grad_z = None;
    if obj.center_on {
        let rep = match obj.center_space {
            CenterSpace::Features => &z_s,
            CenterSpace::Penultimate => pr_acts.output(&pr.graph, HIDDEN)?,
        };
        if let Some(alpha) = center_alpha {
            centers.update(rep, labels, alpha);
        }
        let (loss, mut grad) = centers.loss(rep, labels);
        center = loss;
        grad.scale(obj.center_weight);
        match obj.center_space {
            CenterSpace::Features => center_grad_z = Some(grad),
            CenterSpace::Penultimate => pr_seeds.push((pr.graph.output(HIDDEN)?, grad)),
        }
    }
    let pr_adj = backward(&pr.graph, &pr.params, &pr_acts, &pr_seeds, &[PREDICTOR_INPUT])?;
    let predictor_grads = pr_adj.param_grads(&pr.graph, &pr.params)?;
    let mut dz_s = pr_adj.input(&pr.graph, PREDICTOR_INPUT, ns)?;
    if let Some(g) = center_grad_z {
        dz_s.add_assign(&g);
    }

    let mut dz = Tensor::zeros(z.shape());
    dz.data_mut()[..dz_s.len()].copy_from_slice(dz_s.data());
    let mut stat = None;
    if obj.stat_on {
        let cr = &nets.critic;
        let cr_acts = forward(&cr.graph, &cr.params, &[(CRITIC_INPUT, z)])?;
        let (gap, mut seed) = mean_difference(cr_acts.output(&cr.graph, SCORE)?, ns);
        seed.scale(obj.gamma);
        let cr_adj = backward(&cr.graph, &cr.params, &cr_acts, &[(cr.graph.output(SCORE)?, seed)], &[CRITIC_INPUT])?;
        dz.add_assign(&cr_adj.input(&cr.graph, CRITIC_INPUT, z.rows())?);
        stat = Some(gap);
    }
    let ex_adj = backward(&ex.graph, &ex.params, ex_acts, &[(ex.graph.output(FEATURES)?, dz)], &[])?;
    let extractor_grads = ex_adj.param_grads(&ex.graph, &ex.params)?;

    let total = ce + obj.center_weight * center + obj.gamma * stat.unwrap_or(0.0);
    let parts = LossParts { ce, center, stat, gamma: obj.gamma, total };
    Ok((parts, PredictorGrads { extractor: extractor_grads, predictor: predictor_grads }))
}

/// Applies [`predictor_objective`] gradients to the extractor and predictor.
pub fn apply_predictor_grads(nets: &mut Networks, grads: &PredictorGrads, lr: f64, adam: AdamConfig) -> Result<(), GradError> {
    adam_step(&mut nets.extractor.params, &grads.extractor, lr, adam)?;
    adam_step(&mut nets.predictor.params, &grads.predictor, lr, adam)
}
