//! Classification metrics, patient-grouped folds and the three-mode protocol.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Domain, NUM_CLASSES};
use crate::grad::GradError;
use crate::seed::{derive_seed, stream};
use crate::train::{train, Networks, TrainConfig, TrainControl, TrainLog, TrainMode};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no predictions")]
    Empty,
    #[error("label {0} is out of range")]
    LabelOutOfRange(usize),
    #[error("fewer than two classes are present")]
    TooFewClasses,
    #[error("invalid fold request: {0}")]
    Folds(String),
    #[error(transparent)]
    Train(#[from] GradError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub truth: usize,
    pub predicted: usize,
    pub probs: Vec<f64>,
    pub patient: u32,
    pub domain: Domain,
}

pub type Confusion = [[u64; NUM_CLASSES]; NUM_CLASSES];

/// Rows are true classes, columns predicted classes.
pub fn confusion_matrix(preds: &[Prediction]) -> Result<Confusion, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut m = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for p in preds {
        for l in [p.truth, p.predicted] {
            if l >= NUM_CLASSES {
                return Err(MetricsError::LabelOutOfRange(l));
            }
        }
        m[p.truth][p.predicted] += 1;
    }
    Ok(m)
}

pub fn accuracy(m: &Confusion) -> f64 {
    let total: u64 = m.iter().flatten().sum();
    let trace: u64 = (0..NUM_CLASSES).map(|i| m[i][i]).sum();
    trace as f64 / total as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Unweighted means of per-class precision, recall and F1, with `0/0 = 0`.
pub fn macro_prf1(m: &Confusion) -> Prf1 {
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for c in 0..NUM_CLASSES {
        let tp = m[c][c];
        let predicted: u64 = (0..NUM_CLASSES).map(|t| m[t][c]).sum();
        let actual: u64 = m[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        p_sum += p;
        r_sum += r;
        f_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let k = NUM_CLASSES as f64;
    Prf1 { precision: p_sum / k, recall: r_sum / k, f1: f_sum / k }
}

/// Mann-Whitney AUC with average ranks for ties.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub value: f64,
    /// Classes without both positives and negatives.
    pub skipped: Vec<usize>,
}

/// One-vs-rest AUC of each class probability, averaged over usable classes.
pub fn auc_ovr_macro(preds: &[Prediction]) -> Result<AucReport, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut values = Vec::new();
    let mut skipped = Vec::new();
    for c in 0..NUM_CLASSES {
        let scores: Vec<f64> = preds.iter().map(|p| p.probs[c]).collect();
        let positive: Vec<bool> = preds.iter().map(|p| p.truth == c).collect();
        match binary_auc(&scores, &positive) {
            Some(a) => values.push(a),
            None => skipped.push(c),
        }
    }
    if values.len() < 2 {
        return Err(MetricsError::TooFewClasses);
    }
    Ok(AucReport { value: values.iter().sum::<f64>() / values.len() as f64, skipped })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 5] = ["accuracy", "precision", "recall", "f1", "auc"];

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.precision, self.recall, self.f1, self.auc]
    }

    pub fn from_values(v: [f64; 5]) -> Self {
        Self { accuracy: v[0], precision: v[1], recall: v[2], f1: v[3], auc: v[4] }
    }
}

pub fn evaluate(preds: &[Prediction]) -> Result<(Metrics, Confusion), MetricsError> {
    let m = confusion_matrix(preds)?;
    let prf = macro_prf1(&m);
    let auc = auc_ovr_macro(preds)?;
    Ok((
        Metrics { accuracy: accuracy(&m), precision: prf.precision, recall: prf.recall, f1: prf.f1, auc: auc.value },
        m,
    ))
}

/// Predictions for every labeled sample of a dataset.
pub fn predict_dataset(nets: &Networks, ds: &Dataset) -> Result<Vec<Prediction>, MetricsError> {
    let probs = nets.predict(&nets.prepare(ds)?)?;
    Ok(ds
        .samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let row = probs.row(i);
            let predicted = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            s.label.map(|l| Prediction {
                truth: l.index(),
                predicted,
                probs: row.to_vec(),
                patient: s.patient,
                domain: s.domain,
            })
        })
        .collect())
}

/// Fold index per patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: BTreeMap<u32, usize>,
}

impl FoldPlan {
    pub fn test_patients(&self, fold: usize) -> Vec<u32> {
        self.assignment.iter().filter(|(_, &f)| f == fold).map(|(&p, _)| p).collect()
    }

    pub fn fold_of(&self, patient: u32) -> Option<usize> {
        self.assignment.get(&patient).copied()
    }
}

/// Shuffles the distinct patients and deals them round-robin into `k` folds.
pub fn grouped_kfold(patients: &[u32], k: usize, seed: u64) -> Result<FoldPlan, MetricsError> {
    if k < 2 {
        return Err(MetricsError::Folds(format!("k = {k} is below 2")));
    }
    let mut distinct: Vec<u32> = patients.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < k {
        return Err(MetricsError::Folds(format!("{} patients cannot fill {k} folds", distinct.len())));
    }
    distinct.shuffle(&mut stream(seed, &[0xF01D]));
    let assignment = distinct.into_iter().enumerate().map(|(i, p)| (p, i % k)).collect();
    Ok(FoldPlan { k, assignment })
}

/// A named training configuration evaluated by the protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub config: TrainConfig,
}

impl Arm {
    /// The lower bound, adapted model and upper bound sharing one base config.
    pub fn standard(base: &TrainConfig) -> Vec<Arm> {
        TrainMode::ALL
            .into_iter()
            .map(|mode| Arm { name: mode.name().to_string(), config: TrainConfig { mode, ..base.clone() } })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolPlan {
    pub k: usize,
    pub seeds: Vec<u64>,
    /// Folds run per seed; all `k` when unset.
    pub folds: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub arm: String,
    pub seed: u64,
    pub fold: usize,
    pub test_patients: Vec<u32>,
    pub metrics: Metrics,
    pub confusion: Confusion,
    pub log: TrainLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; absent for a single run.
    pub std: Option<f64>,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    MeanStd { mean, std }
}

/// `(adapted - lower) / (upper - lower)`, undefined when the bounds coincide.
pub fn gap_coverage(lower: f64, adapted: f64, upper: f64) -> Option<f64> {
    let span = upper - lower;
    (span != 0.0).then(|| (adapted - lower) / span)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub runs: usize,
    /// Keyed by metric name.
    pub metrics: BTreeMap<String, MeanStd>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub plan: ProtocolPlan,
    pub auc_scheme: String,
    pub runs: Vec<RunResult>,
    pub summary: Vec<ArmSummary>,
    /// Per metric, from the arm means; `None` when the bounds coincide.
    pub coverage: BTreeMap<String, Option<f64>>,
}

impl ProtocolReport {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.summary.iter().find(|s| s.arm == name)
    }

    /// Runs of one arm ordered by (seed, fold).
    pub fn runs_of(&self, name: &str) -> Vec<&RunResult> {
        self.runs.iter().filter(|r| r.arm == name).collect()
    }
}

/// Trains every arm on every (seed, fold) and scores it on the held-out
/// target patients. The source set is used whole; target training data
/// excludes the test fold.
pub fn run_protocol(
    source: &Dataset,
    target: &Dataset,
    arms: &[Arm],
    plan: &ProtocolPlan,
) -> Result<ProtocolReport, MetricsError> {
    if plan.seeds.is_empty() || arms.is_empty() {
        return Err(MetricsError::Folds("protocol needs at least one seed and one arm".into()));
    }
    if !target.is_fully_labeled() {
        return Err(MetricsError::Folds("target set needs labels for scoring".into()));
    }
    let folds = plan.folds.clone().unwrap_or_else(|| (0..plan.k).collect());
    if folds.iter().any(|&f| f >= plan.k) {
        return Err(MetricsError::Folds("fold index beyond k".into()));
    }
    let mut jobs = Vec::new();
    for &seed in &plan.seeds {
        let fold_plan = grouped_kfold(&target.patients(), plan.k, seed)?;
        for &fold in &folds {
            for arm in arms {
                jobs.push((seed, fold, fold_plan.test_patients(fold), arm));
            }
        }
    }
    let runs = jobs
        .into_par_iter()
        .map(|(seed, fold, test_patients, arm)| {
            let test = target.filter_patients(|p| test_patients.contains(&p));
            let train_target = target.filter_patients(|p| !test_patients.contains(&p));
            assert!(
                train_target.samples.iter().all(|s| !test_patients.contains(&s.patient)),
                "test patients leaked into training"
            );
            let cfg = TrainConfig { seed: derive_seed(seed, &[fold as u64]), ..arm.config.clone() };
            let out = train(&cfg, Some(source), Some(&train_target), TrainControl::default())?;
            let preds = predict_dataset(&out.networks, &test)?;
            let (metrics, confusion) = evaluate(&preds)?;
            Ok(RunResult { arm: arm.name.clone(), seed, fold, test_patients, metrics, confusion, log: out.log })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;

    let summary: Vec<ArmSummary> = arms
        .iter()
        .map(|arm| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.arm == arm.name).collect();
            let metrics = Metrics::NAMES
                .iter()
                .enumerate()
                .map(|(k, name)| {
                    let v: Vec<f64> = mine.iter().map(|r| r.metrics.values()[k]).collect();
                    (name.to_string(), mean_std(&v))
                })
                .collect();
            ArmSummary { arm: arm.name.clone(), runs: mine.len(), metrics }
        })
        .collect();
    let mut coverage = BTreeMap::new();
    let find = |mode: TrainMode| summary.iter().find(|s| s.arm == mode.name());
    if let (Some(lo), Some(mid), Some(hi)) = (find(TrainMode::SourceOnly), find(TrainMode::Uda), find(TrainMode::TargetSupervised)) {
        for name in Metrics::NAMES {
            let m = |s: &ArmSummary| s.metrics[name].mean;
            coverage.insert(name.to_string(), gap_coverage(m(lo), m(mid), m(hi)));
        }
    }
    Ok(ProtocolReport { plan: plan.clone(), auc_scheme: "one-vs-rest macro, tie-corrected rank statistic".into(), runs, summary, coverage })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(truth: usize, predicted: usize) -> Prediction {
        let mut probs = vec![0.0; NUM_CLASSES];
        probs[predicted] = 1.0;
        Prediction { truth, predicted, probs, patient: 0, domain: Domain::Target }
    }

    #[test]
    fn confusion_single_entry() {
        let m = confusion_matrix(&[pred(2, 4)]).unwrap();
        assert_eq!(m[2][4], 1);
        assert_eq!(m.iter().flatten().sum::<u64>(), 1);
        assert!(confusion_matrix(&[]).is_err());
        assert!(matches!(confusion_matrix(&[pred(5, 0)]), Err(MetricsError::LabelOutOfRange(5))));
    }

    #[test]
    fn perfect_predictions() {
        let preds: Vec<_> = (0..10).map(|i| pred(i % 5, i % 5)).collect();
        let m = confusion_matrix(&preds).unwrap();
        assert_eq!(accuracy(&m), 1.0);
        assert_eq!(macro_prf1(&m), Prf1 { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(auc_ovr_macro(&preds).unwrap().value, 1.0);
    }

    #[test]
    fn ties_give_one_half() {
        let preds: Vec<_> = (0..10)
            .map(|i| Prediction { truth: i % 5, predicted: 0, probs: vec![0.2; 5], patient: 0, domain: Domain::Source })
            .collect();
        assert_eq!(auc_ovr_macro(&preds).unwrap().value, 0.5);
    }

    #[test]
    fn coverage_convention() {
        assert_eq!(gap_coverage(0.5, 0.7, 0.5), None);
        let c = gap_coverage(43.52, 84.92, 90.49).unwrap();
        assert!((c - 0.8814).abs() < 1e-3);
    }

    #[test]
    fn kfold_sizes() {
        let patients: Vec<u32> = (0..10).collect();
        let plan = grouped_kfold(&patients, 5, 3).unwrap();
        for f in 0..5 {
            assert_eq!(plan.test_patients(f).len(), 2);
        }
        assert_eq!(plan, grouped_kfold(&patients, 5, 3).unwrap());
        assert!(grouped_kfold(&patients, 1, 0).is_err());
        assert!(grouped_kfold(&patients[..3], 5, 0).is_err());
    }
}
