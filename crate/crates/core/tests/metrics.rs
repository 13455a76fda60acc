use proptest::prelude::*;
use rand::Rng;
use uda_core::data::{Domain, NUM_CLASSES};
use uda_core::metrics::*;
use uda_core::seed::stream;

fn pred(truth: usize, predicted: usize, probs: Vec<f64>) -> Prediction {
    Prediction { truth, predicted, probs, patient: 0, domain: Domain::Target }
}

fn brute_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for i in (0..scores.len()).filter(|&i| positive[i]) {
        for j in (0..scores.len()).filter(|&j| !positive[j]) {
            pairs += 1.0;
            num += if scores[i] > scores[j] {
                1.0
            } else if scores[i] == scores[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    num / pairs
}

#[test]
fn auc_matches_pair_enumeration() {
    let mut rng = stream(11, &[]);
    let mut cases = 0;
    while cases < 50 {
        let n = rng.random_range(8..=32);
        let coarse = rng.random_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| if coarse { rng.random_range(0..4) as f64 / 4.0 } else { rng.random::<f64>() })
            .collect();
        let positive: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let Some(auc) = binary_auc(&scores, &positive) else { continue };
        assert!((auc - brute_auc(&scores, &positive)).abs() < 1e-12);
        cases += 1;
    }
}

#[test]
fn eight_sample_auc() {
    let scores = [0.9, 0.8, 0.8, 0.4, 0.35, 0.3, 0.3, 0.1];
    let positive = [true, true, false, true, false, true, false, false];
    // 16 pairs: 11 concordant, 2 ties, 3 discordant.
    assert_eq!(binary_auc(&scores, &positive), Some(12.0 / 16.0));
    assert_eq!(binary_auc(&scores, &[true; 8]), None);
}

fn fixture() -> Vec<Prediction> {
    let pairs = [
        (0, 0), (0, 0), (0, 0), (0, 1),
        (1, 1), (1, 1), (1, 2), (1, 0),
        (2, 2), (2, 2), (2, 2), (2, 2),
        (3, 3), (3, 3), (3, 4), (3, 0),
        (4, 4), (4, 4), (4, 4), (4, 3),
    ];
    pairs
        .iter()
        .map(|&(t, p)| {
            let mut probs = vec![0.1; 5];
            probs[p] = 0.6;
            pred(t, p, probs)
        })
        .collect()
}

#[test]
fn twenty_sample_fixture() {
    let m = confusion_matrix(&fixture()).unwrap();
    assert_eq!(
        m,
        [[3, 1, 0, 0, 0], [1, 2, 1, 0, 0], [0, 0, 4, 0, 0], [1, 0, 0, 2, 1], [0, 0, 0, 1, 3]]
    );
    assert_eq!(accuracy(&m), 0.7);
    let prf = macro_prf1(&m);
    assert!((prf.precision - 209.0 / 300.0).abs() < 1e-12);
    assert!((prf.recall - 0.7).abs() < 1e-12);
    assert!((prf.f1 - 869.0 / 1260.0).abs() < 1e-12);
}

#[test]
fn confusion_matches_brute_tally() {
    let mut rng = stream(3, &[]);
    let preds: Vec<Prediction> = (0..50)
        .map(|_| pred(rng.random_range(0..5), rng.random_range(0..5), vec![0.2; 5]))
        .collect();
    let m = confusion_matrix(&preds).unwrap();
    for t in 0..NUM_CLASSES {
        for p in 0..NUM_CLASSES {
            let count = preds.iter().filter(|x| x.truth == t && x.predicted == p).count() as u64;
            assert_eq!(m[t][p], count);
        }
    }
    assert_eq!(m.iter().flatten().sum::<u64>(), 50);
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(matches!(confusion_matrix(&[]), Err(MetricsError::Empty)));
    assert!(matches!(confusion_matrix(&[pred(5, 0, vec![0.2; 5])]), Err(MetricsError::LabelOutOfRange { .. })));
    let one_class: Vec<Prediction> = (0..4).map(|_| pred(2, 2, vec![0.2; 5])).collect();
    assert!(matches!(auc_ovr_macro(&one_class), Err(MetricsError::TooFewClasses)));
    assert!(grouped_kfold(&[1, 2], 3, 0).is_err());
    assert!(grouped_kfold(&[1, 2, 3], 1, 0).is_err());
}

#[test]
fn absent_classes_are_skipped_in_auc() {
    let preds = vec![
        pred(0, 0, vec![0.7, 0.1, 0.1, 0.05, 0.05]),
        pred(1, 1, vec![0.1, 0.7, 0.1, 0.05, 0.05]),
        pred(1, 0, vec![0.5, 0.3, 0.1, 0.05, 0.05]),
    ];
    let r = auc_ovr_macro(&preds).unwrap();
    assert_eq!(r.skipped, vec![2, 3, 4]);
    assert!((r.value - 1.0).abs() < 1e-12);
}

#[test]
fn coverage_and_summary_conventions() {
    assert_eq!(gap_coverage(0.4, 0.7, 0.8), Some(0.7499999999999998));
    assert_eq!(gap_coverage(0.5, 0.6, 0.5), None);
    let ms = mean_std(&[1.0, 2.0, 3.0]);
    assert_eq!((ms.mean, ms.std), (2.0, Some(1.0)));
    assert_eq!(mean_std(&[4.0]).std, None);
}

fn random_preds(seed: u64, n: usize) -> Vec<Prediction> {
    let mut rng = stream(seed, &[1]);
    (0..n)
        .map(|i| {
            let raw: Vec<f64> = (0..5).map(|_| rng.random::<f64>() + 0.01).collect();
            let s: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let predicted = (0..5).fold(0, |b, k| if probs[k] > probs[b] { k } else { b });
            pred(i % 5, predicted, probs)
        })
        .collect()
}

proptest! {
    #[test]
    fn auc_is_rank_invariant(seed in any::<u64>(), n in 10usize..40) {
        let preds = random_preds(seed, n);
        let moved: Vec<Prediction> = preds
            .iter()
            .map(|p| Prediction { probs: p.probs.iter().map(|v| (3.0 * v).exp() - 0.5).collect(), ..p.clone() })
            .collect();
        let (a, b) = (auc_ovr_macro(&preds).unwrap(), auc_ovr_macro(&moved).unwrap());
        prop_assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn macro_metrics_ignore_class_relabeling(seed in any::<u64>(), shift in 1usize..5) {
        let preds = random_preds(seed, 30);
        let perm = |c: usize| (c + shift) % 5;
        let relabeled: Vec<Prediction> = preds
            .iter()
            .map(|p| {
                let mut probs = vec![0.0; 5];
                for (c, &v) in p.probs.iter().enumerate() {
                    probs[perm(c)] = v;
                }
                pred(perm(p.truth), perm(p.predicted), probs)
            })
            .collect();
        let (a, _) = evaluate(&preds).unwrap();
        let (b, _) = evaluate(&relabeled).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn folds_never_split_a_patient(seed in any::<u64>(), n in 5usize..40, k in 2usize..6) {
        prop_assume!(n >= k);
        let patients: Vec<u32> = (0..n as u32).flat_map(|p| [p, p, p]).collect();
        let plan = grouped_kfold(&patients, k, seed).unwrap();
        prop_assert_eq!(plan.assignment.len(), n);
        let mut sizes = vec![0usize; k];
        for f in 0..k {
            let test = plan.test_patients(f);
            sizes[f] = test.len();
            for p in &test {
                prop_assert_eq!(plan.fold_of(*p), Some(f));
            }
        }
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}
