mod common;

use common::*;
use uda_core::data::{Dataset, Domain, InputMode};
use uda_core::grad::{AdamConfig, GradientPenalty, Tensor};
use uda_core::kspace::{synth_dataset, DomainSpec, SeverityRanges, SynthOptions};
use uda_core::nets::{build_critic, NetSpec, CRITIC_INPUT, SCORE};
use uda_core::seed::stream;
use uda_core::train::*;

fn tiny_sets(mode: InputMode) -> (Dataset, Dataset) {
    let opts = |domain, seed| SynthOptions {
        domain,
        n_patients: 2,
        slices_per_patient: 2,
        seed,
        mode,
        ranges: SeverityRanges::default(),
    };
    (
        synth_dataset(&DomainSpec::standard_source(16), &opts(Domain::Source, 1)).unwrap(),
        synth_dataset(&DomainSpec::standard_target(16), &opts(Domain::Target, 2)).unwrap(),
    )
}

fn tiny_config(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        mode,
        epochs: 3,
        batch_size: 16,
        n_critic: 2,
        step_size: 2,
        network: NetworkConfig {
            conv_channels: vec![3, 4],
            feature_dim: 6,
            predictor_hidden: Some(vec![7, 5]),
            critic_hidden: vec![5],
            attention_hidden: 4,
            ..NetworkConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn critic_1d(seed: u64) -> (uda_core::nets::Net, GradientPenalty) {
    let spec = NetSpec { feature_dim: 1, attention: false, ..NetSpec::default() };
    let critic = build_critic(&spec, seed).unwrap();
    let pen = GradientPenalty::new(&critic.graph, CRITIC_INPUT, SCORE).unwrap();
    (critic, pen)
}

fn settings(steps: usize, lambda: f64, lr: f64) -> CriticSettings {
    CriticSettings { steps, lambda, lr, adam: AdamConfig::default() }
}

#[test]
fn identical_sets_have_zero_distance() {
    let spec = NetSpec { feature_dim: 4, ..NetSpec::default() };
    let mut critic = build_critic(&spec, 0).unwrap();
    let pen = GradientPenalty::new(&critic.graph, CRITIC_INPUT, SCORE).unwrap();
    let z = random_tensor(&[16, 4], 1.0, 3);
    assert_eq!(critic_distance(&critic, &z, &z).unwrap(), 0.0);
    let r = critic_inner_loop(&mut critic, &pen, &z, &z, settings(20, 10.0, 1e-2), &mut stream(0, &[])).unwrap();
    assert_eq!(r.distance, 0.0);
}

#[test]
fn unpenalized_critic_grows_without_bound() {
    let (mut critic, pen) = critic_1d(1);
    let (zs, zt) = (Tensor::filled(&[16, 1], 0.0), Tensor::filled(&[16, 1], 3.0));
    let mut rng = stream(1, &[]);
    let mut last = 0.0;
    for round in 0..4 {
        let r = critic_inner_loop(&mut critic, &pen, &zs, &zt, settings(150, 0.0, 1e-2), &mut rng).unwrap();
        if round > 0 {
            assert!(r.distance > last, "round {round}: {} after {last}", r.distance);
        }
        last = r.distance;
    }
    assert!(last > 30.0, "{last}");
}

#[test]
fn penalized_critic_recovers_point_mass_distance() {
    let (mut critic, pen) = critic_1d(2);
    let (zs, zt) = (Tensor::filled(&[32, 1], 3.0), Tensor::filled(&[32, 1], 0.0));
    critic_inner_loop(&mut critic, &pen, &zs, &zt, settings(1500, 10.0, 1e-3), &mut stream(2, &[])).unwrap();
    let raw = critic_distance(&critic, &zs, &zt).unwrap();
    let normalized = lipschitz_distance(&critic, &zs, &zt).unwrap();
    // Stationary points of the penalized objective for a constant slope m:
    // m = 1 + 3 / (2 lambda) and, on the wrong-signed branch, m = 1 - 3 / (2 lambda).
    assert!((raw - 3.45).abs() < 0.05 || (raw + 2.55).abs() < 0.05, "raw gap {raw}");
    assert!((normalized - 3.0).abs() < 0.45, "normalized {normalized}");
}

fn objective_total(nets: &Networks, xs: &Tensor, ys: &[usize], xt: &Tensor, centers: &CenterBank, obj: Objective) -> f64 {
    let mut c = centers.clone();
    predictor_objective(nets, xs, ys, Some(xt), &mut c, None, obj).unwrap().0.total
}

#[test]
fn predictor_objective_matches_differences() {
    for space in [CenterSpace::Features, CenterSpace::Penultimate] {
        let mut cfg = tiny_config(TrainMode::Uda);
        cfg.network.critic_activation = uda_core::grad::Activation::Tanh;
        cfg.center_space = space;
        let spec = NetSpec { image_size: 8, ..cfg.net_spec(8) };
        let mut nets = Networks::build(&spec, 4).unwrap();
        for net in [&mut nets.extractor, &mut nets.predictor] {
            for (i, name) in net.params.names().cloned().collect::<Vec<_>>().into_iter().enumerate() {
                if name.ends_with(".b") {
                    let shape = net.params.get(&name).unwrap().shape().to_vec();
                    *net.params.get_mut(&name).unwrap() = random_tensor(&shape, 0.3, 40 + i as u64);
                }
            }
        }
        let xs = random_tensor(&[4, 1, 8, 8], 1.0, 5);
        let xt = random_tensor(&[4, 1, 8, 8], 1.0, 6);
        let ys = [0, 3, 3, 1];
        let dim = match space {
            CenterSpace::Features => spec.feature_dim,
            CenterSpace::Penultimate => spec.penultimate_dim(),
        };
        let mut centers = CenterBank::new(dim);
        for k in [0, 1, 3] {
            centers.set(k, random_tensor(&[dim], 0.5, 70 + k as u64).into_data());
        }
        let obj = Objective { center_on: true, center_weight: 0.7, center_space: space, stat_on: true, gamma: 0.4 };
        let (parts, grads) = predictor_objective(&nets, &xs, &ys, Some(&xt), &mut centers.clone(), None, obj).unwrap();
        assert!((parts.total - (parts.ce + 0.7 * parts.center + 0.4 * parts.stat.unwrap())).abs() < 1e-12);

        let numeric = fd_params(&nets.extractor.params, 1e-5, |p| {
            let mut n = nets.clone();
            n.extractor.params = p.clone();
            objective_total(&n, &xs, &ys, &xt, &centers, obj)
        });
        let err = rel_err(&grads.extractor.flatten(), &numeric);
        assert!(err < 1e-5, "{space:?} extractor: {err}");
        let numeric = fd_params(&nets.predictor.params, 1e-5, |p| {
            let mut n = nets.clone();
            n.predictor.params = p.clone();
            objective_total(&n, &xs, &ys, &xt, &centers, obj)
        });
        let err = rel_err(&grads.predictor.flatten(), &numeric);
        assert!(err < 1e-5, "{space:?} predictor: {err}");
    }
}

#[test]
fn centers_converge_to_batch_means() {
    let reps = random_tensor(&[6, 3], 1.0, 8);
    let labels = [0, 1, 0, 2, 1, 0];
    for alpha in [0.1, 0.5, 1.0] {
        let mut bank = CenterBank::new(3);
        bank.set(0, vec![5.0, -5.0, 2.0]);
        for _ in 0..400 {
            bank.update(&reps, &labels, alpha);
        }
        for k in 0..3 {
            let rows: Vec<usize> = (0..6).filter(|&i| labels[i] == k).collect();
            for d in 0..3 {
                let mean = rows.iter().map(|&i| reps.row(i)[d]).sum::<f64>() / rows.len() as f64;
                assert!((bank.center(k).unwrap()[d] - mean).abs() < 1e-9, "alpha {alpha}");
            }
        }
        assert!(bank.center(4).is_none());
    }
}

#[test]
fn center_loss_matches_hand_value() {
    let mut bank = CenterBank::new(2);
    bank.set(1, vec![1.0, 0.0]);
    bank.set(2, vec![0.0, -1.0]);
    let reps = Tensor::new(vec![2, 2], vec![2.0, 2.0, 0.0, 1.0]).unwrap();
    let (loss, grad) = bank.loss(&reps, &[1, 2]);
    assert!((loss - 0.5 * (1.0 + 4.0 + 0.0 + 4.0) / 2.0).abs() < 1e-12);
    assert_eq!(grad.data(), &[0.5, 1.0, 0.0, 1.0]);
}

#[test]
fn target_labels_are_never_read() {
    let (src, tgt) = tiny_sets(InputMode::Spatial);
    let cfg = tiny_config(TrainMode::Uda);
    let a = train(&cfg, Some(&src), Some(&tgt), TrainControl::default()).unwrap();
    let b = train(&cfg, Some(&src), Some(&tgt.without_labels()), TrainControl::default()).unwrap();
    assert_eq!(serde_json::to_string(&a.log).unwrap(), serde_json::to_string(&b.log).unwrap());
    assert_eq!(a.state(), b.state());
}

#[test]
fn training_is_deterministic_and_logs_every_step() {
    let (src, tgt) = tiny_sets(InputMode::Kspace);
    let cfg = TrainConfig { input_mode: InputMode::Kspace, ..tiny_config(TrainMode::Uda) };
    let a = train(&cfg, Some(&src), Some(&tgt), TrainControl::default()).unwrap();
    let b = train(&cfg, Some(&src), Some(&tgt), TrainControl::default()).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.state(), b.state());
    let per_epoch = src.len() / cfg.half_batch();
    assert_eq!(a.log.steps.len(), per_epoch * cfg.epochs);
    let total = a.log.steps.len() as u64;
    for (i, s) in a.log.steps.iter().enumerate() {
        assert_eq!(s.iteration, i as u64 + 1);
        assert_eq!(s.gamma, gamma(s.iteration, total, true));
        assert!((s.total - (s.ce + cfg.center_weight * s.center + s.gamma * s.stat.unwrap())).abs() < 1e-12);
        assert_eq!(s.lr, uda_core::grad::lr_schedule(cfg.base_lr, s.epoch, cfg.step_size, cfg.decay));
        assert!(s.distance.is_some() && s.critic_loss.is_some());
    }
    assert_eq!(a.log.steps.last().unwrap().gamma, 1.0);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (src, tgt) = tiny_sets(InputMode::Spatial);
    let cfg = tiny_config(TrainMode::Uda);
    let full = train(&cfg, Some(&src), Some(&tgt), TrainControl::default()).unwrap();
    let first = train(&cfg, Some(&src), Some(&tgt), TrainControl { stop_after: Some(1), ..Default::default() }).unwrap();
    assert_eq!(first.epochs_done, 1);
    let rest = train(&cfg, Some(&src), Some(&tgt), TrainControl { resume: Some(first.state()), ..Default::default() }).unwrap();
    let mut joined = first.log.steps.clone();
    joined.extend(rest.log.steps.clone());
    assert_eq!(joined, full.log.steps);
    assert_eq!(rest.state(), full.state());
}

#[test]
fn baselines_share_the_first_step() {
    let (src, tgt) = tiny_sets(InputMode::Spatial);
    let uda = train(&tiny_config(TrainMode::Uda), Some(&src), Some(&tgt), TrainControl::default()).unwrap();
    let base = train(&tiny_config(TrainMode::SourceOnly), Some(&src), None, TrainControl::default()).unwrap();
    assert_eq!(uda.log.steps[0].ce, base.log.steps[0].ce);
    assert!(base.log.steps.iter().all(|s| s.stat.is_none() && s.distance.is_none()));
    let sup = train(&tiny_config(TrainMode::TargetSupervised), None, Some(&tgt), TrainControl::default()).unwrap();
    assert_eq!(sup.log.steps.len(), base.log.steps.len());
}

#[test]
fn mode_requirements_are_enforced() {
    let (src, tgt) = tiny_sets(InputMode::Spatial);
    assert!(train(&tiny_config(TrainMode::Uda), Some(&src), None, TrainControl::default()).is_err());
    assert!(train(&tiny_config(TrainMode::SourceOnly), None, Some(&tgt), TrainControl::default()).is_err());
    assert!(train(&tiny_config(TrainMode::TargetSupervised), Some(&src), Some(&tgt.without_labels()), TrainControl::default()).is_err());
    let kcfg = TrainConfig { input_mode: InputMode::Kspace, ..tiny_config(TrainMode::SourceOnly) };
    assert!(train(&kcfg, Some(&src), None, TrainControl::default()).is_err());
    let mut ablated = tiny_config(TrainMode::Uda);
    ablated.ablation.critic_on = false;
    let out = train(&ablated, Some(&src), None, TrainControl::default()).unwrap();
    assert!(out.log.steps.iter().all(|s| s.stat.is_none()));
}

#[test]
fn epochs_cover_the_labeled_pool() {
    let batches = assemble_epoch(40, Some(25), 8, 3, 0).unwrap();
    assert_eq!(batches.len(), 5);
    let mut seen: Vec<usize> = batches.iter().flat_map(|(s, _)| s.clone()).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..40).collect::<Vec<_>>());
    for (s, t) in &batches {
        assert_eq!(s.len(), t.as_ref().unwrap().len());
        assert!(t.as_ref().unwrap().iter().all(|&i| i < 25));
    }
    assert_ne!(assemble_epoch(40, None, 8, 3, 1).unwrap()[0].0, batches[0].0);
}
