mod common;

use common::*;
use proptest::prelude::*;
use uda_core::grad::*;

fn scalar_graph() -> (Graph, NodeId, NodeId) {
    let mut g = Graph::new();
    let x = g.input("x", &[1]).unwrap();
    let w = g.param("w", &[1, 1]).unwrap();
    let y = g.matmul(x, w).unwrap();
    g.set_output("y", y);
    (g, x, y)
}

#[test]
fn identity_graph_returns_its_input() {
    let mut g = Graph::new();
    let x = g.input("x", &[3]).unwrap();
    g.set_output("y", x);
    let t = random_tensor(&[2, 3], 1.0, 1);
    let acts = forward(&g, &ParamSet::new(), &[("x", &t)]).unwrap();
    assert_eq!(acts.output(&g, "y").unwrap(), &t);
}

#[test]
fn scalar_product() {
    let (g, _, _) = scalar_graph();
    let mut ps = ParamSet::new();
    ps.insert("w", Tensor::new(vec![1, 1], vec![2.0]).unwrap());
    let x = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
    let acts = forward(&g, &ps, &[("x", &x)]).unwrap();
    assert_eq!(acts.output(&g, "y").unwrap().data(), &[6.0]);
}

#[test]
fn mlp_matches_hand_chain() {
    let mut g = Graph::new();
    let x = g.input("x", &[2]).unwrap();
    let h = g.dense("l0", x, 2).unwrap();
    let h = g.activation(Activation::Tanh, h).unwrap();
    let h = g.dense("l1", h, 2).unwrap();
    let h = g.activation(Activation::Elu, h).unwrap();
    let y = g.dense("l2", h, 1).unwrap();
    g.set_output("y", y);
    let mut ps = ParamSet::new();
    let t = |s: &[usize], d: &[f64]| Tensor::new(s.to_vec(), d.to_vec()).unwrap();
    ps.insert("l0.w", t(&[2, 2], &[0.5, -1.0, 0.25, 2.0]));
    ps.insert("l0.b", t(&[2], &[0.1, -0.2]));
    ps.insert("l1.w", t(&[2, 2], &[1.5, 0.3, -0.7, -1.2]));
    ps.insert("l1.b", t(&[2], &[0.0, 0.05]));
    ps.insert("l2.w", t(&[2, 1], &[0.8, -0.6]));
    ps.insert("l2.b", t(&[1], &[0.3]));
    let input = t(&[1, 2], &[0.4, -0.9]);

    let (x0, x1) = (0.4f64, -0.9f64);
    let a0 = (x0 * 0.5 + x1 * 0.25 + 0.1).tanh();
    let a1 = (x0 * -1.0 + x1 * 2.0 - 0.2).tanh();
    let elu = |v: f64| if v > 0.0 { v } else { v.exp_m1() };
    let b0 = elu(a0 * 1.5 + a1 * -0.7);
    let b1 = elu(a0 * 0.3 + a1 * -1.2 + 0.05);
    let expected = b0 * 0.8 + b1 * -0.6 + 0.3;

    let acts = forward(&g, &ps, &[("x", &input)]).unwrap();
    assert!((acts.output(&g, "y").unwrap().data()[0] - expected).abs() < 1e-12);
}

#[test]
fn linear_loss_gradient() {
    let (mut g, _, y) = scalar_graph();
    let loss = g.mean_over_batch(y).unwrap();
    let mut ps = ParamSet::new();
    ps.insert("w", Tensor::new(vec![1, 1], vec![-0.4]).unwrap());
    let x = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
    let grads = backprop_params(&g, &ps, &[("x", &x)], loss).unwrap();
    assert_eq!(grads.get("w").unwrap().data(), &[3.0]);
}

#[test]
fn unused_parameter_gets_zero_gradient() {
    let (mut g, _, y) = scalar_graph();
    g.param("unused", &[2]).unwrap();
    let loss = g.mean_over_batch(y).unwrap();
    let mut ps = ParamSet::new();
    ps.insert("w", Tensor::new(vec![1, 1], vec![1.0]).unwrap());
    ps.insert("unused", Tensor::new(vec![2], vec![5.0, 6.0]).unwrap());
    let x = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
    let grads = backprop_params(&g, &ps, &[("x", &x)], loss).unwrap();
    assert_eq!(grads.get("unused").unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let (g, _, y) = scalar_graph();
    let mut ps = ParamSet::new();
    ps.insert("w", Tensor::new(vec![1, 1], vec![1.0]).unwrap());
    let x = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
    assert!(matches!(backprop_params(&g, &ps, &[("x", &x)], y), Err(GradError::NonScalarLoss(_))));
}

#[test]
fn non_finite_forward_is_a_numeric_fault() {
    let (g, _, _) = scalar_graph();
    let mut ps = ParamSet::new();
    ps.insert("w", Tensor::new(vec![1, 1], vec![f64::MAX]).unwrap());
    let x = Tensor::new(vec![1, 1], vec![10.0]).unwrap();
    assert!(matches!(forward(&g, &ps, &[("x", &x)]), Err(GradError::NumericFault { .. })));
}

#[test]
fn shape_mismatch_names_the_input() {
    let (g, _, _) = scalar_graph();
    let mut ps = ParamSet::new();
    ps.insert("w", Tensor::new(vec![1, 1], vec![1.0]).unwrap());
    let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
    let err = forward(&g, &ps, &[("x", &x)]).unwrap_err().to_string();
    assert!(err.contains("`x`"), "{err}");
}

#[test]
fn cnn_parameter_gradients_match_differences() {
    for seed in 0..4 {
        let (g, n_in) = random_cnn(seed);
        let ps = random_params(&g, 0.5, seed);
        let batch = 2;
        let mut shape = vec![batch];
        shape.extend_from_slice(&g.node(g.input_id("x").unwrap()).shape);
        assert_eq!(shape.iter().product::<usize>(), batch * n_in);
        let x = random_tensor(&shape, 1.0, seed + 100);
        let c = random_tensor(&[batch, 3], 1.0, seed + 200);
        let acts = forward(&g, &ps, &[("x", &x)]).unwrap();
        let adj = backward(&g, &ps, &acts, &[(g.output("y").unwrap(), c.clone())], &["x"]).unwrap();
        let analytic = adj.param_grads(&g, &ps).unwrap().flatten();
        let numeric = fd_params(&ps, 1e-5, |p| weighted_output(&g, p, ("x", &x), "y", &c));
        let err = rel_err(&analytic, &numeric);
        assert!(err < 1e-6, "seed {seed}: relative error {err}");

        let gx = adj.input(&g, "x", batch).unwrap();
        let numeric = fd_tensor(&x, 1e-5, |x| weighted_output(&g, &ps, ("x", x), "y", &c));
        let err = rel_err(gx.data(), &numeric);
        assert!(err < 1e-6, "seed {seed}: input relative error {err}");
    }
}

#[test]
fn backprop_is_linear_in_the_seed() {
    let (g, _) = random_cnn(9);
    let ps = random_params(&g, 0.5, 9);
    let mut shape = vec![3];
    shape.extend_from_slice(&g.node(g.input_id("x").unwrap()).shape);
    let x = random_tensor(&shape, 1.0, 1);
    let (c1, c2) = (random_tensor(&[3, 3], 1.0, 2), random_tensor(&[3, 3], 1.0, 3));
    let (a, b) = (0.7, -2.5);
    let y = g.output("y").unwrap();
    let acts = forward(&g, &ps, &[("x", &x)]).unwrap();
    let grad = |c: &Tensor| backward(&g, &ps, &acts, &[(y, c.clone())], &[]).unwrap().param_grads(&g, &ps).unwrap();
    let mut combo = c1.clone();
    combo.scale(a);
    combo.axpy(b, &c2);
    let mut expected = grad(&c1);
    expected.scale(a);
    expected.axpy(b, &grad(&c2));
    let got = grad(&combo).flatten();
    for (u, v) in got.iter().zip(expected.flatten()) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn constant_critic_has_zero_input_gradient_and_unit_penalty() {
    let mut g = Graph::new();
    let z = g.input("z", &[3]).unwrap();
    let w = g.param("w", &[3, 1]).unwrap();
    let s = g.matmul(z, w).unwrap();
    g.set_output("score", s);
    let mut ps = ParamSet::new();
    ps.insert("w", Tensor::zeros(&[3, 1]));
    let zt = random_tensor(&[4, 3], 1.0, 5);
    let gz = input_gradient(&g, &ps, "z", &zt, "score").unwrap();
    assert!(gz.data().iter().all(|&v| v == 0.0));
    let pen = penalty_param_gradient(&g, &ps, "z", "score", &zt, 1.0).unwrap();
    assert!((pen.penalty - 1.0).abs() < 1e-5);
}

fn scalar_critic(a: f64) -> (Graph, ParamSet) {
    let mut g = Graph::new();
    let z = g.input("z", &[1]).unwrap();
    let w = g.param("a", &[1, 1]).unwrap();
    let s = g.matmul(z, w).unwrap();
    g.set_output("score", s);
    let mut ps = ParamSet::new();
    ps.insert("a", Tensor::new(vec![1, 1], vec![a]).unwrap());
    (g, ps)
}

#[test]
fn linear_critic_penalty_closed_form() {
    let z = Tensor::new(vec![3, 1], vec![-1.0, 0.5, 2.0]).unwrap();
    let (g, ps) = scalar_critic(3.0);
    let pen = penalty_param_gradient(&g, &ps, "z", "score", &z, 1.0).unwrap();
    assert!((pen.penalty - 4.0).abs() < 1e-9);
    assert!((pen.grads.get("a").unwrap().data()[0] - 4.0).abs() < 1e-9);

    let (g, ps) = scalar_critic(-1.0);
    let pen = penalty_param_gradient(&g, &ps, "z", "score", &z, 10.0).unwrap();
    assert!(pen.penalty.abs() < 1e-12);
    assert!(pen.grads.get("a").unwrap().data()[0].abs() < 1e-9);

    let mut g = Graph::new();
    let z2 = g.input("z", &[2]).unwrap();
    let w = g.param("a", &[2, 1]).unwrap();
    let s = g.matmul(z2, w).unwrap();
    g.set_output("score", s);
    let mut ps = ParamSet::new();
    ps.insert("a", Tensor::new(vec![2, 1], vec![0.6, -0.8]).unwrap());
    let zt = random_tensor(&[5, 2], 1.0, 3);
    let gz = input_gradient(&g, &ps, "z", &zt, "score").unwrap();
    for i in 0..5 {
        let n = gz.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }
}

#[test]
fn elu_critic_input_gradient_matches_differences() {
    for seed in 0..3 {
        let g = random_critic(Activation::Elu, 4, 6);
        let ps = random_params(&g, 0.7, seed);
        let z = random_tensor(&[3, 4], 1.0, seed + 50);
        let gz = input_gradient(&g, &ps, "z", &z, "score").unwrap();
        let ones = Tensor::filled(&[3, 1], 1.0);
        let numeric = fd_tensor(&z, 1e-5, |z| weighted_output(&g, &ps, ("z", z), "score", &ones));
        let err = rel_err(gz.data(), &numeric);
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

fn penalty_value(g: &Graph, ps: &ParamSet, z: &Tensor, lambda: f64) -> f64 {
    let gz = input_gradient(g, ps, "z", z, "score").unwrap();
    let rows = gz.rows();
    lambda
        * (0..rows)
            .map(|i| ((gz.row(i).iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt() - 1.0).powi(2))
            .sum::<f64>()
        / rows as f64
}

#[test]
fn penalty_gradient_matches_differences() {
    for (seed, act) in [(0, Activation::Tanh), (1, Activation::Tanh), (2, Activation::Elu), (3, Activation::Sigmoid)] {
        let g = random_critic(act, 3, 5);
        let ps = random_params(&g, 0.8, seed);
        let z = random_tensor(&[4, 3], 1.0, seed + 10);
        let pen = penalty_param_gradient(&g, &ps, "z", "score", &z, 10.0).unwrap();
        assert!((pen.penalty * 10.0 - penalty_value(&g, &ps, &z, 10.0)).abs() < 1e-10);
        let numeric = fd_params(&ps, 1e-5, |p| penalty_value(&g, p, &z, 10.0));
        let err = rel_err(&pen.grads.flatten(), &numeric);
        assert!(err < 1e-5, "{act:?}: {err}");
    }
}

#[test]
fn adam_trajectories_are_reproducible() {
    let run = || {
        let g = random_critic(Activation::Tanh, 3, 4);
        let mut ps = random_params(&g, 0.5, 4);
        let z = random_tensor(&[6, 3], 1.0, 8);
        for _ in 0..5 {
            let pen = penalty_param_gradient(&g, &ps, "z", "score", &z, 1.0).unwrap();
            adam_step(&mut ps, &pen.grads, 0.01, AdamConfig::default()).unwrap();
        }
        (ps.flatten(), ps.step())
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.1, 5);
}

#[test]
fn schedule_examples() {
    assert_eq!(lr_schedule(0.01, 0, 20, 0.5), 0.01);
    assert_eq!(lr_schedule(0.01, 20, 20, 0.5), 0.005);
    assert_eq!(lr_schedule(0.3, 57, 7, 1.0), 0.3);
}

proptest! {
    #[test]
    fn schedule_is_non_increasing(base in 1e-5f64..1.0, e in 0usize..200, s in 1usize..50, d in 0.0f64..=1.0) {
        prop_assert!(lr_schedule(base, e + 1, s, d) <= lr_schedule(base, e, s, d));
    }

    #[test]
    fn forward_is_deterministic(seed in 0u64..1000) {
        let (g, _) = random_cnn(seed);
        let ps = random_params(&g, 0.5, seed);
        let mut shape = vec![2];
        shape.extend_from_slice(&g.node(g.input_id("x").unwrap()).shape);
        let x = random_tensor(&shape, 1.0, seed);
        let a = forward(&g, &ps, &[("x", &x)]).unwrap().into_output(&g, "y").unwrap();
        let b = forward(&g, &ps, &[("x", &x)]).unwrap().into_output(&g, "y").unwrap();
        prop_assert_eq!(a, b);
    }
}
