#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use uda_core::grad::{forward, Activation, Graph, ParamSet, Tensor};
use uda_core::seed::stream;

pub fn random_tensor(shape: &[usize], scale: f64, seed: u64) -> Tensor {
    let mut rng = stream(seed, &[0x7E57]);
    let n = shape.iter().product();
    let data = (0..n).map(|_| { let v: f64 = StandardNormal.sample(&mut rng); scale * v }).collect::<Vec<f64>>();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_params(graph: &Graph, scale: f64, seed: u64) -> ParamSet {
    let mut ps = ParamSet::new();
    for (i, (name, shape)) in graph.param_shapes().into_iter().enumerate() {
        ps.insert(&name, random_tensor(&shape, scale, seed.wrapping_mul(1000) + i as u64));
    }
    ps
}

/// `|a - b| / |b|` over whole vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

/// Central differences of `f` in every parameter coordinate, in the flattening
/// order of [`ParamSet::flatten`].
pub fn fd_params(params: &ParamSet, eps: f64, f: impl Fn(&ParamSet) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    let names: Vec<String> = params.names().cloned().collect();
    let mut p = params.clone();
    for name in names {
        let n = p.get(&name).unwrap().len();
        for i in 0..n {
            let orig = p.get(&name).unwrap().data()[i];
            p.get_mut(&name).unwrap().data_mut()[i] = orig + eps;
            let up = f(&p);
            p.get_mut(&name).unwrap().data_mut()[i] = orig - eps;
            let down = f(&p);
            p.get_mut(&name).unwrap().data_mut()[i] = orig;
            out.push((up - down) / (2.0 * eps));
        }
    }
    out
}

pub fn fd_tensor(x: &Tensor, eps: f64, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    let mut x = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + eps;
            let up = f(&x);
            x.data_mut()[i] = orig - eps;
            let down = f(&x);
            x.data_mut()[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Conv, pool and dense layers with randomized widths, output "y" of width 3.
pub fn random_cnn(seed: u64) -> (Graph, usize) {
    let mut rng = stream(seed, &[0xC0]);
    let cin = rng.random_range(1..=2);
    let c1 = rng.random_range(2..=4);
    let size = 4 * rng.random_range(1..=2);
    let hidden = rng.random_range(4..=8);
    let act = [Activation::Elu, Activation::Tanh, Activation::Sigmoid][rng.random_range(0..3)];
    let mut g = Graph::new();
    let x = g.input("x", &[cin, size, size]).unwrap();
    let k = g.param("conv.k", &[c1, cin, 3, 3]).unwrap();
    let b = g.param("conv.b", &[c1]).unwrap();
    let h = g.conv2d(x, k).unwrap();
    let h = g.bias_add(h, b).unwrap();
    let h = g.activation(act, h).unwrap();
    let h = g.avg_pool2(h).unwrap();
    let h = g.flatten(h).unwrap();
    let h = g.dense("fc", h, hidden).unwrap();
    let h = g.activation(Activation::Tanh, h).unwrap();
    let y = g.dense("out", h, 3).unwrap();
    g.set_output("y", y);
    (g, cin * size * size)
}

/// Two-layer critic `z -> act -> scalar` named "score" on input "z".
pub fn random_critic(act: Activation, dim: usize, hidden: usize) -> Graph {
    let mut g = Graph::new();
    let z = g.input("z", &[dim]).unwrap();
    let h = g.dense("h0", z, hidden).unwrap();
    let h = g.activation(act, h).unwrap();
    let h = g.dense("h1", h, hidden).unwrap();
    let h = g.activation(act, h).unwrap();
    let s = g.dense("out", h, 1).unwrap();
    g.set_output("score", s);
    g
}

/// `sum_ij c_ij y_ij` for output `name`.
pub fn weighted_output(graph: &Graph, params: &ParamSet, input: (&str, &Tensor), name: &str, c: &Tensor) -> f64 {
    let acts = forward(graph, params, &[input]).unwrap();
    acts.output(graph, name).unwrap().dot(c)
}
