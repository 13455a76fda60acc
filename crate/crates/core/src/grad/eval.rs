//! Forward evaluation and reverse-mode differentiation of a [`Graph`].

use super::graph::{Graph, NodeId, Op};
use super::linalg::{col2im_add, gemm, im2col, MatRef};
use super::{GradError, Gradients, ParamSet, Tensor};

/// Every node value from one forward pass. Parameter nodes are not copied;
/// they are read from the [`ParamSet`] used for the pass.
#[derive(Clone, Debug)]
pub struct Activations {
    values: Vec<Option<Tensor>>,
    batch: usize,
}

impl Activations {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Value of a non-parameter node.
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.values.get(id).and_then(Option::as_ref)
    }

    pub fn output(&self, graph: &Graph, name: &str) -> Result<&Tensor, GradError> {
        let id = graph.output(name)?;
        self.value(id)
            .ok_or_else(|| GradError::Missing(format!("value of output `{name}`")))
    }

    pub fn into_output(mut self, graph: &Graph, name: &str) -> Result<Tensor, GradError> {
        let id = graph.output(name)?;
        self.values[id]
            .take()
            .ok_or_else(|| GradError::Missing(format!("value of output `{name}`")))
    }
}

fn operand<'a>(graph: &Graph, params: &'a ParamSet, values: &'a [Option<Tensor>], id: NodeId) -> &'a Tensor {
    match &graph.node(id).op {
        Op::Param(name) => params.get(name).expect("parameters validated before evaluation"),
        _ => values[id].as_ref().expect("operands are evaluated before their consumers"),
    }
}

fn batched_shape(batch: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len() + 1);
    s.push(batch);
    s.extend_from_slice(shape);
    s
}

/// Runs the graph on named inputs, keeping every intermediate for backprop.
pub fn forward(graph: &Graph, params: &ParamSet, inputs: &[(&str, &Tensor)]) -> Result<Activations, GradError> {
    let mut batch = None;
    for node in graph.nodes() {
        match &node.op {
            Op::Param(name) => {
                let p = params
                    .get(name)
                    .ok_or_else(|| GradError::Missing(format!("parameter `{name}`")))?;
                if p.shape() != node.shape.as_slice() {
                    return Err(GradError::Shape(format!(
                        "parameter `{name}` has shape {:?}, graph expects {:?}",
                        p.shape(),
                        node.shape
                    )));
                }
            }
            Op::Input(name) => {
                let t = inputs
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, t)| *t)
                    .ok_or_else(|| GradError::Missing(format!("input `{name}`")))?;
                if t.shape().len() != node.shape.len() + 1 || t.shape()[1..] != node.shape[..] {
                    return Err(GradError::Shape(format!(
                        "input `{name}` has shape {:?}, graph expects [batch]{:?}",
                        t.shape(),
                        node.shape
                    )));
                }
                match batch {
                    None => batch = Some(t.shape()[0]),
                    Some(b) if b != t.shape()[0] => {
                        return Err(GradError::Shape(format!(
                            "input `{name}` has batch {} but another input has {b}",
                            t.shape()[0]
                        )))
                    }
                    _ => {}
                }
            }
            _ => {}
        }
    }
    let batch = batch.unwrap_or(1);

    let mut values: Vec<Option<Tensor>> = Vec::with_capacity(graph.len());
    for (id, node) in graph.nodes().iter().enumerate() {
        let out = match &node.op {
            Op::Param(_) => None,
            Op::Input(name) => {
                let t = inputs.iter().find(|(n, _)| n == name).map(|(_, t)| *t).expect("checked");
                Some(t.clone())
            }
            op => {
                let get = |k: usize| operand(graph, params, &values, node.inputs[k]);
                let y = eval_op(op, node.shape.as_slice(), batch, &get)?;
                if !y.is_finite() {
                    return Err(GradError::NumericFault { node: id, op: format!("{op:?}") });
                }
                Some(y)
            }
        };
        values.push(out);
    }
    Ok(Activations { values, batch })
}

fn eval_op<'a>(op: &Op, shape: &[usize], batch: usize, get: &dyn Fn(usize) -> &'a Tensor) -> Result<Tensor, GradError> {
    let out_shape = batched_shape(batch, shape);
    Ok(match op {
        Op::Input(_) | Op::Param(_) => unreachable!(),
        Op::MatMul => {
            let (x, w) = (get(0), get(1));
            let (inn, out) = (w.shape()[0], w.shape()[1]);
            let mut y = vec![0.0; batch * out];
            gemm(MatRef::new(x.data(), batch, inn), MatRef::new(w.data(), inn, out), 0.0, &mut y);
            Tensor::new(out_shape, y)?
        }
        Op::Conv2d => {
            let (x, k) = (get(0), get(1));
            let (cout, cin, s) = (k.shape()[0], k.shape()[1], k.shape()[2]);
            let (h, w) = (x.shape()[2], x.shape()[3]);
            let hw = h * w;
            let kmat = MatRef::new(k.data(), cout, cin * s * s);
            let mut cols = vec![0.0; cin * s * s * hw];
            let mut y = vec![0.0; batch * cout * hw];
            for b in 0..batch {
                im2col(x.row(b), cin, h, w, s, &mut cols);
                gemm(kmat, MatRef::new(&cols, cin * s * s, hw), 0.0, &mut y[b * cout * hw..(b + 1) * cout * hw]);
            }
            Tensor::new(out_shape, y)?
        }
        Op::BiasAdd => {
            let (x, bias) = (get(0), get(1));
            let c = bias.len();
            let inner = x.row_len() / c;
            let mut y = x.clone();
            for b in 0..batch {
                let row = y.row_mut(b);
                for ch in 0..c {
                    let bv = bias.data()[ch];
                    for v in &mut row[ch * inner..(ch + 1) * inner] {
                        *v += bv;
                    }
                }
            }
            y
        }
        Op::Unary(f) => get(0).map(|v| f.eval(v)),
        Op::Mul => {
            let (a, b) = (get(0), get(1));
            let data = a.data().iter().zip(b.data()).map(|(p, q)| p * q).collect();
            Tensor::new(a.shape().to_vec(), data)?
        }
        Op::Add => {
            let mut y = get(0).clone();
            y.add_assign(get(1));
            y
        }
        Op::AvgPool2 => {
            let x = get(0);
            let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
            let (ho, wo) = (h / 2, w / 2);
            let mut y = vec![0.0; batch * c * ho * wo];
            for bc in 0..batch * c {
                let src = &x.data()[bc * h * w..(bc + 1) * h * w];
                let dst = &mut y[bc * ho * wo..(bc + 1) * ho * wo];
                for i in 0..ho {
                    for j in 0..wo {
                        let r0 = 2 * i * w + 2 * j;
                        dst[i * wo + j] = 0.25 * (src[r0] + src[r0 + 1] + src[r0 + w] + src[r0 + w + 1]);
                    }
                }
            }
            Tensor::new(out_shape, y)?
        }
        Op::MeanOverBatch => {
            let x = get(0);
            let n = x.row_len();
            let mut y = vec![0.0; n];
            for b in 0..batch {
                for (acc, v) in y.iter_mut().zip(x.row(b)) {
                    *acc += v;
                }
            }
            let inv = 1.0 / batch as f64;
            y.iter_mut().for_each(|v| *v *= inv);
            Tensor::new(shape.to_vec(), y)?
        }
        Op::Softmax => {
            let x = get(0);
            let mut y = x.clone();
            for b in 0..batch {
                let row = y.row_mut(b);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    z += *v;
                }
                row.iter_mut().for_each(|v| *v /= z);
            }
            y
        }
        Op::Flatten => get(0).clone().reshaped(out_shape)?,
        Op::Concat => {
            let (a, b) = (get(0), get(1));
            let mut y = Vec::with_capacity(a.len() + b.len());
            for r in 0..batch {
                y.extend_from_slice(a.row(r));
                y.extend_from_slice(b.row(r));
            }
            Tensor::new(out_shape, y)?
        }
    })
}

/// Adjoints of every node reached by a backward pass.
#[derive(Clone, Debug)]
pub struct Adjoints {
    grads: Vec<Option<Tensor>>,
}

impl Adjoints {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(Option::as_ref)
    }

    /// Adjoint of a named input; zeros when the input did not influence the seeds.
    pub fn input(&self, graph: &Graph, name: &str, batch: usize) -> Result<Tensor, GradError> {
        let id = graph.input_id(name)?;
        Ok(match self.get(id) {
            Some(t) => t.clone(),
            None => Tensor::zeros(&batched_shape(batch, &graph.node(id).shape)),
        })
    }

    /// Gradient for every parameter of `params`; untouched parameters get zeros.
    pub fn param_grads(&self, graph: &Graph, params: &ParamSet) -> Result<Gradients, GradError> {
        let mut out = params.zero_gradients();
        for (id, node) in graph.nodes().iter().enumerate() {
            if let (Op::Param(name), Some(g)) = (&node.op, self.get(id)) {
                let mut acc = out.get(name).cloned().unwrap_or_else(|| Tensor::zeros(g.shape()));
                acc.add_assign(g);
                out.insert(name, acc);
            }
        }
        if !out.is_finite() {
            return Err(GradError::NumericFault { node: graph.len(), op: "parameter gradient".into() });
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Reverse-mode sweep from explicit output seeds.
///
/// `seeds` pairs a node with the adjoint of some scalar objective with respect
/// to that node's value. Adjoints are propagated to every parameter and to the
/// inputs named in `wrt_inputs`.
pub fn backward(
    graph: &Graph,
    params: &ParamSet,
    acts: &Activations,
    seeds: &[(NodeId, Tensor)],
    wrt_inputs: &[&str],
) -> Result<Adjoints, GradError> {
    let n = graph.len();
    let batch = acts.batch;
    let mut needs = vec![false; n];
    for (id, node) in graph.nodes().iter().enumerate() {
        needs[id] = match &node.op {
            Op::Param(_) => true,
            Op::Input(name) => wrt_inputs.contains(&name.as_str()),
            _ => node.inputs.iter().any(|&j| needs[j]),
        };
    }

    let mut grads: Vec<Option<Tensor>> = vec![None; n];
    for (id, seed) in seeds {
        let node = graph.node(*id);
        let want = if node.batched { batched_shape(batch, &node.shape) } else { node.shape.clone() };
        if seed.shape() != want.as_slice() {
            return Err(GradError::Shape(format!(
                "seed for node {id} has shape {:?}, node value has {want:?}",
                seed.shape()
            )));
        }
        accumulate(&mut grads, *id, seed.clone());
    }

    for id in (0..n).rev() {
        let node = graph.node(id);
        if matches!(node.op, Op::Input(_) | Op::Param(_)) {
            continue;
        }
        let Some(gy) = grads[id].take() else { continue };
        let val = |k: usize| operand(graph, params, &acts.values, node.inputs[k]);
        let want = |k: usize| needs[node.inputs[k]];
        match &node.op {
            Op::Input(_) | Op::Param(_) => {}
            Op::MatMul => {
                let (x, w) = (val(0), val(1));
                let (inn, out) = (w.shape()[0], w.shape()[1]);
                let gmat = MatRef::new(gy.data(), batch, out);
                if want(0) {
                    let mut gx = vec![0.0; batch * inn];
                    gemm(gmat, MatRef::new(w.data(), inn, out).t(), 0.0, &mut gx);
                    accumulate(&mut grads, node.inputs[0], Tensor::new(x.shape().to_vec(), gx)?);
                }
                if want(1) {
                    let mut gw = vec![0.0; inn * out];
                    gemm(MatRef::new(x.data(), batch, inn).t(), gmat, 0.0, &mut gw);
                    accumulate(&mut grads, node.inputs[1], Tensor::new(w.shape().to_vec(), gw)?);
                }
            }
            Op::Conv2d => {
                let (x, k) = (val(0), val(1));
                let (cout, cin, s) = (k.shape()[0], k.shape()[1], k.shape()[2]);
                let (h, w) = (x.shape()[2], x.shape()[3]);
                let hw = h * w;
                let ck = cin * s * s;
                let kmat = MatRef::new(k.data(), cout, ck);
                let mut cols = vec![0.0; ck * hw];
                let mut gk = vec![0.0; cout * ck];
                let mut gx = if want(0) { vec![0.0; x.len()] } else { Vec::new() };
                for b in 0..batch {
                    let gyb = MatRef::new(&gy.data()[b * cout * hw..(b + 1) * cout * hw], cout, hw);
                    if want(1) {
                        im2col(x.row(b), cin, h, w, s, &mut cols);
                        gemm(gyb, MatRef::new(&cols, ck, hw).t(), 1.0, &mut gk);
                    }
                    if want(0) {
                        gemm(kmat.t(), gyb, 0.0, &mut cols);
                        col2im_add(&cols, cin, h, w, s, &mut gx[b * cin * hw..(b + 1) * cin * hw]);
                    }
                }
                if want(1) {
                    accumulate(&mut grads, node.inputs[1], Tensor::new(k.shape().to_vec(), gk)?);
                }
                if want(0) {
                    accumulate(&mut grads, node.inputs[0], Tensor::new(x.shape().to_vec(), gx)?);
                }
            }
            Op::BiasAdd => {
                if want(1) {
                    let c = node.shape[0];
                    let inner = gy.row_len() / c;
                    let mut gb = vec![0.0; c];
                    for b in 0..batch {
                        let row = gy.row(b);
                        for (ch, acc) in gb.iter_mut().enumerate() {
                            *acc += row[ch * inner..(ch + 1) * inner].iter().sum::<f64>();
                        }
                    }
                    accumulate(&mut grads, node.inputs[1], Tensor::new(vec![c], gb)?);
                }
                if want(0) {
                    accumulate(&mut grads, node.inputs[0], gy);
                }
            }
            Op::Unary(f) => {
                if want(0) {
                    let x = val(0);
                    let data = gy.data().iter().zip(x.data()).map(|(g, &v)| g * f.slope(v)).collect();
                    accumulate(&mut grads, node.inputs[0], Tensor::new(x.shape().to_vec(), data)?);
                }
            }
            Op::Mul => {
                let (a, b) = (val(0), val(1));
                if want(0) {
                    let d = gy.data().iter().zip(b.data()).map(|(g, v)| g * v).collect();
                    accumulate(&mut grads, node.inputs[0], Tensor::new(a.shape().to_vec(), d)?);
                }
                if want(1) {
                    let d = gy.data().iter().zip(a.data()).map(|(g, v)| g * v).collect();
                    accumulate(&mut grads, node.inputs[1], Tensor::new(b.shape().to_vec(), d)?);
                }
            }
            Op::Add => {
                if want(1) {
                    accumulate(&mut grads, node.inputs[1], gy.clone());
                }
                if want(0) {
                    accumulate(&mut grads, node.inputs[0], gy);
                }
            }
            Op::AvgPool2 => {
                if want(0) {
                    let x = val(0);
                    let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
                    let (ho, wo) = (h / 2, w / 2);
                    let mut gx = vec![0.0; x.len()];
                    for bc in 0..batch * c {
                        let src = &gy.data()[bc * ho * wo..(bc + 1) * ho * wo];
                        let dst = &mut gx[bc * h * w..(bc + 1) * h * w];
                        for i in 0..ho {
                            for j in 0..wo {
                                let g = 0.25 * src[i * wo + j];
                                let r0 = 2 * i * w + 2 * j;
                                dst[r0] += g;
                                dst[r0 + 1] += g;
                                dst[r0 + w] += g;
                                dst[r0 + w + 1] += g;
                            }
                        }
                    }
                    accumulate(&mut grads, node.inputs[0], Tensor::new(x.shape().to_vec(), gx)?);
                }
            }
            Op::MeanOverBatch => {
                if want(0) {
                    let inv = 1.0 / batch as f64;
                    let mut gx = Vec::with_capacity(batch * gy.len());
                    for _ in 0..batch {
                        gx.extend(gy.data().iter().map(|g| g * inv));
                    }
                    accumulate(&mut grads, node.inputs[0], Tensor::new(batched_shape(batch, &node.shape), gx)?);
                }
            }
            Op::Softmax => {
                if want(0) {
                    let s = acts.value(id).expect("forward value");
                    let mut gx = gy.clone();
                    for b in 0..batch {
                        let (sr, gr) = (s.row(b), gy.row(b));
                        let dot: f64 = sr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((o, &p), &q) in gx.row_mut(b).iter_mut().zip(sr).zip(gr) {
                            *o = p * (q - dot);
                        }
                    }
                    accumulate(&mut grads, node.inputs[0], gx);
                }
            }
            Op::Flatten => {
                if want(0) {
                    let shape = batched_shape(batch, &graph.node(node.inputs[0]).shape);
                    accumulate(&mut grads, node.inputs[0], gy.reshaped(shape)?);
                }
            }
            Op::Concat => {
                let na = graph.node(node.inputs[0]).shape[0];
                let nb = graph.node(node.inputs[1]).shape[0];
                let (mut ga, mut gb) = (Vec::with_capacity(batch * na), Vec::with_capacity(batch * nb));
                for r in 0..batch {
                    let row = gy.row(r);
                    ga.extend_from_slice(&row[..na]);
                    gb.extend_from_slice(&row[na..]);
                }
                if want(0) {
                    accumulate(&mut grads, node.inputs[0], Tensor::new(vec![batch, na], ga)?);
                }
                if want(1) {
                    accumulate(&mut grads, node.inputs[1], Tensor::new(vec![batch, nb], gb)?);
                }
            }
        }
    }
    for (id, g) in grads.iter().enumerate() {
        if let Some(t) = g {
            if !t.is_finite() {
                return Err(GradError::NumericFault { node: id, op: "adjoint".into() });
            }
        }
    }
    Ok(Adjoints { grads })
}

/// Gradient of a scalar loss node with respect to every parameter.
pub fn backprop_params(
    graph: &Graph,
    params: &ParamSet,
    inputs: &[(&str, &Tensor)],
    loss: NodeId,
) -> Result<Gradients, GradError> {
    let node = graph.node(loss);
    if node.batched || node.numel() != 1 {
        return Err(GradError::NonScalarLoss(format!(
            "node {loss} has {}shape {:?}",
            if node.batched { "batched " } else { "" },
            node.shape
        )));
    }
    let acts = forward(graph, params, inputs)?;
    let adj = backward(graph, params, &acts, &[(loss, Tensor::filled(&node.shape, 1.0))], &[])?;
    adj.param_grads(graph, params)
}
