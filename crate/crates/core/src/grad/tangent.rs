//! Second-order machinery for the gradient penalty.
//!
//! The parameter gradient of `mean_i (|grad_z f(z_i)| - 1)^2` is obtained by
//! reverse-over-forward differentiation: with `v_i` the adjoint of the input
//! gradient `g_i`, the penalty gradient equals the parameter gradient of the
//! directional derivative `sum_i <grad_z f(z_i), v_i>`, which a tangent copy of
//! the graph computes and ordinary reverse mode then differentiates.

use super::eval::{backward, forward};
use super::graph::{Graph, NodeId, Op};
use super::{GradError, Gradients, ParamSet, Tensor};

/// A graph extended with forward-mode tangent nodes for one input.
#[derive(Clone, Debug)]
pub struct TangentGraph {
    pub graph: Graph,
    pub primal_out: NodeId,
    pub tangent_out: NodeId,
    pub tangent_input: String,
}

/// Builds the primal-plus-tangent graph of `graph` with respect to input `wrt`.
pub fn tangent_graph(graph: &Graph, wrt: &str, output: NodeId) -> Result<TangentGraph, GradError> {
    let mut g = Graph::new();
    let mut primal: Vec<NodeId> = Vec::with_capacity(graph.len());
    let mut tangent: Vec<Option<NodeId>> = Vec::with_capacity(graph.len());
    let tangent_input = format!("{wrt}.tangent");
    for node in graph.nodes() {
        let p = |k: usize| primal[node.inputs[k]];
        let t = |k: usize| tangent[node.inputs[k]];
        let (pid, tid) = match &node.op {
            Op::Input(name) => {
                let pid = g.input(name, &node.shape)?;
                let tid = if name == wrt { Some(g.input(&tangent_input, &node.shape)?) } else { None };
                (pid, tid)
            }
            Op::Param(name) => (g.param(name, &node.shape)?, None),
            Op::MatMul => {
                let pid = g.matmul(p(0), p(1))?;
                let tid = t(0).map(|tx| g.matmul(tx, p(1))).transpose()?;
                (pid, tid)
            }
            Op::Conv2d => {
                let pid = g.conv2d(p(0), p(1))?;
                let tid = t(0).map(|tx| g.conv2d(tx, p(1))).transpose()?;
                (pid, tid)
            }
            Op::BiasAdd => (g.bias_add(p(0), p(1))?, t(0)),
            Op::Unary(f) => {
                let pid = g.unary(*f, p(0))?;
                let tid = match t(0) {
                    Some(tx) => {
                        let slope = g.unary(f.derivative()?, p(0))?;
                        Some(g.mul(slope, tx)?)
                    }
                    None => None,
                };
                (pid, tid)
            }
            Op::Mul => {
                let pid = g.mul(p(0), p(1))?;
                let tid = match (t(0), t(1)) {
                    (Some(ta), Some(tb)) => {
                        let l = g.mul(ta, p(1))?;
                        let r = g.mul(p(0), tb)?;
                        Some(g.add(l, r)?)
                    }
                    (Some(ta), None) => Some(g.mul(ta, p(1))?),
                    (None, Some(tb)) => Some(g.mul(p(0), tb)?),
                    (None, None) => None,
                };
                (pid, tid)
            }
            Op::Add => {
                let pid = g.add(p(0), p(1))?;
                let tid = match (t(0), t(1)) {
                    (Some(ta), Some(tb)) => Some(g.add(ta, tb)?),
                    (one, other) => one.or(other),
                };
                (pid, tid)
            }
            Op::AvgPool2 => (g.avg_pool2(p(0))?, t(0).map(|tx| g.avg_pool2(tx)).transpose()?),
            Op::MeanOverBatch => (g.mean_over_batch(p(0))?, t(0).map(|tx| g.mean_over_batch(tx)).transpose()?),
            Op::Flatten => (g.flatten(p(0))?, t(0).map(|tx| g.flatten(tx)).transpose()?),
            Op::Softmax => {
                if t(0).is_some() {
                    return Err(GradError::Unsupported("tangent of softmax".into()));
                }
                (g.softmax(p(0))?, None)
            }
            Op::Concat => {
                let pid = g.concat(p(0), p(1))?;
                let tid = match (t(0), t(1)) {
                    (Some(ta), Some(tb)) => Some(g.concat(ta, tb)?),
                    (None, None) => None,
                    _ => return Err(GradError::Unsupported("tangent of a half-constant concat".into())),
                };
                (pid, tid)
            }
        };
        primal.push(pid);
        tangent.push(tid);
    }
    let tangent_out = tangent[output]
        .ok_or_else(|| GradError::Unsupported(format!("output node {output} does not depend on `{wrt}`")))?;
    let primal_out = primal[output];
    g.set_output("primal", primal_out);
    g.set_output("tangent", tangent_out);
    Ok(TangentGraph { graph: g, primal_out, tangent_out, tangent_input })
}

fn check_row_scalar(graph: &Graph, output: NodeId) -> Result<(), GradError> {
    let node = graph.node(output);
    if !node.batched || node.numel() != 1 {
        return Err(GradError::NonScalarLoss(format!(
            "expected one scalar per row at node {output}, found shape {:?}",
            node.shape
        )));
    }
    Ok(())
}

/// Per-row gradient of a row-scalar output with respect to an input batch.
pub fn input_gradient(
    graph: &Graph,
    params: &ParamSet,
    input_name: &str,
    input: &Tensor,
    output: &str,
) -> Result<Tensor, GradError> {
    let out = graph.output(output)?;
    check_row_scalar(graph, out)?;
    let acts = forward(graph, params, &[(input_name, input)])?;
    let seed = Tensor::filled(&[acts.batch(), 1], 1.0);
    let adj = backward(graph, params, &acts, &[(out, seed)], &[input_name])?;
    adj.input(graph, input_name, acts.batch())
}

/// Added under the square root of the gradient norm.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct PenaltyGradient {
    /// `mean_i (|g_i| - 1)^2`, unscaled.
    pub penalty: f64,
    /// Parameter gradient of `lambda * penalty`.
    pub grads: Gradients,
    /// `|g_i|` per row.
    pub norms: Vec<f64>,
}

/// Reusable evaluator for the gradient-penalty term of one critic graph.
#[derive(Clone, Debug)]
pub struct GradientPenalty {
    primal: Graph,
    tangent: TangentGraph,
    input: String,
    output: NodeId,
}

impl GradientPenalty {
    pub fn new(graph: &Graph, input: &str, output: &str) -> Result<Self, GradError> {
        let out = graph.output(output)?;
        check_row_scalar(graph, out)?;
        let tangent = tangent_graph(graph, input, out)?;
        Ok(Self { primal: graph.clone(), tangent, input: input.to_string(), output: out })
    }

    pub fn evaluate(&self, params: &ParamSet, z: &Tensor, lambda: f64) -> Result<PenaltyGradient, GradError> {
        let acts = forward(&self.primal, params, &[(&self.input, z)])?;
        let batch = acts.batch();
        let seed = Tensor::filled(&[batch, 1], 1.0);
        let adj = backward(&self.primal, params, &acts, &[(self.output, seed.clone())], &[&self.input])?;
        let g = adj.input(&self.primal, &self.input, batch)?;

        let mut norms = Vec::with_capacity(batch);
        let mut v = g.clone();
        let mut penalty = 0.0;
        for i in 0..batch {
            let n = (g.row(i).iter().map(|x| x * x).sum::<f64>() + NORM_EPS).sqrt();
            penalty += (n - 1.0) * (n - 1.0);
            // d/dg (n - 1)^2 = 2 (n - 1) g / n; vanishes at g = 0.
            let coef = 2.0 * (n - 1.0) / n / batch as f64;
            v.row_mut(i).iter_mut().for_each(|x| *x *= coef);
            norms.push(n);
        }
        penalty /= batch as f64;

        let tacts = forward(
            &self.tangent.graph,
            params,
            &[(&self.input, z), (&self.tangent.tangent_input, &v)],
        )?;
        let tadj = backward(&self.tangent.graph, params, &tacts, &[(self.tangent.tangent_out, seed)], &[])?;
        let mut grads = tadj.param_grads(&self.tangent.graph, params)?;
        grads.scale(lambda);
        Ok(PenaltyGradient { penalty, grads, norms })
    }
}

/// One-shot form of [`GradientPenalty::evaluate`].
pub fn penalty_param_gradient(
    graph: &Graph,
    params: &ParamSet,
    input: &str,
    output: &str,
    z: &Tensor,
    lambda: f64,
) -> Result<PenaltyGradient, GradError> {
    GradientPenalty::new(graph, input, output)?.evaluate(params, z, lambda)
}
