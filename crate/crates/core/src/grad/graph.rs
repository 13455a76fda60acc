use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GradError;

pub type NodeId = usize;

/// Pointwise nonlinearities available to graphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
    Tanh,
    Sigmoid,
}

impl Activation {
    /// Whether the function has a continuous first derivative everywhere.
    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }
}

/// An activation or one of its derivatives, applied pointwise.
///
/// `order` 0 is the activation itself; tangent graphs introduce order 1 nodes
/// and reverse mode through those evaluates order 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct UnaryFn {
    pub base: Activation,
    pub order: u8,
}

impl UnaryFn {
    pub const MAX_ORDER: u8 = 2;

    pub fn new(base: Activation) -> Self {
        Self { base, order: 0 }
    }

    pub fn derivative(self) -> Result<Self, GradError> {
        if self.order >= Self::MAX_ORDER {
            return Err(GradError::Unsupported(format!(
                "derivative of order {} of {:?}",
                self.order + 1,
                self.base
            )));
        }
        Ok(Self { base: self.base, order: self.order + 1 })
    }

    pub fn eval(self, x: f64) -> f64 {
        nth_derivative(self.base, self.order, x)
    }

    /// Pointwise slope of this function, used by reverse mode.
    pub fn slope(self, x: f64) -> f64 {
        nth_derivative(self.base, self.order + 1, x)
    }
}

fn nth_derivative(act: Activation, order: u8, x: f64) -> f64 {
    match act {
        Activation::Relu => match order {
            0 => x.max(0.0),
            1 => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            _ => 0.0,
        },
        // alpha = 1
        Activation::Elu => {
            if x > 0.0 {
                match order {
                    0 => x,
                    1 => 1.0,
                    _ => 0.0,
                }
            } else {
                match order {
                    0 => x.exp_m1(),
                    _ => x.exp(),
                }
            }
        }
        Activation::Tanh => {
            let t = x.tanh();
            let s = 1.0 - t * t;
            match order {
                0 => t,
                1 => s,
                2 => -2.0 * t * s,
                _ => s * (6.0 * t * t - 2.0),
            }
        }
        Activation::Sigmoid => {
            let s = 1.0 / (1.0 + (-x).exp());
            let d = s * (1.0 - s);
            match order {
                0 => s,
                1 => d,
                2 => d * (1.0 - 2.0 * s),
                _ => d * (1.0 - 6.0 * s + 6.0 * s * s),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input(String),
    Param(String),
    /// `[x, w]`: batched `[in]` times parameter `[in, out]`.
    MatMul,
    /// `[x, k]`: stride-1 "same" convolution, batched `[cin, h, w]`, kernel `[cout, cin, s, s]`.
    Conv2d,
    /// `[x, b]`: adds `b[c]` along the first sample axis.
    BiasAdd,
    Unary(UnaryFn),
    Mul,
    Add,
    /// 2x2 average pooling over the trailing two axes.
    AvgPool2,
    MeanOverBatch,
    /// Row-wise softmax over a 1-D sample shape.
    Softmax,
    Flatten,
    /// Feature-axis concatenation of two 1-D batched nodes.
    Concat,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    /// Per-row shape for batched nodes, full shape otherwise.
    pub shape: Vec<usize>,
    pub batched: bool,
}

impl Node {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Topologically ordered computation graph.
///
/// Batched nodes carry a leading batch axis at evaluation time that is not
/// part of their declared shape; the batch size is taken from the inputs.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    outputs: BTreeMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn set_output(&mut self, name: &str, id: NodeId) {
        self.outputs.insert(name.to_string(), id);
    }

    pub fn output(&self, name: &str) -> Result<NodeId, GradError> {
        self.outputs
            .get(name)
            .copied()
            .ok_or_else(|| GradError::Missing(format!("graph output `{name}`")))
    }

    pub fn outputs(&self) -> &BTreeMap<String, NodeId> {
        &self.outputs
    }

    pub fn input_id(&self, name: &str) -> Result<NodeId, GradError> {
        self.nodes
            .iter()
            .position(|n| matches!(&n.op, Op::Input(s) if s == name))
            .ok_or_else(|| GradError::Missing(format!("graph input `{name}`")))
    }

    /// Names and shapes of every parameter the graph reads.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Param(name) => Some((name.clone(), n.shape.clone())),
                _ => None,
            })
            .collect()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>, batched: bool) -> NodeId {
        self.nodes.push(Node { op, inputs, shape, batched });
        self.nodes.len() - 1
    }

    fn check(&self, id: NodeId) -> Result<&Node, GradError> {
        self.nodes
            .get(id)
            .ok_or_else(|| GradError::Shape(format!("node {id} does not exist")))
    }

    fn shape_err(&self, what: &str, detail: String) -> GradError {
        GradError::Shape(format!("node {} ({what}): {detail}", self.nodes.len()))
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId, GradError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(self.shape_err("input", format!("invalid shape {shape:?}")));
        }
        if self.input_id(name).is_ok() {
            return Err(self.shape_err("input", format!("duplicate input `{name}`")));
        }
        Ok(self.push(Op::Input(name.to_string()), vec![], shape.to_vec(), true))
    }

    pub fn param(&mut self, name: &str, shape: &[usize]) -> Result<NodeId, GradError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(self.shape_err("param", format!("invalid shape {shape:?}")));
        }
        if let Some(prev) = self
            .nodes
            .iter()
            .find(|n| matches!(&n.op, Op::Param(s) if s == name))
        {
            if prev.shape != shape {
                return Err(self.shape_err("param", format!("`{name}` redeclared with a new shape")));
            }
        }
        Ok(self.push(Op::Param(name.to_string()), vec![], shape.to_vec(), false))
    }

    pub fn matmul(&mut self, x: NodeId, w: NodeId) -> Result<NodeId, GradError> {
        let (xn, wn) = (self.check(x)?, self.check(w)?);
        if !xn.batched || xn.shape.len() != 1 || wn.batched || wn.shape.len() != 2 || wn.shape[0] != xn.shape[0] {
            return Err(self.shape_err(
                "matmul",
                format!("cannot multiply rows {:?} by weight {:?}", xn.shape, wn.shape),
            ));
        }
        let out = wn.shape[1];
        Ok(self.push(Op::MatMul, vec![x, w], vec![out], true))
    }

    pub fn conv2d(&mut self, x: NodeId, k: NodeId) -> Result<NodeId, GradError> {
        let (xn, kn) = (self.check(x)?, self.check(k)?);
        let ok = xn.batched
            && xn.shape.len() == 3
            && !kn.batched
            && kn.shape.len() == 4
            && kn.shape[1] == xn.shape[0]
            && kn.shape[2] == kn.shape[3]
            && kn.shape[2] % 2 == 1;
        if !ok {
            return Err(self.shape_err(
                "conv2d",
                format!("input {:?} incompatible with kernel {:?} (odd square kernels only)", xn.shape, kn.shape),
            ));
        }
        let shape = vec![kn.shape[0], xn.shape[1], xn.shape[2]];
        Ok(self.push(Op::Conv2d, vec![x, k], shape, true))
    }

    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (xn, bn) = (self.check(x)?, self.check(b)?);
        if !xn.batched || bn.batched || bn.shape.len() != 1 || bn.shape[0] != xn.shape[0] {
            return Err(self.shape_err("bias_add", format!("bias {:?} for rows {:?}", bn.shape, xn.shape)));
        }
        let shape = xn.shape.clone();
        Ok(self.push(Op::BiasAdd, vec![x, b], shape, true))
    }

    pub fn unary(&mut self, f: UnaryFn, x: NodeId) -> Result<NodeId, GradError> {
        let xn = self.check(x)?;
        let (shape, batched) = (xn.shape.clone(), xn.batched);
        Ok(self.push(Op::Unary(f), vec![x], shape, batched))
    }

    pub fn activation(&mut self, act: Activation, x: NodeId) -> Result<NodeId, GradError> {
        self.unary(UnaryFn::new(act), x)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(Vec<usize>, bool), GradError> {
        let (an, bn) = (self.check(a)?, self.check(b)?);
        if an.shape != bn.shape || an.batched != bn.batched {
            return Err(self.shape_err(what, format!("operands {:?} and {:?} differ", an.shape, bn.shape)));
        }
        Ok((an.shape.clone(), an.batched))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (shape, batched) = self.same_shape(a, b, "mul")?;
        Ok(self.push(Op::Mul, vec![a, b], shape, batched))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (shape, batched) = self.same_shape(a, b, "add")?;
        Ok(self.push(Op::Add, vec![a, b], shape, batched))
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        let xn = self.check(x)?;
        if !xn.batched || xn.shape.len() != 3 || xn.shape[1] % 2 != 0 || xn.shape[2] % 2 != 0 {
            return Err(self.shape_err("avg_pool2", format!("needs even spatial extents, got {:?}", xn.shape)));
        }
        let shape = vec![xn.shape[0], xn.shape[1] / 2, xn.shape[2] / 2];
        Ok(self.push(Op::AvgPool2, vec![x], shape, true))
    }

    pub fn mean_over_batch(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        let xn = self.check(x)?;
        if !xn.batched {
            return Err(self.shape_err("mean_over_batch", "input is not batched".into()));
        }
        let shape = xn.shape.clone();
        Ok(self.push(Op::MeanOverBatch, vec![x], shape, false))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        let xn = self.check(x)?;
        if !xn.batched || xn.shape.len() != 1 {
            return Err(self.shape_err("softmax", format!("needs 1-D rows, got {:?}", xn.shape)));
        }
        let shape = xn.shape.clone();
        Ok(self.push(Op::Softmax, vec![x], shape, true))
    }

    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        let xn = self.check(x)?;
        if !xn.batched {
            return Err(self.shape_err("flatten", "input is not batched".into()));
        }
        let n = xn.numel();
        Ok(self.push(Op::Flatten, vec![x], vec![n], true))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (an, bn) = (self.check(a)?, self.check(b)?);
        if !an.batched || !bn.batched || an.shape.len() != 1 || bn.shape.len() != 1 {
            return Err(self.shape_err("concat", format!("needs 1-D rows, got {:?} and {:?}", an.shape, bn.shape)));
        }
        let n = an.shape[0] + bn.shape[0];
        Ok(self.push(Op::Concat, vec![a, b], vec![n], true))
    }

    /// Dense layer `x W + b`, declaring parameters `{prefix}.w` and `{prefix}.b`.
    pub fn dense(&mut self, prefix: &str, x: NodeId, out: usize) -> Result<NodeId, GradError> {
        let fan_in = self.check(x)?.shape.first().copied().unwrap_or(0);
        let w = self.param(&format!("{prefix}.w"), &[fan_in, out])?;
        let b = self.param(&format!("{prefix}.b"), &[out])?;
        let y = self.matmul(x, w)?;
        self.bias_add(y, b)
    }
}
