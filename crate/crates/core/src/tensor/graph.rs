//! Two executors for the same layer calls: [`Eval`] computes values only,
//! [`Recorder`] also records a [`Tape`] for reverse-mode differentiation.
//! Model code is written once against [`Graph`].

use super::layers::{BatchNorm, Conv2d};
use super::ops::{self, BnSaved, ConvGeom};
use super::{ParamStore, Real, Shape, Tensor};
use crate::{Error, Result};

pub trait Graph<T: Real> {
    type Var;

    fn input(&mut self, x: Tensor<T>) -> Self::Var;
    fn shape(&self, x: &Self::Var) -> Shape;
    fn conv(&mut self, layer: &Conv2d, x: &Self::Var, geom: ConvGeom) -> Result<Self::Var>;
    fn batchnorm(&mut self, layer: &BatchNorm, x: &Self::Var) -> Result<Self::Var>;
    fn relu(&mut self, x: &Self::Var) -> Result<Self::Var>;
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn concat(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn crop(&mut self, x: &Self::Var, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self::Var>;
}

/// Inference executor: eval-mode batch norm, no tape.
pub struct Eval<'a, T> {
    params: &'a ParamStore<T>,
    signature: Option<u64>,
}

impl<'a, T: Real> Eval<'a, T> {
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Eval { params, signature: None }
    }

    /// Also fingerprints the sign pattern of every ReLU input, which
    /// identifies the linear piece the network is evaluated on.
    pub fn tracking(params: &'a ParamStore<T>) -> Self {
        Eval {
            params,
            signature: Some(0xcbf2_9ce4_8422_2325),
        }
    }

    pub fn signature(&self) -> Option<u64> {
        self.signature
    }
}

fn mix(h: u64, word: u64) -> u64 {
    (h.rotate_left(5) ^ word).wrapping_mul(0x517c_c1b7_2722_0a95)
}

impl<T: Real> Graph<T> for Eval<'_, T> {
    type Var = Tensor<T>;

    fn input(&mut self, x: Tensor<T>) -> Tensor<T> {
        x
    }

    fn shape(&self, x: &Tensor<T>) -> Shape {
        x.shape()
    }

    fn conv(&mut self, layer: &Conv2d, x: &Tensor<T>, geom: ConvGeom) -> Result<Tensor<T>> {
        let p = self.params;
        ops::conv2d_forward(x, p.value(layer.weight), layer.bias.map(|b| p.value(b)), &layer.shape, geom)
    }

    fn batchnorm(&mut self, layer: &BatchNorm, x: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self.params;
        let (y, _) = ops::batchnorm_eval_forward(
            x,
            p.value(layer.scale),
            p.value(layer.shift),
            p.value(layer.running_mean),
            p.value(layer.running_var),
            layer.eps,
        )?;
        Ok(y)
    }

    fn relu(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if let Some(h) = &mut self.signature {
            for chunk in x.raw().chunks(64) {
                let word = chunk
                    .iter()
                    .enumerate()
                    .fold(0u64, |w, (i, &v)| w | (u64::from(v > T::zero()) << i));
                *h = mix(*h, word);
            }
        }
        Ok(ops::relu_forward(x))
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::add_forward(a, b)
    }

    fn concat(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::concat_forward(a, b)
    }

    fn crop(&mut self, x: &Tensor<T>, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor<T>> {
        ops::crop_forward(x, y0, x0, h, w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BnMode {
    /// Batch statistics; running statistics are updated with `momentum`.
    Train { momentum: f64 },
    /// Running statistics.
    Eval,
}

enum Op<T> {
    Leaf,
    Conv { layer: Conv2d, input: NodeId, geom: ConvGeom },
    BnTrain { layer: BatchNorm, input: NodeId, saved: BnSaved<T> },
    BnEval { layer: BatchNorm, input: NodeId, saved: BnSaved<T> },
    Relu { input: NodeId },
    Add { a: NodeId, b: NodeId },
    Concat { a: NodeId, b: NodeId, ca: usize },
    Crop { input: NodeId, y0: usize, x0: usize },
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Operations of one forward pass in execution order.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients with respect to tape leaves.
pub struct Gradients<T> {
    leaves: Vec<(NodeId, Tensor<T>)>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.leaves.iter().find(|(n, _)| *n == id).map(|(_, g)| g)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Propagates `seed` (the gradient of a scalar loss with respect to
    /// `output`) back through the tape. Parameter gradients are added to
    /// `params`; gradients of leaves are returned.
    pub fn backward(&self, output: NodeId, seed: Tensor<T>, params: &mut ParamStore<T>) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let out = self
            .nodes
            .get(output.0)
            .ok_or_else(|| Error::invalid("output node is not on this tape"))?;
        if seed.shape() != out.value.shape() {
            return Err(Error::invalid(format!(
                "seed gradient {} does not match output {}",
                seed.shape(),
                out.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(seed);
        let mut leaves = Vec::new();

        fn acc<T: Real>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
            match &mut grads[id.0] {
                Some(e) => e.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => leaves.push((NodeId(idx), g)),
                Op::Conv { layer, input, geom } => {
                    let x = &self.nodes[input.0].value;
                    let r = ops::conv2d_backward(x, params.value(layer.weight), &layer.shape, *geom, &g)?;
                    params.accumulate_grad(layer.weight, &r.weight);
                    if let Some(b) = layer.bias {
                        params.accumulate_grad(b, &r.bias);
                    }
                    acc(&mut grads, *input, r.input);
                }
                Op::BnTrain { layer, input, saved } => {
                    let r = ops::batchnorm_train_backward(saved, params.value(layer.scale), &g);
                    params.accumulate_grad(layer.scale, &r.scale);
                    params.accumulate_grad(layer.shift, &r.shift);
                    acc(&mut grads, *input, r.input);
                }
                Op::BnEval { layer, input, saved } => {
                    let r = ops::batchnorm_eval_backward(saved, params.value(layer.scale), &g);
                    params.accumulate_grad(layer.scale, &r.scale);
                    params.accumulate_grad(layer.shift, &r.shift);
                    acc(&mut grads, *input, r.input);
                }
                Op::Relu { input } => {
                    acc(&mut grads, *input, ops::relu_backward(&node.value, &g));
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Concat { a, b, ca } => {
                    let (ga, gb) = ops::concat_backward(&g, *ca);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Crop { input, y0, x0 } => {
                    let s = self.nodes[input.0].value.shape();
                    acc(&mut grads, *input, ops::crop_backward(&g, s, *y0, *x0));
                }
            }
        }
        leaves.reverse();
        Ok(Gradients { leaves })
    }
}

/// Recording executor. In [`BnMode::Train`] running statistics in `params`
/// are updated as each batch-norm layer runs.
pub struct Recorder<'a, T> {
    tape: &'a mut Tape<T>,
    params: &'a mut ParamStore<T>,
    bn: BnMode,
}

impl<'a, T: Real> Recorder<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, params: &'a mut ParamStore<T>, bn: BnMode) -> Self {
        Recorder { tape, params, bn }
    }
}

impl<T: Real> Graph<T> for Recorder<'_, T> {
    type Var = NodeId;

    fn input(&mut self, x: Tensor<T>) -> NodeId {
        self.tape.push(Op::Leaf, x)
    }

    fn shape(&self, x: &NodeId) -> Shape {
        self.tape.value(*x).shape()
    }

    fn conv(&mut self, layer: &Conv2d, x: &NodeId, geom: ConvGeom) -> Result<NodeId> {
        let p = &*self.params;
        let y = ops::conv2d_forward(
            self.tape.value(*x),
            p.value(layer.weight),
            layer.bias.map(|b| p.value(b)),
            &layer.shape,
            geom,
        )?;
        Ok(self.tape.push(
            Op::Conv {
                layer: layer.clone(),
                input: *x,
                geom,
            },
            y,
        ))
    }

    fn batchnorm(&mut self, layer: &BatchNorm, x: &NodeId) -> Result<NodeId> {
        let input = self.tape.value(*x);
        match self.bn {
            BnMode::Train { momentum } => {
                let (y, saved, stats) = ops::batchnorm_train_forward(
                    input,
                    self.params.value(layer.scale),
                    self.params.value(layer.shift),
                    layer.eps,
                )?;
                for (r, m) in self.params.value_mut(layer.running_mean).iter_mut().zip(&stats.mean) {
                    *r = T::from_f64((1.0 - momentum) * r.as_f64() + momentum * m);
                }
                for (r, v) in self.params.value_mut(layer.running_var).iter_mut().zip(&stats.var_unbiased) {
                    *r = T::from_f64((1.0 - momentum) * r.as_f64() + momentum * v);
                }
                Ok(self.tape.push(
                    Op::BnTrain {
                        layer: layer.clone(),
                        input: *x,
                        saved,
                    },
                    y,
                ))
            }
            BnMode::Eval => {
                let p = &*self.params;
                let (y, saved) = ops::batchnorm_eval_forward(
                    input,
                    p.value(layer.scale),
                    p.value(layer.shift),
                    p.value(layer.running_mean),
                    p.value(layer.running_var),
                    layer.eps,
                )?;
                Ok(self.tape.push(
                    Op::BnEval {
                        layer: layer.clone(),
                        input: *x,
                        saved,
                    },
                    y,
                ))
            }
        }
    }

    fn relu(&mut self, x: &NodeId) -> Result<NodeId> {
        let y = ops::relu_forward(self.tape.value(*x));
        Ok(self.tape.push(Op::Relu { input: *x }, y))
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let y = ops::add_forward(self.tape.value(*a), self.tape.value(*b))?;
        Ok(self.tape.push(Op::Add { a: *a, b: *b }, y))
    }

    fn concat(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let ca = self.tape.value(*a).shape().c;
        let y = ops::concat_forward(self.tape.value(*a), self.tape.value(*b))?;
        Ok(self.tape.push(Op::Concat { a: *a, b: *b, ca }, y))
    }

    fn crop(&mut self, x: &NodeId, y0: usize, x0: usize, h: usize, w: usize) -> Result<NodeId> {
        let y = ops::crop_forward(self.tape.value(*x), y0, x0, h, w)?;
        Ok(self.tape.push(Op::Crop { input: *x, y0, x0 }, y))
    }
}
