//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and enough
//! information to apply its local adjoint. Nodes are only ever appended, so
//! the tape is topologically ordered and `backward` is a single reverse sweep.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ActivationKind};
use super::param::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    Conv2d {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        input: usize,
        window: usize,
        argmax: Vec<usize>,
    },
    Activation {
        input: usize,
        kind: ActivationKind,
    },
    Add(usize, usize),
    Mul(usize, usize),
    Concat(Vec<usize>),
    Slice {
        input: usize,
        start: usize,
    },
    Mse {
        pred: usize,
        target: usize,
    },
    Sum(usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    tracks_grad: bool,
}

/// Recording of one forward evaluation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn resolve(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Usage(
                "variable is detached from this tape".to_string(),
            ));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op, tracks_grad: bool) -> Result<Var> {
        value.ensure_finite("tape operation")?;
        self.nodes.push(Node {
            value,
            op,
            tracks_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    fn tracks(&self, idx: usize) -> bool {
        self.nodes[idx].tracks_grad
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.resolve(v)?].value)
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Constant, false)
    }

    /// Records (once per tape) the current value of a parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&index) = self.param_nodes.get(&id) {
            return Ok(Var {
                tape: self.id,
                index,
            });
        }
        if id.0 >= store.len() {
            return Err(Error::Usage(format!("unknown parameter {}", id.0)));
        }
        let v = self.push(store.get(id).value.clone(), Op::Param(id), true)?;
        self.param_nodes.insert(id, v.index);
        Ok(v)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (x, k) = (self.resolve(input)?, self.resolve(kernel)?);
        let b = bias.map(|b| self.resolve(b)).transpose()?;
        let out = kernels::conv2d_forward(
            &self.nodes[x].value,
            &self.nodes[k].value,
            b.map(|b| &self.nodes[b].value),
            stride,
            padding,
        )?;
        let tracks = self.tracks(x) || self.tracks(k) || b.is_some_and(|b| self.tracks(b));
        self.push(
            out,
            Op::Conv2d {
                input: x,
                kernel: k,
                bias: b,
                stride,
                padding,
            },
            tracks,
        )
    }

    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (x, k) = (self.resolve(input)?, self.resolve(kernel)?);
        let b = bias.map(|b| self.resolve(b)).transpose()?;
        let out = kernels::conv_transpose2d_forward(
            &self.nodes[x].value,
            &self.nodes[k].value,
            b.map(|b| &self.nodes[b].value),
            stride,
            padding,
        )?;
        let tracks = self.tracks(x) || self.tracks(k) || b.is_some_and(|b| self.tracks(b));
        self.push(
            out,
            Op::ConvTranspose2d {
                input: x,
                kernel: k,
                bias: b,
                stride,
                padding,
            },
            tracks,
        )
    }

    pub fn max_pool2d(&mut self, input: Var, window: usize) -> Result<Var> {
        let x = self.resolve(input)?;
        let (out, argmax) = kernels::max_pool2d_forward(&self.nodes[x].value, window)?;
        let tracks = self.tracks(x);
        self.push(
            out,
            Op::MaxPool2d {
                input: x,
                window,
                argmax,
            },
            tracks,
        )
    }

    /// Flat input indices selected by a pooling node, in output order.
    pub fn pool_indices(&self, pooled: Var) -> Result<&[usize]> {
        match &self.nodes[self.resolve(pooled)?].op {
            Op::MaxPool2d { argmax, .. } => Ok(argmax),
            _ => Err(Error::Usage("not a pooling node".into())),
        }
    }

    pub fn activation(&mut self, input: Var, kind: ActivationKind) -> Result<Var> {
        let x = self.resolve(input)?;
        let out = self.nodes[x].value.map(|v| kind.apply(v));
        let tracks = self.tracks(x);
        self.push(out, Op::Activation { input: x, kind }, tracks)
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.activation(input, ActivationKind::Sigmoid)
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        self.activation(input, ActivationKind::Tanh)
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.activation(input, ActivationKind::Relu)
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.resolve(lhs)?, self.resolve(rhs)?);
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        va.check_same_shape(vb, "add")?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        let tracks = self.tracks(a) || self.tracks(b);
        self.push(out, Op::Add(a, b), tracks)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.resolve(lhs)?, self.resolve(rhs)?);
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        va.check_same_shape(vb, "mul")?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        let tracks = self.tracks(a) || self.tracks(b);
        self.push(out, Op::Mul(a, b), tracks)
    }

    /// Concatenates along the leading axis (channels for images, output
    /// channels for kernels). Trailing extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Usage("concat of zero tensors".into()));
        }
        let idx = parts
            .iter()
            .map(|&p| self.resolve(p))
            .collect::<Result<Vec<_>>>()?;
        let tail = self.nodes[idx[0]].value.shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &i in &idx {
            let v = &self.nodes[i].value;
            if v.shape()[1..] != tail[..] {
                return Err(Error::Dimension(format!(
                    "concat: trailing shape {:?} differs from {tail:?}",
                    &v.shape()[1..]
                )));
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let tracks = idx.iter().any(|&i| self.tracks(i));
        self.push(Tensor::from_parts(shape, data), Op::Concat(idx), tracks)
    }

    /// `input[start..start + len]` along the leading axis.
    pub fn slice(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.resolve(input)?;
        let v = &self.nodes[x].value;
        let lead = v.shape()[0];
        if len == 0 || start + len > lead {
            return Err(Error::Dimension(format!(
                "slice {start}..{} out of leading extent {lead}",
                start + len
            )));
        }
        let inner: usize = v.shape()[1..].iter().product();
        let data = v.data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = v.shape().to_vec();
        shape[0] = len;
        let tracks = self.tracks(x);
        self.push(
            Tensor::from_parts(shape, data),
            Op::Slice { input: x, start },
            tracks,
        )
    }

    /// Mean squared error, producing a one-element tensor.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.resolve(pred)?, self.resolve(target)?);
        let value = mse(&self.nodes[p].value, &self.nodes[t].value)?;
        let tracks = self.tracks(p) || self.tracks(t);
        self.push(Tensor::scalar(value), Op::Mse { pred: p, target: t }, tracks)
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let x = self.resolve(input)?;
        let s = self.nodes[x].value.data().iter().sum();
        let tracks = self.tracks(x);
        self.push(Tensor::scalar(s), Op::Sum(x), tracks)
    }

    /// Reverse sweep from a scalar `loss`, returning parameter gradients.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let root = self.resolve(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root + 1];
        adj[root] = Some(Tensor::full(self.nodes[root].value.shape(), 1.0));
        let mut out = Gradients::default();

        for idx in (0..=root).rev() {
            let Some(g) = adj[idx].take() else { continue };
            if !self.nodes[idx].tracks_grad {
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    out.by_param.insert(*id, g);
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let grads = kernels::conv2d_backward(
                        &self.nodes[*input].value,
                        &self.nodes[*kernel].value,
                        &g,
                        *stride,
                        *padding,
                        self.tracks(*input),
                    )?;
                    if let Some(dx) = grads.input {
                        accumulate(&mut adj, *input, dx);
                    }
                    accumulate(&mut adj, *kernel, grads.kernel);
                    if let Some(b) = bias {
                        accumulate(&mut adj, *b, grads.bias);
                    }
                }
                Op::ConvTranspose2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let grads = kernels::conv_transpose2d_backward(
                        &self.nodes[*input].value,
                        &self.nodes[*kernel].value,
                        &g,
                        *stride,
                        *padding,
                        self.tracks(*input),
                    )?;
                    if let Some(dx) = grads.input {
                        accumulate(&mut adj, *input, dx);
                    }
                    accumulate(&mut adj, *kernel, grads.kernel);
                    if let Some(b) = bias {
                        accumulate(&mut adj, *b, grads.bias);
                    }
                }
                Op::MaxPool2d { input, argmax, .. } => {
                    let dx = kernels::max_pool2d_backward(
                        self.nodes[*input].value.shape(),
                        argmax,
                        &g,
                    );
                    accumulate(&mut adj, *input, dx);
                }
                Op::Activation { input, kind } => {
                    let x = &self.nodes[*input].value;
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .zip(node.value.data())
                        .map(|((&gv, &xv), &yv)| gv * kind.derivative(xv, yv))
                        .collect();
                    accumulate(&mut adj, *input, Tensor::from_parts(x.shape().to_vec(), data));
                }
                Op::Add(a, b) => {
                    if self.tracks(*a) {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.tracks(*b) {
                        accumulate(&mut adj, *b, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if self.tracks(*a) {
                        let d = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut adj, *a, Tensor::from_parts(va.shape().to_vec(), d));
                    }
                    if self.tracks(*b) {
                        let d = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut adj, *b, Tensor::from_parts(vb.shape().to_vec(), d));
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let v = &self.nodes[p].value;
                        let n = v.len();
                        if self.tracks(p) {
                            let d = g.data()[offset..offset + n].to_vec();
                            accumulate(&mut adj, p, Tensor::from_parts(v.shape().to_vec(), d));
                        }
                        offset += n;
                    }
                }
                Op::Slice { input, start } => {
                    let x = &self.nodes[*input].value;
                    let inner: usize = x.shape()[1..].iter().product();
                    let mut dx = Tensor::zeros(x.shape());
                    let begin = start * inner;
                    dx.data_mut()[begin..begin + g.len()].copy_from_slice(g.data());
                    accumulate(&mut adj, *input, dx);
                }
                Op::Mse { pred, target } => {
                    let (p, t) = (&self.nodes[*pred].value, &self.nodes[*target].value);
                    let scale = 2.0 * g.data()[0] / p.len() as f64;
                    let d: Vec<f64> = p
                        .data()
                        .iter()
                        .zip(t.data())
                        .map(|(a, b)| scale * (a - b))
                        .collect();
                    if self.tracks(*target) {
                        let neg = d.iter().map(|v| -v).collect();
                        accumulate(&mut adj, *target, Tensor::from_parts(t.shape().to_vec(), neg));
                    }
                    if self.tracks(*pred) {
                        accumulate(&mut adj, *pred, Tensor::from_parts(p.shape().to_vec(), d));
                    }
                }
                Op::Sum(input) => {
                    let x = &self.nodes[*input].value;
                    accumulate(&mut adj, *input, Tensor::full(x.shape(), g.data()[0]));
                }
            }
        }
        Ok(out)
    }

    /// Reverse sweep from `loss`, adding the gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.accumulate(&grads)
    }

    /// Re-evaluates every recorded node from its recorded inputs.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Constant | Op::Param(_) => node.value.clone(),
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => kernels::conv2d_forward(
                    &values[*input],
                    &values[*kernel],
                    bias.map(|b| &values[b]),
                    *stride,
                    *padding,
                )?,
                Op::ConvTranspose2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => kernels::conv_transpose2d_forward(
                    &values[*input],
                    &values[*kernel],
                    bias.map(|b| &values[b]),
                    *stride,
                    *padding,
                )?,
                Op::MaxPool2d { input, window, .. } => {
                    kernels::max_pool2d_forward(&values[*input], *window)?.0
                }
                Op::Activation { input, kind } => values[*input].map(|v| kind.apply(v)),
                Op::Add(a, b) => {
                    let mut t = values[*a].clone();
                    t.axpy(1.0, &values[*b])?;
                    t
                }
                Op::Mul(a, b) => {
                    let d = values[*a]
                        .data()
                        .iter()
                        .zip(values[*b].data())
                        .map(|(x, y)| x * y)
                        .collect();
                    Tensor::from_parts(values[*a].shape().to_vec(), d)
                }
                Op::Concat(parts) => {
                    let data = parts.iter().flat_map(|&p| values[p].data().to_vec()).collect();
                    Tensor::from_parts(node.value.shape().to_vec(), data)
                }
                Op::Slice { input, start } => {
                    let x = &values[*input];
                    let inner: usize = x.shape()[1..].iter().product();
                    let n = node.value.len();
                    Tensor::from_parts(
                        node.value.shape().to_vec(),
                        x.data()[start * inner..start * inner + n].to_vec(),
                    )
                }
                Op::Mse { pred, target } => Tensor::scalar(mse(&values[*pred], &values[*target])?),
                Op::Sum(input) => Tensor::scalar(values[*input].data().iter().sum()),
            };
            values.push(v);
        }
        Ok(values)
    }

    /// True when [`Tape::replay`] reproduces every recorded value bit for bit.
    pub fn replay_matches(&self) -> Result<bool> {
        let replayed = self.replay()?;
        Ok(replayed
            .iter()
            .zip(&self.nodes)
            .all(|(r, n)| r.shape() == n.value.shape() && bitwise_eq(r.data(), n.value.data())))
    }
}

fn bitwise_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn accumulate(adj: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    match &mut adj[idx] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Mean over all elements of `(pred - target)^2`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.check_same_shape(target, "mse_loss")?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / pred.len() as f64)
}
