//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every forward operation appends a node to a [`Tape`] and returns a
//! lightweight [`Var`] handle. Nodes are only ever appended, so their
//! indices are already a topological order and [`Tape::backward`] is a
//! single reverse sweep.
//!
//! ```
//! use scvae::autodiff::Tape;
//! use scvae::tensor::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap().with_grad());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0]);
//! ```

mod nn;
mod ops;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Abs(Var),
    Sum(Var),
    Reshape(Var),
    Permute {
        input: Var,
        axes: Vec<usize>,
    },
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_a: bool,
        trans_b: bool,
    },
    SoftThreshold {
        v: Var,
        theta: Var,
    },
    ChannelBias {
        input: Var,
        bias: Var,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
        cols: Vec<T>,
    },
    GroupNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Swish(Var),
    Upsample2x(Var),
    ReflectPad(Var, usize),
    Softmax(Var),
}

#[derive(Debug)]
pub(crate) struct Node<T> {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Ordered record of forward operations.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`, or `None` when `v` does not
    /// influence the loss through any trainable path.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `tensor`'s gradient buffer.
    pub fn accumulate_into(&self, v: Var, tensor: &mut Tensor<T>) -> Result<()> {
        match self.get(v) {
            Some(g) => tensor.accumulate_grad(g),
            None => {
                let zeros = vec![T::zero(); tensor.numel()];
                tensor.accumulate_grad(&zeros)
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a copy of `tensor` as a leaf. It participates in gradient
    /// computation iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &Tensor<T>) -> Var {
        self.push_unchecked(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    /// Records a non-trainable value.
    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies a recorded value out as a plain tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape matches value")
    }

    /// First element of a recorded value, typically a scalar loss.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    fn push_unchecked(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, rg: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    /// Appends an op result, refusing non-finite values.
    pub(crate) fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        value: Vec<T>,
        op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var> {
        if !all_finite(&value) {
            let pos = value.iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::numerical(name, format!("non-finite output at element {pos}")));
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(shape, value, op, rg))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::Shape("backward on an empty tape".into()));
        }
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and accumulates the resulting gradients into
    /// the given parameter tensors.
    pub fn backward_into(&self, loss: Var, params: &mut [(Var, &mut Tensor<T>)]) -> Result<()> {
        let grads = self.backward(loss)?;
        for (v, t) in params.iter_mut() {
            if t.requires_grad() {
                grads.accumulate_into(*v, t)?;
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |buf| add_into(buf, g));
                self.acc(grads, *b, |buf| add_into(buf, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |buf| add_into(buf, g));
                self.acc(grads, *b, |buf| buf.iter_mut().zip(g).for_each(|(d, &x)| *d -= x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |buf| {
                    for ((d, &x), &y) in buf.iter_mut().zip(g).zip(bv) {
                        *d += x * y;
                    }
                });
                self.acc(grads, *b, |buf| {
                    for ((d, &x), &y) in buf.iter_mut().zip(g).zip(av) {
                        *d += x * y;
                    }
                });
            }
            Op::Scale(a, c) => {
                self.acc(grads, *a, |buf| buf.iter_mut().zip(g).for_each(|(d, &x)| *d += x * *c));
            }
            Op::Abs(a) => {
                let av = self.value(*a);
                self.acc(grads, *a, |buf| {
                    for ((d, &x), &v) in buf.iter_mut().zip(g).zip(av) {
                        *d += x * sign(v);
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                self.acc(grads, *a, |buf| buf.iter_mut().for_each(|d| *d += g0));
            }
            Op::Reshape(a) => self.acc(grads, *a, |buf| add_into(buf, g)),
            Op::Permute { input, axes } => {
                let in_shape = self.shape(*input).to_vec();
                self.acc(grads, *input, |buf| ops::permute_backward(&in_shape, axes, g, buf));
            }
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_a,
                trans_b,
            } => {
                let dims = ops::MatDims {
                    batch: *batch,
                    m: *m,
                    k: *k,
                    n: *n,
                    trans_a: *trans_a,
                    trans_b: *trans_b,
                };
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |buf| ops::matmul_grad_a(&dims, g, bv, buf));
                self.acc(grads, *b, |buf| ops::matmul_grad_b(&dims, g, av, buf));
            }
            Op::SoftThreshold { v, theta } => {
                let (vv, tv) = (self.value(*v), self.value(*theta));
                self.acc(grads, *v, |buf| nn::soft_threshold_grad_v(vv, tv, g, buf));
                self.acc(grads, *theta, |buf| nn::soft_threshold_grad_theta(vv, tv, g, buf));
            }
            Op::ChannelBias { input, bias } => {
                let shape = self.shape(*input).to_vec();
                self.acc(grads, *input, |buf| add_into(buf, g));
                self.acc(grads, *bias, |buf| nn::channel_bias_grad(&shape, g, buf));
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
                cols,
            } => {
                let geo = nn::ConvGeometry::new(self.shape(*input), self.shape(*kernel), *stride, *pad)
                    .expect("validated in forward");
                let kv = self.value(*kernel);
                self.acc(grads, *kernel, |buf| nn::conv2d_grad_kernel(&geo, cols, g, buf));
                self.acc(grads, *input, |buf| nn::conv2d_grad_input(&geo, kv, g, buf));
            }
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            } => {
                let shape = self.shape(*input).to_vec();
                let stats = nn::GroupStats {
                    groups: *groups,
                    mean,
                    rstd,
                };
                let (xv, gv) = (self.value(*input), self.value(*gamma));
                self.acc(grads, *gamma, |buf| {
                    nn::group_norm_grad_gamma(&shape, &stats, xv, g, buf)
                });
                self.acc(grads, *beta, |buf| nn::channel_bias_grad(&shape, g, buf));
                self.acc(grads, *input, |buf| {
                    nn::group_norm_grad_input(&shape, &stats, xv, gv, g, buf)
                });
            }
            Op::Swish(a) => {
                let av = self.value(*a);
                self.acc(grads, *a, |buf| nn::swish_grad(av, g, buf));
            }
            Op::Upsample2x(a) => {
                let shape = self.shape(*a).to_vec();
                self.acc(grads, *a, |buf| nn::upsample2x_grad(&shape, g, buf));
            }
            Op::ReflectPad(a, p) => {
                let shape = self.shape(*a).to_vec();
                self.acc(grads, *a, |buf| nn::reflect_pad_grad(&shape, *p, g, buf));
            }
            Op::Softmax(a) => {
                let cols = *node.shape.last().expect("softmax rank >= 1");
                let y = &node.value;
                self.acc(grads, *a, |buf| nn::softmax_grad(y, cols, g, buf));
            }
        }
    }

    /// Runs `f` on the gradient buffer of `v` (allocated on demand) when `v`
    /// participates in differentiation.
    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]);
        f(buf);
    }
}

fn add_into<T: Scalar>(buf: &mut [T], g: &[T]) {
    buf.iter_mut().zip(g).for_each(|(d, &x)| *d += x);
}

/// Branch-free scan: `v − v` is NaN exactly for infinities and NaNs.
#[allow(clippy::eq_op)]
fn all_finite<T: Scalar>(values: &[T]) -> bool {
    let mut acc = [T::zero(); 8];
    let chunks = values.chunks_exact(8);
    let tail = chunks.remainder().iter().fold(T::zero(), |a, &v| a + (v - v));
    for c in chunks {
        for i in 0..8 {
            acc[i] += c[i] - c[i];
        }
    }
    acc.iter().fold(tail, |a, &v| a + v) == T::zero()
}

pub(crate) fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
