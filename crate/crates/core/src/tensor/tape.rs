use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels;
use super::{check_finite, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv { x: usize, w: usize, b: usize },
    Fc { x: usize, w: usize, b: usize },
    Elu(usize),
    Subsample(usize),
    Upsample(usize),
    Concat(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, T),
    Abs(usize),
    Square(usize),
    Mean { x: usize, axes: Vec<usize> },
    Reshape(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations for reverse-mode differentiation.
///
/// A node requires a gradient when it is a leaf created with
/// `requires_grad = true` or when any of its inputs does. Nodes that do not
/// require a gradient are never visited by [`Tape::backward`], which is how
/// constants, detached inputs and frozen parameters are expressed.
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Result<Var> {
        check_finite(op_name, &value)?;
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[self.idx(v).expect("var from another tape")].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.idx(v).map(|i| self.nodes[i].requires_grad).unwrap_or(false)
    }

    /// Copy of the value as a fresh constant: gradients stop here.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.nodes[self.idx(v)?].value.clone();
        Ok(self.constant(value))
    }

    pub fn conv2d_3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let out = kernels::conv2d_3x3(&self.nodes[xi].value, &self.nodes[wi].value, &self.nodes[bi].value)?;
        self.push("conv2d_3x3", out, Op::Conv { x: xi, w: wi, b: bi }, &[xi, wi, bi])
    }

    pub fn fully_connected(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let out = kernels::fully_connected(&self.nodes[xi].value, &self.nodes[wi].value, &self.nodes[bi].value)?;
        self.push("fully_connected", out, Op::Fc { x: xi, w: wi, b: bi }, &[xi, wi, bi])
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = kernels::elu(&self.nodes[xi].value);
        self.push("elu", out, Op::Elu(xi), &[xi])
    }

    pub fn subsample2(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = kernels::subsample2(&self.nodes[xi].value)?;
        self.push("subsample2", out, Op::Subsample(xi), &[xi])
    }

    pub fn upsample_nearest2(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = kernels::upsample_nearest2(&self.nodes[xi].value)?;
        self.push("upsample_nearest2", out, Op::Upsample(xi), &[xi])
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let out = kernels::concat_channels(&self.nodes[ai].value, &self.nodes[bi].value)?;
        self.push("concat_channels", out, Op::Concat(ai, bi), &[ai, bi])
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&self, a: usize, b: usize, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.same_shape("add", ai, bi)?;
        let out = self.zip(ai, bi, |x, y| x + y);
        self.push("add", out, Op::Add(ai, bi), &[ai, bi])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.same_shape("sub", ai, bi)?;
        let out = self.zip(ai, bi, |x, y| x - y);
        self.push("sub", out, Op::Sub(ai, bi), &[ai, bi])
    }

    /// Multiply by a constant; no gradient flows into `c`.
    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.map(|v| v * c);
        self.push("scale", out, Op::Scale(xi, c), &[xi])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.map(|v| v.abs());
        self.push("abs", out, Op::Abs(xi), &[xi])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.map(|v| v * v);
        self.push("square", out, Op::Square(xi), &[xi])
    }

    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = kernels::mean_axes(&self.nodes[xi].value, axes)?;
        self.push(
            "mean_axes",
            out,
            Op::Mean {
                x: xi,
                axes: axes.to_vec(),
            },
            &[xi],
        )
    }

    /// Mean over every element, producing a rank-0 tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let rank = self.value(x).rank();
        let axes: Vec<usize> = (0..rank).collect();
        self.mean_axes(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.reshape(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape(xi), &[xi])
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Nodes are visited in exact reverse recording order. Every node that
    /// requires a gradient and lies upstream of `loss` ends up with one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let li = self.idx(loss)?;
        let lv = &self.nodes[li].value;
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        if !self.nodes[li].requires_grad {
            return Ok(Gradients { tape: self.id, grads });
        }
        grads[li] = Some(Tensor::full(lv.shape(), T::one()));

        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let wants = |j: usize| self.nodes[j].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv { x, w, b } => {
                    let cg = kernels::conv2d_3x3_backward(
                        &self.nodes[*x].value,
                        &self.nodes[*w].value,
                        &g,
                        [wants(*x), wants(*w), wants(*b)],
                    )?;
                    accumulate(&mut grads, *x, cg.input);
                    accumulate(&mut grads, *w, cg.weights);
                    accumulate(&mut grads, *b, cg.bias);
                }
                Op::Fc { x, w, b } => {
                    let fg = kernels::fully_connected_backward(
                        &self.nodes[*x].value,
                        &self.nodes[*w].value,
                        &g,
                        [wants(*x), wants(*w), wants(*b)],
                    )?;
                    accumulate(&mut grads, *x, fg.input);
                    accumulate(&mut grads, *w, fg.weights);
                    accumulate(&mut grads, *b, fg.bias);
                }
                Op::Elu(x) => {
                    accumulate(&mut grads, *x, Some(kernels::elu_backward(&node.value, &g)));
                }
                Op::Subsample(x) => {
                    let gi = kernels::subsample2_backward(self.nodes[*x].value.shape(), &g);
                    accumulate(&mut grads, *x, Some(gi));
                }
                Op::Upsample(x) => {
                    let gi = kernels::upsample_nearest2_backward(self.nodes[*x].value.shape(), &g);
                    accumulate(&mut grads, *x, Some(gi));
                }
                Op::Concat(a, b) => {
                    let (ga, gb) = kernels::concat_channels_backward(
                        self.nodes[*a].value.shape(),
                        self.nodes[*b].value.shape(),
                        &g,
                    );
                    accumulate(&mut grads, *a, wants(*a).then_some(ga));
                    accumulate(&mut grads, *b, wants(*b).then_some(gb));
                }
                Op::Add(a, b) => {
                    if wants(*b) {
                        accumulate(&mut grads, *b, Some(g.clone()));
                    }
                    accumulate(&mut grads, *a, wants(*a).then_some(g));
                }
                Op::Sub(a, b) => {
                    if wants(*b) {
                        accumulate(&mut grads, *b, Some(g.map(|v| -v)));
                    }
                    accumulate(&mut grads, *a, wants(*a).then_some(g));
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    accumulate(&mut grads, *x, Some(g.map(|v| v * c)));
                }
                Op::Abs(x) => {
                    let xv = &self.nodes[*x].value;
                    let data = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| {
                            if v > T::zero() {
                                gv
                            } else if v < T::zero() {
                                -gv
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *x, Some(Tensor::from_vec(xv.shape().to_vec(), data)?));
                }
                Op::Square(x) => {
                    let xv = &self.nodes[*x].value;
                    let two = T::one() + T::one();
                    let data = xv.data().iter().zip(g.data()).map(|(&v, &gv)| two * v * gv).collect();
                    accumulate(&mut grads, *x, Some(Tensor::from_vec(xv.shape().to_vec(), data)?));
                }
                Op::Mean { x, axes } => {
                    let gi = kernels::mean_axes_backward(self.nodes[*x].value.shape(), axes, &g);
                    accumulate(&mut grads, *x, Some(gi));
                }
                Op::Reshape(x) => {
                    let gi = g.reshape(self.nodes[*x].value.shape().to_vec())?;
                    accumulate(&mut grads, *x, Some(gi));
                }
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], i: usize, g: Option<Tensor<T>>) {
    let Some(g) = g else { return };
    match &mut grads[i] {
        Some(acc) => {
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`]: gradients of every leaf that required one.
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, or `None` when no gradient reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, shaped like `like`; zero when `v` did not influence the loss.
    pub fn wrt(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(|g| g.take())
    }
}
