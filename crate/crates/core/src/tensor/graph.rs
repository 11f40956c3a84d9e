use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use super::kernels::{self, ConvGeom};
use super::ops::{self, Broadcast, Ops};
pub use super::ops::{BinaryOp, UnaryOp};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    Unary(UnaryOp, Var),
    Binary {
        op: BinaryOp,
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    Scale(Var, T),
    AddScalar(Var),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Squeeze(Var),
    Unsqueeze(Var),
    Slice {
        x: Var,
        start: usize,
        len: usize,
    },
    Concat(Var, Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of recorded operations. Records are appended in execution order, so
/// every operand precedes the record that uses it. [`Graph::backward`] walks
/// the tape once in reverse and frees it.
///
/// A graph is confined to one thread.
#[derive(Debug)]
pub struct Graph<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<Vec<Var>>,
    train_params: bool,
    consumed: Cell<bool>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every leaf that required them.
#[derive(Debug)]
pub struct Gradients<T: Real> {
    grads: HashMap<Var, Tensor<T>>,
    params: Vec<Var>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    /// Gradients of the registered parameters in registration order. A
    /// parameter that did not influence the loss gets `None`.
    pub fn params(&self) -> impl Iterator<Item = Option<&Tensor<T>>> + '_ {
        self.params.iter().map(|v| self.grads.get(v))
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.params
    }
}

impl<T: Real> Graph<T> {
    /// A graph whose parameters require gradients.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(Vec::new()),
            train_params: true,
            consumed: Cell::new(false),
        }
    }

    /// A graph whose parameters are frozen (recorded as plain constants).
    pub fn frozen() -> Self {
        Self {
            train_params: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    /// Parameter leaves registered so far, in registration order.
    pub fn params(&self) -> Vec<Var> {
        self.params.borrow().clone()
    }

    pub fn value(&self, v: Var) -> Result<Tensor<T>> {
        self.check_live()?;
        Ok(self.nodes.borrow()[v.0].value.clone())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes
            .borrow()
            .get(v.0)
            .map(|n| n.requires_grad)
            .unwrap_or(false)
    }

    fn check_live(&self) -> Result<()> {
        if self.consumed.get() {
            Err(Error::GraphConsumed)
        } else {
            Ok(())
        }
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    fn record(
        &self,
        inputs: &[Var],
        op: Op<T>,
        f: impl FnOnce(&[Node<T>]) -> Result<Tensor<T>>,
    ) -> Result<Var> {
        self.check_live()?;
        let value = f(&self.nodes.borrow())?;
        let rg = self.rg(inputs);
        Ok(self.push(value, op, rg))
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape: a second call,
    /// or any further op on this graph, fails with [`Error::GraphConsumed`].
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check_live()?;
        {
            let nodes = self.nodes.borrow();
            let shape = nodes[loss.0].value.shape();
            if nodes[loss.0].value.numel() != 1 {
                return Err(Error::NonScalarLoss(shape.to_vec()));
            }
        }
        self.consumed.set(true);
        let nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        let params = self.params.borrow().clone();

        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = HashMap::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            backprop_node(&nodes, i, g, &mut grads, &mut out)?;
        }
        Ok(Gradients { grads: out, params })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var, g: Vec<T>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b),
        slot @ None => *slot = Some(g),
    }
}

/// Sums a full NCHW gradient down to a per-channel `[C]` vector.
fn reduce_channels<T: Real>(full: &Tensor<T>, g: &[T]) -> Vec<T> {
    let (n, c, h, w) = full.dims4().expect("broadcast operand is NCHW");
    let hw = h * w;
    let mut out = vec![T::zero(); c];
    for b in 0..n {
        for (ch, acc) in out.iter_mut().enumerate() {
            let base = (b * c + ch) * hw;
            *acc = *acc + g[base..base + hw].iter().copied().sum::<T>();
        }
    }
    out
}

fn backprop_node<T: Real>(
    nodes: &[Node<T>],
    i: usize,
    g: Vec<T>,
    grads: &mut [Option<Vec<T>>],
    out: &mut HashMap<Var, Tensor<T>>,
) -> Result<()> {
    let node = &nodes[i];
    match node.op {
        Op::Leaf => {
            out.insert(Var(i), Tensor::new(node.value.shape().to_vec(), g)?);
        }
        Op::Unary(op, x) => {
            let xv = nodes[x.0].value.data();
            let yv = node.value.data();
            let gx: Vec<T> = match op {
                UnaryOp::Sigmoid => g
                    .iter()
                    .zip(yv)
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect(),
                UnaryOp::Tanh => g
                    .iter()
                    .zip(yv)
                    .map(|(&g, &y)| g * (T::one() - y * y))
                    .collect(),
                UnaryOp::Exp => g.iter().zip(yv).map(|(&g, &y)| g * y).collect(),
                UnaryOp::Log => g.iter().zip(xv).map(|(&g, &x)| g / x).collect(),
                UnaryOp::Abs => g
                    .iter()
                    .zip(xv)
                    .map(|(&g, &x)| {
                        if x > T::zero() {
                            g
                        } else if x < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .collect(),
                UnaryOp::Neg => g.iter().map(|&g| -g).collect(),
            };
            accumulate(grads, nodes, x, gx);
        }
        Op::Binary { op, a, b, bcast } => {
            let at = &nodes[a.0].value;
            let bt = &nodes[b.0].value;
            let full = &node.value;
            let (_, c, h, w) = full.dims4().unwrap_or((1, 1, 1, full.numel()));
            let hw = h * w;
            let av = |k: usize| match bcast {
                Broadcast::Lhs => at.data()[(k / hw) % c],
                _ => at.data()[k],
            };
            let bv = |k: usize| match bcast {
                Broadcast::Rhs => bt.data()[(k / hw) % c],
                _ => bt.data()[k],
            };
            let (ga, gb): (Vec<T>, Vec<T>) = match op {
                BinaryOp::Add => (g.clone(), g),
                BinaryOp::Sub => (g.clone(), g.iter().map(|&v| -v).collect()),
                BinaryOp::Mul => (
                    g.iter().enumerate().map(|(k, &v)| v * bv(k)).collect(),
                    g.iter().enumerate().map(|(k, &v)| v * av(k)).collect(),
                ),
                BinaryOp::Div => (
                    g.iter().enumerate().map(|(k, &v)| v / bv(k)).collect(),
                    g.iter()
                        .enumerate()
                        .map(|(k, &v)| {
                            let d = bv(k);
                            -v * av(k) / (d * d)
                        })
                        .collect(),
                ),
            };
            let ga = if bcast == Broadcast::Lhs {
                reduce_channels(full, &ga)
            } else {
                ga
            };
            let gb = if bcast == Broadcast::Rhs {
                reduce_channels(full, &gb)
            } else {
                gb
            };
            accumulate(grads, nodes, a, ga);
            accumulate(grads, nodes, b, gb);
        }
        Op::Scale(x, s) => {
            accumulate(grads, nodes, x, g.into_iter().map(|v| v * s).collect());
        }
        Op::AddScalar(x) => accumulate(grads, nodes, x, g),
        Op::Conv { x, w, b, geom } => {
            let need_x = nodes[x.0].requires_grad;
            let need_w = nodes[w.0].requires_grad;
            let need_b = b.is_some_and(|b| nodes[b.0].requires_grad);
            let cg = kernels::conv2d_backward(
                &geom,
                nodes[x.0].value.data(),
                nodes[w.0].value.data(),
                &g,
                need_x,
                need_w,
                need_b,
            );
            if let Some(gx) = cg.x {
                accumulate(grads, nodes, x, gx);
            }
            if let Some(gw) = cg.w {
                accumulate(grads, nodes, w, gw);
            }
            if let (Some(b), Some(gb)) = (b, cg.b) {
                accumulate(grads, nodes, b, gb);
            }
        }
        Op::Squeeze(x) => {
            let (n, c, h, w) = node.value.dims4()?;
            accumulate(grads, nodes, x, kernels::unsqueeze(n, c, h, w, &g));
        }
        Op::Unsqueeze(x) => {
            let (n, c, h, w) = node.value.dims4()?;
            accumulate(grads, nodes, x, kernels::squeeze(n, c, h, w, &g));
        }
        Op::Slice { x, start, len } => {
            let (n, c, h, w) = nodes[x.0].value.dims4()?;
            let hw = h * w;
            let mut gx = vec![T::zero(); n * c * hw];
            for s in 0..n {
                gx[(s * c + start) * hw..(s * c + start + len) * hw]
                    .copy_from_slice(&g[s * len * hw..(s + 1) * len * hw]);
            }
            accumulate(grads, nodes, x, gx);
        }
        Op::Concat(a, b) => {
            let (n, ca, h, w) = nodes[a.0].value.dims4()?;
            let cb = nodes[b.0].value.dims4()?.1;
            let hw = h * w;
            let c = ca + cb;
            accumulate(grads, nodes, a, kernels::slice_channels(n, c, hw, &g, 0, ca));
            accumulate(grads, nodes, b, kernels::slice_channels(n, c, hw, &g, ca, cb));
        }
        Op::Sum(x) => {
            let n = nodes[x.0].value.numel();
            accumulate(grads, nodes, x, vec![g[0]; n]);
        }
        Op::Mean(x) => {
            let n = nodes[x.0].value.numel();
            let v = g[0] / T::from_usize(n).unwrap();
            accumulate(grads, nodes, x, vec![v; n]);
        }
    }
    Ok(())
}

impl<T: Real> Ops<T> for Graph<T> {
    type V = Var;

    fn input(&self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    fn param(&self, t: &Tensor<T>) -> Var {
        let v = self.leaf(t.clone(), self.train_params);
        self.params.borrow_mut().push(v);
        v
    }

    fn to_tensor(&self, v: &Var) -> Result<Tensor<T>> {
        self.value(*v)
    }

    fn shape_of(&self, v: &Var) -> Result<Vec<usize>> {
        self.check_live()?;
        Ok(self.nodes.borrow()[v.0].value.shape().to_vec())
    }

    fn unary(&self, op: UnaryOp, x: &Var) -> Result<Var> {
        let x = *x;
        self.record(&[x], Op::Unary(op, x), |n| ops::unary(op, &n[x.0].value))
    }

    fn binary(&self, op: BinaryOp, a: &Var, b: &Var) -> Result<Var> {
        let (a, b) = (*a, *b);
        self.check_live()?;
        let (value, bcast) = {
            let nodes = self.nodes.borrow();
            ops::binary(op, &nodes[a.0].value, &nodes[b.0].value)?
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Binary { op, a, b, bcast }, rg))
    }

    fn scale(&self, x: &Var, s: T) -> Result<Var> {
        let x = *x;
        self.record(&[x], Op::Scale(x, s), |n| Ok(n[x.0].value.map(|v| v * s)))
    }

    fn add_scalar(&self, x: &Var, s: T) -> Result<Var> {
        let x = *x;
        self.record(&[x], Op::AddScalar(x), |n| Ok(n[x.0].value.map(|v| v + s)))
    }

    fn conv2d(&self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let (x, w, b) = (*x, *w, b.copied());
        self.check_live()?;
        let (value, geom) = {
            let nodes = self.nodes.borrow();
            ops::conv2d(
                &nodes[x.0].value,
                &nodes[w.0].value,
                b.map(|b| &nodes[b.0].value),
            )?
        };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(value, Op::Conv { x, w, b, geom }, rg))
    }

    fn channel_mix(&self, x: &Var, w: &Var) -> Result<Var> {
        self.check_live()?;
        ops::check_mix_weight(&self.nodes.borrow()[w.0].value)?;
        self.conv2d(x, w, None)
    }

    fn squeeze(&self, x: &Var) -> Result<Var> {
        let x = *x;
        self.record(&[x], Op::Squeeze(x), |n| ops::squeeze(&n[x.0].value))
    }

    fn unsqueeze(&self, x: &Var) -> Result<Var> {
        let x = *x;
        self.record(&[x], Op::Unsqueeze(x), |n| ops::unsqueeze(&n[x.0].value))
    }

    fn slice_channels(&self, x: &Var, start: usize, len: usize) -> Result<Var> {
        let x = *x;
        self.record(&[x], Op::Slice { x, start, len }, |n| {
            ops::slice_channels(&n[x.0].value, start, len)
        })
    }

    fn concat_channels(&self, a: &Var, b: &Var) -> Result<Var> {
        let (a, b) = (*a, *b);
        self.record(&[a, b], Op::Concat(a, b), |n| {
            ops::concat_channels(&n[a.0].value, &n[b.0].value)
        })
    }

    fn sum(&self, x: &Var) -> Result<Var> {
        let x = *x;
        self.record(&[x], Op::Sum(x), |n| Ok(Tensor::scalar(n[x.0].value.sum()?)))
    }

    fn mean(&self, x: &Var) -> Result<Var> {
        let x = *x;
        self.record(&[x], Op::Mean(x), |n| Ok(Tensor::scalar(n[x.0].value.mean()?)))
    }
}
