//! Reverse-mode automatic differentiation on a recording graph.
//!
//! Every operation appends a node holding its value, parent handles, and a
//! vector-Jacobian closure. The closures are themselves written in terms of
//! graph operations, so a backward pass executed with `create_graph` produces
//! differentiable gradient variables and a second backward pass yields
//! second-order derivatives. Nesting is capped at one level.
//!
//! A graph and its variables are confined to one thread; tensors are plain
//! values and may cross threads freely.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{broadcast_shape, Tensor};

type VjpFn = Rc<dyn Fn(&Graph, &Var) -> Result<Vec<Option<Var>>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    requires_grad: bool,
    level: u8,
    vjp: Option<VjpFn>,
}

struct GraphInner {
    nodes: Vec<Node>,
    grad_enabled: bool,
    build_level: u8,
}

/// Append-only differentiation record. Cheap to clone (shared handle).
#[derive(Clone)]
pub struct Graph {
    inner: Rc<RefCell<GraphInner>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone)]
pub struct Var {
    graph: Graph,
    id: usize,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("value", &self.value()).finish()
    }
}

/// Gradients of one backward pass, keyed by variable.
pub struct Gradients {
    map: HashMap<usize, Var>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `v`, if any path existed.
    pub fn get(&self, v: &Var) -> Option<Var> {
        self.map.get(&v.id).cloned()
    }

    pub fn tensor(&self, v: &Var) -> Option<Tensor> {
        self.map.get(&v.id).map(|g| g.value())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            inner: Rc::new(RefCell::new(GraphInner {
                nodes: Vec::new(),
                grad_enabled: true,
                build_level: 0,
            })),
        }
    }

    fn same_graph(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Current recording level: 1 while a `create_graph` backward runs.
    pub fn nesting_level(&self) -> u8 {
        self.inner.borrow().build_level
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record a leaf. `requires_grad` leaves receive gradients from backward.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Vec::new(), requires_grad, None)
    }

    /// Record a constant (never differentiated through).
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Vec::new(), false, None)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn push(&self, value: Tensor, parents: Vec<usize>, requires_grad: bool, vjp: Option<VjpFn>) -> Var {
        let mut inner = self.inner.borrow_mut();
        let requires = requires_grad && inner.grad_enabled;
        let id = inner.nodes.len();
        let level = inner.build_level;
        inner.nodes.push(Node {
            value,
            parents,
            requires_grad: requires,
            level,
            vjp: if requires { vjp } else { None },
        });
        Var { graph: self.clone(), id }
    }

    fn var(&self, id: usize) -> Var {
        Var { graph: self.clone(), id }
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.inner.borrow().nodes[id].value.clone()
    }

    /// Reverse accumulation from `root`. `seed` defaults to 1 for scalar roots.
    /// With `create_graph` the returned gradients are differentiable and the
    /// graph's nesting level is raised; one raise is the maximum.
    pub fn backward(&self, root: &Var, seed: Option<Tensor>, create_graph: bool) -> Result<Gradients> {
        if !self.same_graph(&root.graph) {
            return Err(Error::ForeignVar);
        }
        let root_shape = root.shape();
        let seed = match seed {
            Some(s) => {
                if s.shape() != root_shape.as_slice() {
                    return Err(Error::ShapeMismatch {
                        op: "backward seed",
                        lhs: s.shape().to_vec(),
                        rhs: root_shape,
                    });
                }
                s
            }
            None => {
                if !root.value().is_scalar() {
                    return Err(Error::InvalidShape {
                        op: "backward",
                        msg: "non-scalar root needs an explicit seed".into(),
                    });
                }
                Tensor::scalar(1.0)
            }
        };

        let saved_grad_enabled;
        let saved_level;
        {
            let mut inner = self.inner.borrow_mut();
            if create_graph && inner.nodes[root.id].level >= 1 {
                // root was itself produced by a differentiable backward
                return Err(Error::NestingTooDeep);
            }
            saved_grad_enabled = inner.grad_enabled;
            saved_level = inner.build_level;
            if create_graph {
                inner.build_level = 1;
            } else {
                inner.grad_enabled = false;
            }
        }

        let result = self.backward_inner(root, seed);

        let mut inner = self.inner.borrow_mut();
        inner.grad_enabled = saved_grad_enabled;
        inner.build_level = saved_level;
        drop(inner);
        result
    }

    fn backward_inner(&self, root: &Var, seed: Tensor) -> Result<Gradients> {
        let mut grads: HashMap<usize, Var> = HashMap::new();
        grads.insert(root.id, self.constant(seed));

        for id in (0..=root.id).rev() {
            let Some(out_grad) = grads.get(&id).cloned() else { continue };
            let (parents, requires) = {
                let inner = self.inner.borrow();
                let node = &inner.nodes[id];
                (node.parents.clone(), node.requires_grad)
            };
            if !requires || parents.is_empty() {
                continue;
            }
            // vjp closures call back into graph ops, so the borrow must be
            // released before invoking them
            let vjp = {
                let inner = self.inner.borrow();
                match &inner.nodes[id].vjp {
                    Some(f) => Rc::clone(f),
                    None => continue,
                }
            };
            let contributions = vjp(self, &out_grad)?;
            if contributions.len() != parents.len() {
                return Err(Error::Other("vjp arity mismatch".into()));
            }
            for (pid, contrib) in parents.iter().zip(contributions) {
                let Some(c) = contrib else { continue };
                if !self.inner.borrow().nodes[*pid].requires_grad {
                    continue;
                }
                match grads.remove(pid) {
                    Some(existing) => {
                        grads.insert(*pid, existing.add(&c)?);
                    }
                    None => {
                        grads.insert(*pid, c);
                    }
                }
            }
        }
        Ok(Gradients { map: grads })
    }
}

fn finite_check(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Var {
    pub fn value(&self) -> Tensor {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.inner.borrow().nodes[self.id].requires_grad
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    fn check_same_graph(&self, other: &Var) -> Result<()> {
        if self.graph.same_graph(&other.graph) {
            Ok(())
        } else {
            Err(Error::ForeignVar)
        }
    }

    fn unary(
        &self,
        op: &'static str,
        value: Tensor,
        vjp: impl Fn(&Graph, &Var, &Var) -> Result<Var> + 'static,
    ) -> Result<Var> {
        let value = finite_check(op, value)?;
        let me = self.id;
        let f: VjpFn = Rc::new(move |g: &Graph, grad: &Var| {
            let a = g.var(me);
            Ok(vec![Some(vjp(g, grad, &a)?)])
        });
        Ok(self
            .graph
            .push(value, vec![self.id], self.requires_grad(), Some(f)))
    }

    fn binary(
        &self,
        other: &Var,
        op: &'static str,
        value: Tensor,
        vjp: impl Fn(&Graph, &Var, &Var, &Var) -> Result<(Option<Var>, Option<Var>)> + 'static,
    ) -> Result<Var> {
        self.check_same_graph(other)?;
        let value = finite_check(op, value)?;
        let (a_id, b_id) = (self.id, other.id);
        let f: VjpFn = Rc::new(move |g: &Graph, grad: &Var| {
            let (ga, gb) = vjp(g, grad, &g.var(a_id), &g.var(b_id))?;
            Ok(vec![ga, gb])
        });
        Ok(self.graph.push(
            value,
            vec![self.id, other.id],
            self.requires_grad() || other.requires_grad(),
            Some(f),
        ))
    }

    // ---- elementwise arithmetic (broadcasting) ----

    pub fn add(&self, other: &Var) -> Result<Var> {
        let value = self.value().add(&other.value())?;
        let (sa, sb) = (self.shape(), other.shape());
        self.binary(other, "add", value, move |_, g, _, _| {
            Ok((Some(g.reduce_to(&sa)?), Some(g.reduce_to(&sb)?)))
        })
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        let value = self.value().sub(&other.value())?;
        let (sa, sb) = (self.shape(), other.shape());
        self.binary(other, "sub", value, move |_, g, _, _| {
            Ok((Some(g.reduce_to(&sa)?), Some(g.neg()?.reduce_to(&sb)?)))
        })
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        let value = self.value().mul(&other.value())?;
        let (sa, sb) = (self.shape(), other.shape());
        self.binary(other, "mul", value, move |_, g, a, b| {
            Ok((
                Some(g.mul(b)?.reduce_to(&sa)?),
                Some(g.mul(a)?.reduce_to(&sb)?),
            ))
        })
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        if other.value().data().iter().any(|&v| v == 0.0) {
            return Err(Error::Domain { op: "div", msg: "division by zero".into() });
        }
        let value = self.value().zip(&other.value(), "div", |a, b| a / b)?;
        let (sa, sb) = (self.shape(), other.shape());
        self.binary(other, "div", value, move |_, g, a, b| {
            let ga = g.div(b)?.reduce_to(&sa)?;
            let gb = g.mul(a)?.div(&b.mul(b)?)?.neg()?.reduce_to(&sb)?;
            Ok((Some(ga), Some(gb)))
        })
    }

    pub fn neg(&self) -> Result<Var> {
        self.unary("neg", self.value().scale(-1.0), |_, g, _| g.neg())
    }

    pub fn add_scalar(&self, k: f64) -> Result<Var> {
        self.unary("add_scalar", self.value().map(|v| v + k), |_, g, _| Ok(g.clone()))
    }

    pub fn scale(&self, k: f64) -> Result<Var> {
        self.unary("scale", self.value().scale(k), move |_, g, _| g.scale(k))
    }

    // ---- transcendental / pointwise ----

    pub fn exp(&self) -> Result<Var> {
        let value = self.value().map(f64::exp);
        let me = self.id;
        let f: VjpFn = Rc::new(move |g: &Graph, grad: &Var| {
            // d exp = exp, reuse parent and recompute to stay differentiable
            let e = g.var(me).exp()?;
            Ok(vec![Some(grad.mul(&e)?)])
        });
        let value = finite_check("exp", value)?;
        Ok(self
            .graph
            .push(value, vec![self.id], self.requires_grad(), Some(f)))
    }

    pub fn log(&self) -> Result<Var> {
        if self.value().data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain { op: "log", msg: "log of non-positive value".into() });
        }
        self.unary("log", self.value().map(f64::ln), |_, g, a| g.div(a))
    }

    /// Elementwise power with a constant exponent.
    pub fn powf(&self, p: f64) -> Result<Var> {
        if p.fract() != 0.0 && self.value().data().iter().any(|&v| v < 0.0) {
            return Err(Error::Domain {
                op: "powf",
                msg: "fractional power of negative value".into(),
            });
        }
        self.unary("powf", self.value().map(|v| v.powf(p)), move |_, g, a| {
            g.mul(&a.powf(p - 1.0)?.scale(p)?)
        })
    }

    pub fn relu(&self) -> Result<Var> {
        let mask = self.value().map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        self.unary("relu", self.value().map(|v| v.max(0.0)), move |g, grad, _| {
            grad.mul(&g.constant(mask.clone()))
        })
    }

    pub fn abs(&self) -> Result<Var> {
        // subgradient 0 at 0, matching relu's convention
        let sign = self.value().map(|v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
        self.unary("abs", self.value().map(f64::abs), move |g, grad, _| {
            grad.mul(&g.constant(sign.clone()))
        })
    }

    // ---- shape ops ----

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let value = self.value().reshape(shape)?;
        let orig = self.shape();
        self.unary("reshape", value, move |_, g, _| g.reshape(&orig))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var> {
        let value = self.value().broadcast_to(shape)?;
        let orig = self.shape();
        self.unary("broadcast", value, move |_, g, _| g.reduce_to(&orig))
    }

    /// Sum down to `shape` (adjoint of `broadcast_to`); identity when equal.
    pub fn reduce_to(&self, shape: &[usize]) -> Result<Var> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let value = self.value().reduce_to(shape)?;
        let orig = self.shape();
        self.unary("reduce", value, move |_, g, _| g.broadcast_to(&orig))
    }

    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var> {
        let value = self.value().slice(axis, start, end)?;
        let full = self.shape();
        self.unary("slice", value, move |_, g, _| g.pad_slice(axis, start, &full))
    }

    /// Embed into a zero tensor of `full_shape` along `axis` (adjoint of slice).
    pub fn pad_slice(&self, axis: usize, start: usize, full_shape: &[usize]) -> Result<Var> {
        let value = self.value().pad_slice(axis, start, full_shape)?;
        let len = self.shape()[axis];
        self.unary("pad_slice", value, move |_, g, _| {
            g.slice(axis, start, start + len)
        })
    }

    pub fn concat(parts: &[Var], axis: usize) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::InvalidShape { op: "concat", msg: "no parts".into() });
        };
        for p in parts {
            first.check_same_graph(p)?;
        }
        let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().collect();
        let value = Tensor::concat(&refs, axis)?;
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let requires = parts.iter().any(|p| p.requires_grad());
        let f: VjpFn = Rc::new(move |_g: &Graph, grad: &Var| {
            let mut out = Vec::with_capacity(lens.len());
            let mut offset = 0usize;
            for &len in &lens {
                out.push(Some(grad.slice(axis, offset, offset + len)?));
                offset += len;
            }
            Ok(out)
        });
        Ok(first.graph.push(value, ids, requires, Some(f)))
    }

    /// Stack along a new leading axis.
    pub fn stack(parts: &[Var]) -> Result<Var> {
        let reshaped: Vec<Var> = parts
            .iter()
            .map(|p| {
                let mut s = p.shape();
                s.insert(0, 1);
                p.reshape(&s)
            })
            .collect::<Result<_>>()?;
        Var::concat(&reshaped, 0)
    }

    pub fn transpose2d(&self) -> Result<Var> {
        let value = self.value().transpose2d()?;
        self.unary("transpose", value, |_, g, _| g.transpose2d())
    }

    // ---- reductions ----

    pub fn sum(&self) -> Result<Var> {
        let value = Tensor::scalar(self.value().sum());
        let orig = self.shape();
        self.unary("sum", value, move |_, g, _| g.broadcast_to(&orig))
    }

    pub fn mean(&self) -> Result<Var> {
        let n = self.value().len() as f64;
        self.sum()?.scale(1.0 / n)
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Var> {
        let value = self.value().sum_axis(axis)?;
        let orig = self.shape();
        self.unary("sum_axis", value, move |_, g, _| {
            // reinsert the axis as size 1, then broadcast back
            let mut keep = orig.clone();
            keep[axis] = 1;
            g.reshape(&keep)?.broadcast_to(&orig)
        })
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var> {
        let n = self.shape()[axis] as f64;
        self.sum_axis(axis)?.scale(1.0 / n)
    }

    pub fn max_axis(&self, axis: usize) -> Result<Var> {
        let (value, arg) = self.value().max_axis(axis)?;
        let orig = self.shape();
        let mut mask = Tensor::zeros(&orig);
        for &i in &arg {
            mask.data_mut()[i] = 1.0;
        }
        self.unary("max_axis", value, move |g, grad, _| {
            let mut keep = orig.clone();
            keep[axis] = 1;
            grad.reshape(&keep)?
                .broadcast_to(&orig)?
                .mul(&g.constant(mask.clone()))
        })
    }

    /// Per-element variance across the leading axis (population, divide by M).
    pub fn variance_axis0(&self) -> Result<Var> {
        let shape = self.shape();
        if shape.len() < 2 {
            return Err(Error::InvalidShape {
                op: "variance_axis0",
                msg: "needs at least rank 2".into(),
            });
        }
        let mut keep = shape.clone();
        keep[0] = 1;
        let mean = self.mean_axis(0)?.reshape(&keep)?.broadcast_to(&shape)?;
        let centered = self.sub(&mean)?;
        centered.mul(&centered)?.mean_axis(0)
    }

    // ---- linear algebra ----

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let value = self.value().matmul(&other.value())?;
        self.binary(other, "matmul", value, |_, g, a, b| {
            Ok((
                Some(g.matmul(&b.transpose2d()?)?),
                Some(a.transpose2d()?.matmul(g)?),
            ))
        })
    }

    // ---- softmax family (compositions, so higher-order works for free) ----

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var> {
        let shape = self.shape();
        let axis = shape.len() - 1;
        let mut keep = shape.clone();
        keep[axis] = 1;
        // shift by the row max for stability; softmax is shift-invariant so
        // treating the max as constant leaves gradients exact
        let max = self.graph.constant(self.value().max_axis(axis)?.0);
        let shifted = self.sub(&max.reshape(&keep)?.broadcast_to(&shape)?)?;
        let e = shifted.exp()?;
        let denom = e.sum_axis(axis)?.reshape(&keep)?.broadcast_to(&shape)?;
        e.div(&denom)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Var> {
        let shape = self.shape();
        let axis = shape.len() - 1;
        let mut keep = shape.clone();
        keep[axis] = 1;
        let max = self.graph.constant(self.value().max_axis(axis)?.0);
        let shifted = self.sub(&max.reshape(&keep)?.broadcast_to(&shape)?)?;
        let lse = shifted
            .exp()?
            .sum_axis(axis)?
            .log()?
            .reshape(&keep)?
            .broadcast_to(&shape)?;
        shifted.sub(&lse)
    }

    // ---- convolution triad ----

    /// 2-D cross-correlation: input (N,C,H,W), kernel (O,C,KH,KW).
    pub fn conv2d(&self, kernel: &Var, stride: usize, pad: usize) -> Result<Var> {
        let value = conv2d_forward(&self.value(), &kernel.value(), stride, pad)?;
        let x_shape = self.shape();
        let k_shape = kernel.shape();
        self.binary(kernel, "conv2d", value, move |_, g, x, w| {
            Ok((
                Some(g.conv2d_input_grad(w, stride, pad, &x_shape)?),
                Some(x.conv2d_kernel_grad(g, stride, pad, &k_shape)?),
            ))
        })
    }

    /// Adjoint of conv2d in its input argument: `self` is an output-shaped
    /// gradient, result is input-shaped.
    pub fn conv2d_input_grad(
        &self,
        kernel: &Var,
        stride: usize,
        pad: usize,
        input_shape: &[usize],
    ) -> Result<Var> {
        let value = conv2d_input_grad(&self.value(), &kernel.value(), stride, pad, input_shape)?;
        let ks = kernel.shape();
        self.binary(kernel, "conv2d_input_grad", value, move |_, s, g, w| {
            // s is the incoming (input-shaped) seed
            Ok((
                Some(s.conv2d(w, stride, pad)?),
                Some(s.conv2d_kernel_grad(g, stride, pad, &ks)?),
            ))
        })
    }

    /// Adjoint of conv2d in its kernel argument: `self` is the input, `grad`
    /// the output-shaped gradient, result is kernel-shaped.
    pub fn conv2d_kernel_grad(
        &self,
        grad: &Var,
        stride: usize,
        pad: usize,
        kernel_shape: &[usize],
    ) -> Result<Var> {
        let value = conv2d_kernel_grad(&self.value(), &grad.value(), stride, pad, kernel_shape)?;
        let x_shape = self.shape();
        self.binary(grad, "conv2d_kernel_grad", value, move |_, s, x, g| {
            // s is the incoming (kernel-shaped) seed
            Ok((
                Some(g.conv2d_input_grad(s, stride, pad, &x_shape)?),
                Some(x.conv2d(s, stride, pad)?),
            ))
        })
    }
}

fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return Err(Error::InvalidShape {
            op: "conv2d",
            msg: format!("kernel {k} larger than padded input {padded}"),
        });
    }
    Ok((padded - k) / stride + 1)
}

fn conv_shapes(
    x: &[usize],
    w: &[usize],
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize, usize)> {
    if x.len() != 4 || w.len() != 4 || x[1] != w[1] {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: x.to_vec(),
            rhs: w.to_vec(),
        });
    }
    if stride == 0 {
        return Err(Error::InvalidShape { op: "conv2d", msg: "stride must be positive".into() });
    }
    let (n, c, h, wd) = (x[0], x[1], x[2], x[3]);
    let (o, kh, kw) = (w[0], w[2], w[3]);
    let oh = conv_out_dim(h, kh, stride, pad)?;
    let ow = conv_out_dim(wd, kw, stride, pad)?;
    Ok((n, c, h, wd, o, kh, kw, oh, ow))
}

fn conv2d_forward(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (n, c, h, wd, o, kh, kw, oh, ow) = conv_shapes(x.shape(), w.shape(), stride, pad)?;
    let mut out = Tensor::zeros(&[n, o, oh, ow]);
    let xd = x.data();
    let wdat = w.data();
    let od = out.data_mut();
    for b in 0..n {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for u in 0..kh {
                            let xi = (i * stride + u) as isize - pad as isize;
                            if xi < 0 || xi as usize >= h {
                                continue;
                            }
                            for v in 0..kw {
                                let xj = (j * stride + v) as isize - pad as isize;
                                if xj < 0 || xj as usize >= wd {
                                    continue;
                                }
                                acc += xd[((b * c + ic) * h + xi as usize) * wd + xj as usize]
                                    * wdat[((oc * c + ic) * kh + u) * kw + v];
                            }
                        }
                    }
                    od[((b * o + oc) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    Ok(out)
}

fn conv2d_input_grad(
    g: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    input_shape: &[usize],
) -> Result<Tensor> {
    let (n, c, h, wd, o, kh, kw, oh, ow) = conv_shapes(input_shape, w.shape(), stride, pad)?;
    if g.shape() != [n, o, oh, ow] {
        return Err(Error::ShapeMismatch {
            op: "conv2d_input_grad",
            lhs: g.shape().to_vec(),
            rhs: vec![n, o, oh, ow],
        });
    }
    let mut out = Tensor::zeros(input_shape);
    let gd = g.data();
    let wdat = w.data();
    let od = out.data_mut();
    for b in 0..n {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let gv = gd[((b * o + oc) * oh + i) * ow + j];
                    if gv == 0.0 {
                        continue;
                    }
                    for ic in 0..c {
                        for u in 0..kh {
                            let xi = (i * stride + u) as isize - pad as isize;
                            if xi < 0 || xi as usize >= h {
                                continue;
                            }
                            for v in 0..kw {
                                let xj = (j * stride + v) as isize - pad as isize;
                                if xj < 0 || xj as usize >= wd {
                                    continue;
                                }
                                od[((b * c + ic) * h + xi as usize) * wd + xj as usize] +=
                                    gv * wdat[((oc * c + ic) * kh + u) * kw + v];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn conv2d_kernel_grad(
    x: &Tensor,
    g: &Tensor,
    stride: usize,
    pad: usize,
    kernel_shape: &[usize],
) -> Result<Tensor> {
    let (n, c, h, wd, o, kh, kw, oh, ow) = conv_shapes(x.shape(), kernel_shape, stride, pad)?;
    if g.shape() != [n, o, oh, ow] {
        return Err(Error::ShapeMismatch {
            op: "conv2d_kernel_grad",
            lhs: g.shape().to_vec(),
            rhs: vec![n, o, oh, ow],
        });
    }
    let mut out = Tensor::zeros(kernel_shape);
    let gd = g.data();
    let xd = x.data();
    let od = out.data_mut();
    for b in 0..n {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let gv = gd[((b * o + oc) * oh + i) * ow + j];
                    if gv == 0.0 {
                        continue;
                    }
                    for ic in 0..c {
                        for u in 0..kh {
                            let xi = (i * stride + u) as isize - pad as isize;
                            if xi < 0 || xi as usize >= h {
                                continue;
                            }
                            for v in 0..kw {
                                let xj = (j * stride + v) as isize - pad as isize;
                                if xj < 0 || xj as usize >= wd {
                                    continue;
                                }
                                od[((oc * c + ic) * kh + u) * kw + v] +=
                                    gv * xd[((b * c + ic) * h + xi as usize) * wd + xj as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Broadcast-aware helper used by a few composite ops.
pub fn common_shape(a: &Var, b: &Var) -> Result<Vec<usize>> {
    broadcast_shape(&a.shape(), &b.shape()).ok_or(Error::ShapeMismatch {
        op: "broadcast",
        lhs: a.shape(),
        rhs: b.shape(),
    })
}
