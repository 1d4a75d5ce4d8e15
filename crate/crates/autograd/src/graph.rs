use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::kernels::{self, ConvGeometry, NormStats};
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;

/// A differentiable operation implemented outside the engine.
///
/// The caller computes the forward value itself and hands it to
/// [`Graph::custom`]; the engine only calls back for the vector-Jacobian
/// product. Returned gradients are positional with `inputs`.
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Abs(usize),
    Square(usize),
    Tanh(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Linear { x: usize, w: usize, b: Option<usize> },
    Conv2d { x: usize, w: usize, b: Option<usize>, stride: usize, pad: usize },
    MaxPool { x: usize, argmax: Vec<usize> },
    Upsample2x(usize),
    InstanceNorm { x: usize, stats: NormStats },
    ChannelAffine { x: usize, scale: usize, shift: usize },
    GlobalAvgPool(usize),
    Concat(Vec<usize>),
    Narrow { x: usize, start: usize },
    LogSoftmax(usize),
    Select { x: usize, index: usize },
    Custom { inputs: Vec<usize>, op: Rc<dyn CustomOp> },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape of tensor operations.
///
/// A graph lives for one forward/backward cycle. Values are immutable once
/// recorded, so any number of backward passes may be run from different roots.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    id: usize,
    graph: &'g Graph,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

/// Gradients of one backward pass, retained for leaf nodes only.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub(crate) fn get_id(&self, id: usize) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record a value that never receives gradients.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.leaf(Rc::new(t), false)
    }

    /// Record a leaf that accumulates gradients (a parameter or an input
    /// whose sensitivity is wanted).
    pub fn variable(&self, t: Tensor) -> Var<'_> {
        self.leaf(Rc::new(t), true)
    }

    pub fn leaf(&self, t: Rc<Tensor>, requires_grad: bool) -> Var<'_> {
        self.push(t, Op::Leaf, requires_grad)
    }

    fn push(&self, value: Rc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { id: nodes.len() - 1, graph: self }
    }

    fn op(&self, value: Tensor, op: Op, parents: &[usize]) -> Var<'_> {
        let rg = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        self.push(Rc::new(value), op, rg)
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Concatenate 2-D values along their second axis.
    pub fn concat<'g>(&'g self, parts: &[Var<'g>]) -> Var<'g> {
        assert!(!parts.is_empty());
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let n = vals[0].dim(0);
        let widths: Vec<usize> = vals
            .iter()
            .map(|v| {
                assert_eq!(v.shape().len(), 2, "concat expects 2-D values");
                assert_eq!(v.dim(0), n, "concat batch mismatch");
                v.dim(1)
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; n * total];
        for r in 0..n {
            let mut off = 0;
            for (v, &w) in vals.iter().zip(&widths) {
                out[r * total + off..r * total + off + w].copy_from_slice(&v.data()[r * w..(r + 1) * w]);
                off += w;
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        self.op(Tensor::new(&[n, total], out), Op::Concat(ids.clone()), &ids)
    }

    /// Record the result of a [`CustomOp`].
    pub fn custom<'g>(&'g self, inputs: &[Var<'g>], output: Tensor, op: Rc<dyn CustomOp>) -> Var<'g> {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        self.op(output, Op::Custom { inputs: ids.clone(), op }, &ids)
    }

    /// Reverse-mode sweep from a scalar `root`.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..=root.id).map(|_| None).collect();
        let shape = nodes[root.id].value.shape().to_vec();
        assert_eq!(shape.iter().product::<usize>(), 1, "backward root must be a scalar");
        grads[root.id] = Some(Tensor::full(&shape, 1.0));
        for i in (0..=root.id).rev() {
            if !nodes[i].requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = nodes[i].op {
                grads[i] = Some(g);
                continue;
            }
            backprop_node(&nodes, i, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn nodes(&self) -> Ref<'_, Vec<Node>> {
        self.nodes.borrow()
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, t: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

fn backprop_node(nodes: &[Node], i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |id: usize| -> &Tensor { &nodes[id].value };
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            if nodes[*a].requires_grad {
                accumulate(nodes, grads, *a, g.zip_map(val(*b), |g, y| g * y));
            }
            if nodes[*b].requires_grad {
                accumulate(nodes, grads, *b, g.zip_map(val(*a), |g, x| g * x));
            }
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, g.map(|v| v * c)),
        Op::AddScalar(a) => accumulate(nodes, grads, *a, g.clone()),
        Op::Abs(a) => accumulate(nodes, grads, *a, g.zip_map(val(*a), |g, x| g * sign(x))),
        Op::Square(a) => accumulate(nodes, grads, *a, g.zip_map(val(*a), |g, x| 2.0 * g * x)),
        Op::Tanh(a) => accumulate(nodes, grads, *a, g.zip_map(out, |g, y| g * (1.0 - y * y))),
        Op::Relu(a) => {
            accumulate(nodes, grads, *a, g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 }))
        }
        Op::LeakyRelu(a, alpha) => accumulate(
            nodes,
            grads,
            *a,
            g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { alpha * g }),
        ),
        Op::Sum(a) => {
            let s = g.data()[0];
            accumulate(nodes, grads, *a, Tensor::full(val(*a).shape(), s));
        }
        Op::Mean(a) => {
            let x = val(*a);
            let s = g.data()[0] / x.len() as f64;
            accumulate(nodes, grads, *a, Tensor::full(x.shape(), s));
        }
        Op::Reshape(a) => accumulate(nodes, grads, *a, g.clone().reshaped(val(*a).shape())),
        Op::Linear { x, w, b } => {
            let (xv, wv) = (val(*x), val(*w));
            let (n, din) = (xv.dim(0), xv.dim(1));
            let dout = wv.dim(0);
            if nodes[*x].requires_grad {
                let mut gx = vec![0.0; n * din];
                kernels::gemm(n, dout, din, g.data(), false, wv.data(), false, 0.0, &mut gx);
                accumulate(nodes, grads, *x, Tensor::new(&[n, din], gx));
            }
            if nodes[*w].requires_grad {
                let mut gw = vec![0.0; dout * din];
                kernels::gemm(dout, n, din, g.data(), true, xv.data(), false, 0.0, &mut gw);
                accumulate(nodes, grads, *w, Tensor::new(&[dout, din], gw));
            }
            if let Some(b) = b {
                let mut gb = vec![0.0; dout];
                for r in 0..n {
                    for (o, v) in gb.iter_mut().zip(&g.data()[r * dout..(r + 1) * dout]) {
                        *o += v;
                    }
                }
                accumulate(nodes, grads, *b, Tensor::new(&[dout], gb));
            }
        }
        Op::Conv2d { x, w, b, stride, pad } => {
            let (xv, wv) = (val(*x), val(*w));
            let geo = conv_geometry(xv, wv, *stride, *pad);
            let (n, o) = (xv.dim(0), wv.dim(0));
            let (rows, cols_n) = (geo.col_rows(), geo.col_cols());
            let in_sz = geo.channels * geo.height * geo.width;
            let mut cols = vec![0.0; rows * cols_n];
            let mut gcols = vec![0.0; rows * cols_n];
            let mut gx = nodes[*x].requires_grad.then(|| vec![0.0; xv.len()]);
            let mut gw = nodes[*w].requires_grad.then(|| vec![0.0; wv.len()]);
            for s in 0..n {
                let gs = &g.data()[s * o * cols_n..(s + 1) * o * cols_n];
                if let Some(gw) = gw.as_mut() {
                    kernels::im2col(&xv.data()[s * in_sz..(s + 1) * in_sz], &geo, &mut cols);
                    kernels::gemm(o, cols_n, rows, gs, false, &cols, true, 1.0, gw);
                }
                if let Some(gx) = gx.as_mut() {
                    kernels::gemm(rows, o, cols_n, wv.data(), true, gs, false, 0.0, &mut gcols);
                    kernels::col2im(&gcols, &geo, &mut gx[s * in_sz..(s + 1) * in_sz]);
                }
            }
            if let Some(gx) = gx {
                accumulate(nodes, grads, *x, Tensor::new(xv.shape(), gx));
            }
            if let Some(gw) = gw {
                accumulate(nodes, grads, *w, Tensor::new(wv.shape(), gw));
            }
            if let Some(b) = b {
                let mut gb = vec![0.0; o];
                for s in 0..n {
                    for (c, acc) in gb.iter_mut().enumerate() {
                        let off = (s * o + c) * cols_n;
                        *acc += g.data()[off..off + cols_n].iter().sum::<f64>();
                    }
                }
                accumulate(nodes, grads, *b, Tensor::new(&[o], gb));
            }
        }
        Op::MaxPool { x, argmax } => {
            let mut gx = vec![0.0; val(*x).len()];
            for (gv, &idx) in g.data().iter().zip(argmax) {
                gx[idx] += gv;
            }
            accumulate(nodes, grads, *x, Tensor::new(val(*x).shape(), gx));
        }
        Op::Upsample2x(a) => {
            let xv = val(*a);
            let (nc, h, w) = (xv.dim(0) * xv.dim(1), xv.dim(2), xv.dim(3));
            let mut gx = vec![0.0; xv.len()];
            for p in 0..nc {
                for y in 0..2 * h {
                    for x in 0..2 * w {
                        gx[(p * h + y / 2) * w + x / 2] += g.data()[(p * 2 * h + y) * 2 * w + x];
                    }
                }
            }
            accumulate(nodes, grads, *a, Tensor::new(xv.shape(), gx));
        }
        Op::InstanceNorm { x, stats } => {
            let xv = val(*x);
            let plane = xv.dim(2) * xv.dim(3);
            let mut gx = vec![0.0; xv.len()];
            kernels::instance_norm_backward(out.data(), g.data(), stats, plane, &mut gx);
            accumulate(nodes, grads, *x, Tensor::new(xv.shape(), gx));
        }
        Op::ChannelAffine { x, scale, shift } => {
            let (xv, sv) = (val(*x), val(*scale));
            let planes = xv.dim(0) * xv.dim(1);
            let plane = xv.dim(2) * xv.dim(3);
            if nodes[*x].requires_grad {
                let mut gx = vec![0.0; xv.len()];
                for p in 0..planes {
                    let s = sv.data()[p];
                    for k in p * plane..(p + 1) * plane {
                        gx[k] = g.data()[k] * s;
                    }
                }
                accumulate(nodes, grads, *x, Tensor::new(xv.shape(), gx));
            }
            let mut gs = vec![0.0; planes];
            let mut gb = vec![0.0; planes];
            for p in 0..planes {
                for k in p * plane..(p + 1) * plane {
                    gs[p] += g.data()[k] * xv.data()[k];
                    gb[p] += g.data()[k];
                }
            }
            accumulate(nodes, grads, *scale, Tensor::new(sv.shape(), gs));
            accumulate(nodes, grads, *shift, Tensor::new(val(*shift).shape(), gb));
        }
        Op::GlobalAvgPool(a) => {
            let xv = val(*a);
            let plane = xv.dim(2) * xv.dim(3);
            let mut gx = vec![0.0; xv.len()];
            for (p, gv) in g.data().iter().enumerate() {
                gx[p * plane..(p + 1) * plane].fill(gv / plane as f64);
            }
            accumulate(nodes, grads, *a, Tensor::new(xv.shape(), gx));
        }
        Op::Concat(parts) => {
            let n = g.dim(0);
            let total = g.dim(1);
            let mut off = 0;
            for &p in parts {
                let w = val(p).dim(1);
                if nodes[p].requires_grad {
                    let mut gp = vec![0.0; n * w];
                    for r in 0..n {
                        gp[r * w..(r + 1) * w].copy_from_slice(&g.data()[r * total + off..r * total + off + w]);
                    }
                    accumulate(nodes, grads, p, Tensor::new(&[n, w], gp));
                }
                off += w;
            }
        }
        Op::Narrow { x, start } => {
            let xv = val(*x);
            let (n, total) = (xv.dim(0), xv.dim(1));
            let len = g.dim(1);
            let mut gx = vec![0.0; xv.len()];
            for r in 0..n {
                gx[r * total + start..r * total + start + len].copy_from_slice(&g.data()[r * len..(r + 1) * len]);
            }
            accumulate(nodes, grads, *x, Tensor::new(xv.shape(), gx));
        }
        Op::LogSoftmax(a) => {
            let (n, k) = (out.dim(0), out.dim(1));
            let mut gx = vec![0.0; n * k];
            for r in 0..n {
                let gs = &g.data()[r * k..(r + 1) * k];
                let total: f64 = gs.iter().sum();
                for c in 0..k {
                    gx[r * k + c] = gs[c] - out.data()[r * k + c].exp() * total;
                }
            }
            accumulate(nodes, grads, *a, Tensor::new(&[n, k], gx));
        }
        Op::Select { x, index } => {
            let mut gx = Tensor::zeros(val(*x).shape());
            gx.data_mut()[*index] = g.data()[0];
            accumulate(nodes, grads, *x, gx);
        }
        Op::Custom { inputs, op } => {
            let ins: Vec<&Tensor> = inputs.iter().map(|&id| val(id)).collect();
            let gs = op.backward(&ins, out, g);
            assert_eq!(gs.len(), inputs.len(), "custom op {} returned wrong arity", op.name());
            for (&id, gi) in inputs.iter().zip(gs) {
                if let Some(gi) = gi {
                    assert_eq!(gi.shape(), val(id).shape(), "custom op {} gradient shape", op.name());
                    accumulate(nodes, grads, id, gi);
                }
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn conv_geometry(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> ConvGeometry {
    assert_eq!(x.shape().len(), 4, "conv2d input must be NCHW");
    assert_eq!(w.shape().len(), 4, "conv2d weight must be OIKK");
    assert_eq!(x.dim(1), w.dim(1), "conv2d channel mismatch");
    assert_eq!(w.dim(2), w.dim(3), "conv2d kernels are square");
    ConvGeometry {
        channels: x.dim(1),
        height: x.dim(2),
        width: x.dim(3),
        kernel: w.dim(2),
        stride,
        pad,
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes()[self.id].value.shape().to_vec()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a non-scalar");
        v.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes()[self.id].requires_grad
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var<'g> {
        self.graph.leaf(self.value(), false)
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'g> {
        self.graph.op(value, op, &[self.id])
    }

    pub fn add(&self, o: Var<'g>) -> Var<'g> {
        let v = self.value().zip_map(&o.value(), |a, b| a + b);
        self.graph.op(v, Op::Add(self.id, o.id), &[self.id, o.id])
    }

    pub fn sub(&self, o: Var<'g>) -> Var<'g> {
        let v = self.value().zip_map(&o.value(), |a, b| a - b);
        self.graph.op(v, Op::Sub(self.id, o.id), &[self.id, o.id])
    }

    pub fn mul(&self, o: Var<'g>) -> Var<'g> {
        let v = self.value().zip_map(&o.value(), |a, b| a * b);
        self.graph.op(v, Op::Mul(self.id, o.id), &[self.id, o.id])
    }

    pub fn scale(&self, c: f64) -> Var<'g> {
        self.unary(self.value().map(|v| v * c), Op::Scale(self.id, c))
    }

    pub fn neg(&self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'g> {
        self.unary(self.value().map(|v| v + c), Op::AddScalar(self.id))
    }

    pub fn abs(&self) -> Var<'g> {
        self.unary(self.value().map(f64::abs), Op::Abs(self.id))
    }

    pub fn square(&self) -> Var<'g> {
        self.unary(self.value().map(|v| v * v), Op::Square(self.id))
    }

    pub fn tanh(&self) -> Var<'g> {
        self.unary(self.value().map(f64::tanh), Op::Tanh(self.id))
    }

    pub fn relu(&self) -> Var<'g> {
        self.unary(self.value().map(|v| v.max(0.0)), Op::Relu(self.id))
    }

    pub fn leaky_relu(&self, alpha: f64) -> Var<'g> {
        self.unary(
            self.value().map(|v| if v > 0.0 { v } else { alpha * v }),
            Op::LeakyRelu(self.id, alpha),
        )
    }

    pub fn sum(&self) -> Var<'g> {
        self.unary(Tensor::scalar(self.value().sum()), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'g> {
        self.unary(Tensor::scalar(self.value().mean()), Op::Mean(self.id))
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'g> {
        let v = (*self.value()).clone().reshaped(shape);
        self.unary(v, Op::Reshape(self.id))
    }

    /// Flatten everything after the batch axis.
    pub fn flatten(&self) -> Var<'g> {
        let s = self.shape();
        let inner: usize = s[1..].iter().product();
        self.reshape(&[s[0], inner])
    }

    /// `x W^T + b` with `x: [N, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&self, w: Var<'g>, b: Option<Var<'g>>) -> Var<'g> {
        let (xv, wv) = (self.value(), w.value());
        assert_eq!(xv.shape().len(), 2, "linear input must be [N, in], got {:?}", xv.shape());
        assert_eq!(xv.dim(1), wv.dim(1), "linear input width mismatch");
        let (n, din, dout) = (xv.dim(0), xv.dim(1), wv.dim(0));
        let mut out = vec![0.0; n * dout];
        kernels::gemm(n, din, dout, xv.data(), false, wv.data(), true, 0.0, &mut out);
        let mut parents = vec![self.id, w.id];
        if let Some(b) = b {
            let bv = b.value();
            for r in 0..n {
                for (o, bb) in out[r * dout..(r + 1) * dout].iter_mut().zip(bv.data()) {
                    *o += bb;
                }
            }
            parents.push(b.id);
        }
        self.graph.op(
            Tensor::new(&[n, dout], out),
            Op::Linear { x: self.id, w: w.id, b: b.map(|b| b.id) },
            &parents,
        )
    }

    /// Zero-padded 2-D convolution, `x: [N, C, H, W]`, `w: [O, C, k, k]`.
    pub fn conv2d(&self, w: Var<'g>, b: Option<Var<'g>>, stride: usize, pad: usize) -> Var<'g> {
        let (xv, wv) = (self.value(), w.value());
        let geo = conv_geometry(&xv, &wv, stride, pad);
        let (n, o) = (xv.dim(0), wv.dim(0));
        let (rows, cols_n) = (geo.col_rows(), geo.col_cols());
        let in_sz = geo.channels * geo.height * geo.width;
        let mut cols = vec![0.0; rows * cols_n];
        let mut out = vec![0.0; n * o * cols_n];
        for s in 0..n {
            kernels::im2col(&xv.data()[s * in_sz..(s + 1) * in_sz], &geo, &mut cols);
            let dst = &mut out[s * o * cols_n..(s + 1) * o * cols_n];
            kernels::gemm(o, rows, cols_n, wv.data(), false, &cols, false, 0.0, dst);
        }
        let mut parents = vec![self.id, w.id];
        if let Some(b) = b {
            let bv = b.value();
            for s in 0..n {
                for c in 0..o {
                    let off = (s * o + c) * cols_n;
                    let bb = bv.data()[c];
                    out[off..off + cols_n].iter_mut().for_each(|v| *v += bb);
                }
            }
            parents.push(b.id);
        }
        let shape = [n, o, geo.out_height(), geo.out_width()];
        self.graph.op(
            Tensor::new(&shape, out),
            Op::Conv2d { x: self.id, w: w.id, b: b.map(|b| b.id), stride, pad },
            &parents,
        )
    }

    pub fn max_pool2d(&self, kernel: usize, stride: usize, pad: usize) -> Var<'g> {
        let xv = self.value();
        let (n, c, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        let geo = ConvGeometry { channels: c, height: h, width: w, kernel, stride, pad };
        let (ho, wo) = (geo.out_height(), geo.out_width());
        let (in_sz, out_sz) = (c * h * w, c * ho * wo);
        let mut out = vec![0.0; n * out_sz];
        let mut argmax = vec![0usize; n * out_sz];
        for s in 0..n {
            kernels::max_pool(
                &xv.data()[s * in_sz..(s + 1) * in_sz],
                &geo,
                &mut out[s * out_sz..(s + 1) * out_sz],
                &mut argmax[s * out_sz..(s + 1) * out_sz],
            );
            for a in &mut argmax[s * out_sz..(s + 1) * out_sz] {
                *a += s * in_sz;
            }
        }
        self.unary(Tensor::new(&[n, c, ho, wo], out), Op::MaxPool { x: self.id, argmax })
    }

    /// Nearest-neighbour upsampling by a factor of two.
    pub fn upsample2x(&self) -> Var<'g> {
        let xv = self.value();
        let (n, c, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        let mut out = vec![0.0; n * c * 4 * h * w];
        for p in 0..n * c {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    out[(p * 2 * h + y) * 2 * w + x] = xv.data()[(p * h + y / 2) * w + x / 2];
                }
            }
        }
        self.unary(Tensor::new(&[n, c, 2 * h, 2 * w], out), Op::Upsample2x(self.id))
    }

    /// Per-sample, per-channel normalisation without affine parameters.
    pub fn instance_norm(&self) -> Var<'g> {
        let xv = self.value();
        let planes = xv.dim(0) * xv.dim(1);
        let plane = xv.dim(2) * xv.dim(3);
        let mut out = vec![0.0; xv.len()];
        let stats = kernels::instance_norm(xv.data(), planes, plane, NORM_EPS, &mut out);
        self.unary(Tensor::new(xv.shape(), out), Op::InstanceNorm { x: self.id, stats })
    }

    /// `x * scale + shift` with per-(sample, channel) coefficients of shape `[N, C]`.
    pub fn channel_affine(&self, scale: Var<'g>, shift: Var<'g>) -> Var<'g> {
        let (xv, sv, bv) = (self.value(), scale.value(), shift.value());
        let planes = xv.dim(0) * xv.dim(1);
        assert_eq!(sv.shape(), &[xv.dim(0), xv.dim(1)], "channel_affine scale shape");
        assert_eq!(bv.shape(), sv.shape(), "channel_affine shift shape");
        let plane = xv.dim(2) * xv.dim(3);
        let mut out = vec![0.0; xv.len()];
        for p in 0..planes {
            let (s, b) = (sv.data()[p], bv.data()[p]);
            for k in p * plane..(p + 1) * plane {
                out[k] = xv.data()[k] * s + b;
            }
        }
        self.graph.op(
            Tensor::new(xv.shape(), out),
            Op::ChannelAffine { x: self.id, scale: scale.id, shift: shift.id },
            &[self.id, scale.id, shift.id],
        )
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&self) -> Var<'g> {
        let xv = self.value();
        let (n, c) = (xv.dim(0), xv.dim(1));
        let plane = xv.dim(2) * xv.dim(3);
        let out: Vec<f64> = (0..n * c)
            .map(|p| xv.data()[p * plane..(p + 1) * plane].iter().sum::<f64>() / plane as f64)
            .collect();
        self.unary(Tensor::new(&[n, c], out), Op::GlobalAvgPool(self.id))
    }

    /// Columns `[start, start + len)` of a 2-D value.
    pub fn narrow(&self, start: usize, len: usize) -> Var<'g> {
        let xv = self.value();
        assert_eq!(xv.shape().len(), 2);
        let (n, total) = (xv.dim(0), xv.dim(1));
        assert!(start + len <= total, "narrow out of range");
        let mut out = vec![0.0; n * len];
        for r in 0..n {
            out[r * len..(r + 1) * len].copy_from_slice(&xv.data()[r * total + start..r * total + start + len]);
        }
        self.unary(Tensor::new(&[n, len], out), Op::Narrow { x: self.id, start })
    }

    /// Row-wise log-softmax of a `[N, K]` value.
    pub fn log_softmax(&self) -> Var<'g> {
        let xv = self.value();
        assert_eq!(xv.shape().len(), 2);
        let (n, k) = (xv.dim(0), xv.dim(1));
        let mut out = vec![0.0; n * k];
        for r in 0..n {
            let row = &xv.data()[r * k..(r + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for c in 0..k {
                out[r * k + c] = row[c] - lse;
            }
        }
        self.unary(Tensor::new(&[n, k], out), Op::LogSoftmax(self.id))
    }

    /// One element by flat index, as a scalar.
    pub fn select(&self, index: usize) -> Var<'g> {
        let v = self.value().data()[index];
        self.unary(Tensor::scalar(v), Op::Select { x: self.id, index })
    }
}
