use std::cell::RefCell;
use std::sync::Arc;

use crate::kernels::{self, ConvShape};
use crate::tensor::Tensor;

type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Shift(NodeId),
    Exp(NodeId),
    Sqrt(NodeId),
    Square(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Clamp(NodeId, f64, f64),
    Sum(NodeId),
    Mean(NodeId),
    Reshape(NodeId),
    Concat1(Vec<NodeId>),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        pad: usize,
    },
    ConvT2 {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    AvgPool2(NodeId),
    GlobalAvgPool(NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    SoftmaxCe {
        logits: NodeId,
        targets: Arc<Vec<usize>>,
        ignore: Option<usize>,
        valid: usize,
    },
    GaussianKl {
        mq: NodeId,
        lvq: NodeId,
        mp: NodeId,
        lvp: NodeId,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation tape. Build a forward pass through [`Var`]
/// methods, then call [`Graph::backward`] once on a scalar output.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients of one backward pass, indexed by the leaf they belong to.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
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

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives gradients.
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf sharing storage with an existing tensor (no copy).
    pub fn leaf_shared(&self, value: Arc<Tensor>, requires_grad: bool) -> Var<'_> {
        self.push_shared(value, Op::Leaf, requires_grad)
    }

    fn value_of(&self, id: NodeId) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse-mode sweep from a single-element `output`.
    pub fn backward(&self, output: Var<'_>) -> Gradients {
        assert!(
            std::ptr::eq(output.graph, self),
            "backward on a foreign graph"
        );
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[output.id].value.len(),
            1,
            "backward needs a scalar output"
        );
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.id] = Some(Tensor::full(nodes[output.id].value.shape(), 1.0));

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut acc = |target: NodeId, t: Tensor| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            let val = |i: NodeId| -> &Tensor { &nodes[i].value };
            let req = |i: NodeId| nodes[i].requires_grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    if req(*a) {
                        acc(*a, g.clone());
                    }
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    if req(*b) {
                        acc(*b, g.map(|v| -v));
                    }
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    if req(*a) {
                        acc(*a, g.zip_map(val(*b), |gv, bv| gv * bv));
                    }
                    if req(*b) {
                        acc(*b, g.zip_map(val(*a), |gv, av| gv * av));
                    }
                }
                Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
                Op::Shift(a) => acc(*a, g),
                Op::Exp(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * y)),
                Op::Sqrt(a) => acc(*a, g.zip_map(&node.value, |gv, y| 0.5 * gv / y)),
                Op::Square(a) => acc(*a, g.zip_map(val(*a), |gv, x| 2.0 * gv * x)),
                Op::Relu(a) => acc(
                    *a,
                    g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
                ),
                Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))),
                Op::Clamp(a, lo, hi) => acc(
                    *a,
                    g.zip_map(val(*a), |gv, x| if x >= *lo && x <= *hi { gv } else { 0.0 }),
                ),
                Op::Sum(a) => {
                    let gv = g.item();
                    acc(*a, Tensor::full(val(*a).shape(), gv));
                }
                Op::Mean(a) => {
                    let n = val(*a).len() as f64;
                    acc(*a, Tensor::full(val(*a).shape(), g.item() / n));
                }
                Op::Reshape(a) => acc(*a, g.reshape(val(*a).shape())),
                Op::Concat1(parts) => {
                    let shape = node.value.shape();
                    let n = shape[0];
                    let total = node.value.len() / n;
                    let mut offset = 0;
                    for &p in parts {
                        let pv = val(p);
                        let width = pv.len() / n;
                        if req(p) {
                            let mut data = Vec::with_capacity(pv.len());
                            for b in 0..n {
                                data.extend_from_slice(
                                    &g.data()[b * total + offset..b * total + offset + width],
                                );
                            }
                            acc(p, Tensor::new(pv.shape(), data));
                        }
                        offset += width;
                    }
                }
                Op::Conv2d { x, w, b, pad } => {
                    let (xv, wv) = (val(*x), val(*w));
                    let s = conv_shape(xv, wv, *pad);
                    let (dx, dw, db) = kernels::conv2d_backward(
                        &s,
                        xv.data(),
                        wv.data(),
                        g.data(),
                        req(*x),
                        req(*w) || req(*b),
                    );
                    if let Some(dx) = dx {
                        acc(*x, Tensor::new(xv.shape(), dx));
                    }
                    if let Some(dw) = dw {
                        acc(*w, Tensor::new(wv.shape(), dw));
                    }
                    if let Some(db) = db {
                        acc(*b, Tensor::new(&[s.cout], db));
                    }
                }
                Op::ConvT2 { x, w, b } => {
                    let (xv, wv) = (val(*x), val(*w));
                    let sh = xv.shape();
                    let cout = wv.dim(1);
                    let (dx, dw, db) = kernels::conv_t2_backward(
                        sh[0],
                        sh[1],
                        cout,
                        sh[2],
                        sh[3],
                        xv.data(),
                        wv.data(),
                        g.data(),
                        req(*x),
                        req(*w) || req(*b),
                    );
                    if let Some(dx) = dx {
                        acc(*x, Tensor::new(sh, dx));
                    }
                    if let Some(dw) = dw {
                        acc(*w, Tensor::new(wv.shape(), dw));
                    }
                    if let Some(db) = db {
                        acc(*b, Tensor::new(&[cout], db));
                    }
                }
                Op::AvgPool2(a) => {
                    let sh = val(*a).shape();
                    let dx = kernels::avg_pool2_backward(sh[0], sh[1], sh[2], sh[3], g.data());
                    acc(*a, Tensor::new(sh, dx));
                }
                Op::GlobalAvgPool(a) => {
                    let sh = val(*a).shape();
                    let hw = sh[2] * sh[3];
                    let scale = 1.0 / hw as f64;
                    let mut dx = Vec::with_capacity(val(*a).len());
                    for &gv in g.data() {
                        dx.extend(std::iter::repeat_n(gv * scale, hw));
                    }
                    acc(*a, Tensor::new(sh, dx));
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (val(*x), val(*w));
                    let (n, fin) = (xv.dim(0), xv.dim(1));
                    let fout = wv.dim(0);
                    if req(*x) {
                        let mut dx = vec![0.0; n * fin];
                        kernels::gemm(
                            n,
                            fout,
                            fin,
                            g.data(),
                            (fout, 1),
                            wv.data(),
                            (fin, 1),
                            0.0,
                            &mut dx,
                            (fin, 1),
                        );
                        acc(*x, Tensor::new(xv.shape(), dx));
                    }
                    if req(*w) {
                        let mut dw = vec![0.0; fout * fin];
                        kernels::gemm(
                            fout,
                            n,
                            fin,
                            g.data(),
                            (1, fout),
                            xv.data(),
                            (fin, 1),
                            0.0,
                            &mut dw,
                            (fin, 1),
                        );
                        acc(*w, Tensor::new(wv.shape(), dw));
                    }
                    if req(*b) {
                        let mut db = vec![0.0; fout];
                        for row in g.data().chunks(fout) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        acc(*b, Tensor::new(&[fout], db));
                    }
                }
                Op::SoftmaxCe {
                    logits,
                    targets,
                    ignore,
                    valid,
                } => {
                    let lv = val(*logits);
                    let mut d = lv.softmax_axis1();
                    let (n, c) = (lv.dim(0), lv.dim(1));
                    let inner = lv.len() / (n * c);
                    let scale = if *valid == 0 {
                        0.0
                    } else {
                        g.item() / *valid as f64
                    };
                    let data = d.data_mut();
                    for b in 0..n {
                        for p in 0..inner {
                            let t = targets[b * inner + p];
                            let skip = Some(t) == *ignore;
                            for k in 0..c {
                                let idx = (b * c + k) * inner + p;
                                if skip {
                                    data[idx] = 0.0;
                                } else {
                                    let onehot = if k == t { 1.0 } else { 0.0 };
                                    data[idx] = (data[idx] - onehot) * scale;
                                }
                            }
                        }
                    }
                    acc(*logits, d);
                }
                Op::GaussianKl { mq, lvq, mp, lvp } => {
                    let gv = g.item();
                    let (mqv, lvqv, mpv, lvpv) = (val(*mq), val(*lvq), val(*mp), val(*lvp));
                    let len = mqv.len();
                    let mut d_mq = vec![0.0; len];
                    let mut d_lvq = vec![0.0; len];
                    let mut d_mp = vec![0.0; len];
                    let mut d_lvp = vec![0.0; len];
                    for i in 0..len {
                        let inv_p = (-lvpv.data()[i]).exp();
                        let vq = lvqv.data()[i].exp();
                        let diff = mqv.data()[i] - mpv.data()[i];
                        d_mq[i] = gv * diff * inv_p;
                        d_mp[i] = -d_mq[i];
                        d_lvq[i] = gv * 0.5 * (vq * inv_p - 1.0);
                        d_lvp[i] = gv * 0.5 * (1.0 - (vq + diff * diff) * inv_p);
                    }
                    acc(*mq, Tensor::new(mqv.shape(), d_mq));
                    acc(*lvq, Tensor::new(lvqv.shape(), d_lvq));
                    acc(*mp, Tensor::new(mpv.shape(), d_mp));
                    acc(*lvp, Tensor::new(lvpv.shape(), d_lvp));
                }
            }
        }

        // only leaves keep their gradient
        for (id, slot) in grads.iter_mut().enumerate() {
            if !matches!(nodes[id].op, Op::Leaf) {
                *slot = None;
            }
        }
        Gradients { grads }
    }
}

fn conv_shape(x: &Tensor, w: &Tensor, pad: usize) -> ConvShape {
    let xs = x.shape();
    let ws = w.shape();
    ConvShape {
        n: xs[0],
        cin: xs[1],
        cout: ws[0],
        h: xs[2],
        w: xs[3],
        k: ws[2],
        pad,
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.needs(self.id)
    }

    fn same_graph(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "mixing vars from different graphs"
        );
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'g> {
        let rg = self.requires_grad();
        self.graph.push(value, op, rg)
    }

    pub fn add(self, other: Var<'g>) -> Var<'g> {
        self.same_graph(&other);
        let v = self.value().zip_map(&other.value(), |a, b| a + b);
        let rg = self.requires_grad() || other.requires_grad();
        self.graph.push(v, Op::Add(self.id, other.id), rg)
    }

    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        self.same_graph(&other);
        let v = self.value().zip_map(&other.value(), |a, b| a - b);
        let rg = self.requires_grad() || other.requires_grad();
        self.graph.push(v, Op::Sub(self.id, other.id), rg)
    }

    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        self.same_graph(&other);
        let v = self.value().zip_map(&other.value(), |a, b| a * b);
        let rg = self.requires_grad() || other.requires_grad();
        self.graph.push(v, Op::Mul(self.id, other.id), rg)
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        let v = self.value().map(|a| a * c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn shift(self, c: f64) -> Var<'g> {
        let v = self.value().map(|a| a + c);
        self.unary(v, Op::Shift(self.id))
    }

    pub fn exp(self) -> Var<'g> {
        let v = self.value().map(f64::exp);
        self.unary(v, Op::Exp(self.id))
    }

    pub fn sqrt(self) -> Var<'g> {
        let v = self.value().map(f64::sqrt);
        self.unary(v, Op::Sqrt(self.id))
    }

    pub fn square(self) -> Var<'g> {
        let v = self.value().map(|a| a * a);
        self.unary(v, Op::Square(self.id))
    }

    pub fn relu(self) -> Var<'g> {
        let v = self.value().map(|a| a.max(0.0));
        self.unary(v, Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Var<'g> {
        let v = self.value().map(|a| 1.0 / (1.0 + (-a).exp()));
        self.unary(v, Op::Sigmoid(self.id))
    }

    /// Elementwise clamp; gradient is zero outside `[lo, hi]`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g> {
        let v = self.value().map(|a| a.clamp(lo, hi));
        self.unary(v, Op::Clamp(self.id, lo, hi))
    }

    pub fn sum(self) -> Var<'g> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'g> {
        let v = Tensor::scalar(self.value().mean());
        self.unary(v, Op::Mean(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let v = (*self.value()).clone().reshape(shape);
        self.unary(v, Op::Reshape(self.id))
    }

    /// Flattens everything after the leading axis.
    pub fn flatten(self) -> Var<'g> {
        let shape = self.shape();
        let rest: usize = shape[1..].iter().product();
        self.reshape(&[shape[0], rest])
    }

    /// Concatenates `[N, C_i, ...]` tensors along axis 1.
    pub fn concat(parts: &[Var<'g>]) -> Var<'g> {
        assert!(!parts.is_empty(), "concat of nothing");
        let graph = parts[0].graph;
        let values: Vec<Arc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let n = values[0].dim(0);
        let rest = values[0].shape()[2..].to_vec();
        let mut channels = 0;
        for (p, v) in parts.iter().zip(&values) {
            parts[0].same_graph(p);
            assert_eq!(v.dim(0), n, "concat batch mismatch");
            assert_eq!(&v.shape()[2..], &rest[..], "concat trailing shape mismatch");
            channels += v.dim(1);
        }
        let mut data = Vec::with_capacity(values.iter().map(|v| v.len()).sum());
        for b in 0..n {
            for v in &values {
                let width = v.len() / n;
                data.extend_from_slice(&v.data()[b * width..(b + 1) * width]);
            }
        }
        let mut shape = vec![n, channels];
        shape.extend_from_slice(&rest);
        let rg = parts.iter().any(|p| p.requires_grad());
        graph.push(
            Tensor::new(&shape, data),
            Op::Concat1(parts.iter().map(|p| p.id).collect()),
            rg,
        )
    }

    /// Stride-1 convolution of `[N, Cin, H, W]` with `weight: [Cout, Cin, k, k]`.
    pub fn conv2d(self, weight: Var<'g>, bias: Var<'g>, pad: usize) -> Var<'g> {
        self.same_graph(&weight);
        self.same_graph(&bias);
        let (xv, wv, bv) = (self.value(), weight.value(), bias.value());
        assert_eq!(xv.rank(), 4, "conv2d input must be NCHW");
        assert_eq!(wv.rank(), 4, "conv2d weight must be [Cout, Cin, k, k]");
        assert_eq!(xv.dim(1), wv.dim(1), "conv2d channel mismatch");
        assert_eq!(wv.dim(2), wv.dim(3), "conv2d kernel must be square");
        assert_eq!(
            wv.dim(2),
            2 * pad + 1,
            "conv2d keeps spatial size: k = 2·pad + 1"
        );
        assert_eq!(bv.len(), wv.dim(0), "conv2d bias size");
        let s = conv_shape(&xv, &wv, pad);
        let out = kernels::conv2d_forward(&s, xv.data(), wv.data(), bv.data());
        let rg = self.requires_grad() || weight.requires_grad() || bias.requires_grad();
        self.graph.push(
            Tensor::new(&[s.n, s.cout, s.h, s.w], out),
            Op::Conv2d {
                x: self.id,
                w: weight.id,
                b: bias.id,
                pad,
            },
            rg,
        )
    }

    /// 2×2 stride-2 transposed convolution, `weight: [Cin, Cout, 2, 2]`.
    pub fn conv_transpose2x2(self, weight: Var<'g>, bias: Var<'g>) -> Var<'g> {
        self.same_graph(&weight);
        self.same_graph(&bias);
        let (xv, wv, bv) = (self.value(), weight.value(), bias.value());
        assert_eq!(xv.rank(), 4, "conv_transpose2x2 input must be NCHW");
        assert_eq!(
            wv.shape()[2..],
            [2, 2],
            "conv_transpose2x2 kernel must be 2×2"
        );
        assert_eq!(xv.dim(1), wv.dim(0), "conv_transpose2x2 channel mismatch");
        let (n, cin, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        let cout = wv.dim(1);
        assert_eq!(bv.len(), cout, "conv_transpose2x2 bias size");
        let out = kernels::conv_t2_forward(n, cin, cout, h, w, xv.data(), wv.data(), bv.data());
        let rg = self.requires_grad() || weight.requires_grad() || bias.requires_grad();
        self.graph.push(
            Tensor::new(&[n, cout, 2 * h, 2 * w], out),
            Op::ConvT2 {
                x: self.id,
                w: weight.id,
                b: bias.id,
            },
            rg,
        )
    }

    pub fn avg_pool2(self) -> Var<'g> {
        let xv = self.value();
        assert_eq!(xv.rank(), 4, "avg_pool2 input must be NCHW");
        let (n, c, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        assert!(
            h % 2 == 0 && w % 2 == 0,
            "avg_pool2 needs even spatial size, got {h}×{w}"
        );
        let out = kernels::avg_pool2_forward(n, c, h, w, xv.data());
        self.unary(
            Tensor::new(&[n, c, h / 2, w / 2], out),
            Op::AvgPool2(self.id),
        )
    }

    /// `[N, C, H, W]` → `[N, C]` spatial mean.
    pub fn global_avg_pool(self) -> Var<'g> {
        let xv = self.value();
        assert_eq!(xv.rank(), 4, "global_avg_pool input must be NCHW");
        let (n, c) = (xv.dim(0), xv.dim(1));
        let hw = xv.dim(2) * xv.dim(3);
        let out: Vec<f64> = xv
            .data()
            .chunks(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        self.unary(Tensor::new(&[n, c], out), Op::GlobalAvgPool(self.id))
    }

    /// `x · weightᵀ + bias` with `x: [N, in]`, `weight: [out, in]`.
    pub fn linear(self, weight: Var<'g>, bias: Var<'g>) -> Var<'g> {
        self.same_graph(&weight);
        self.same_graph(&bias);
        let (xv, wv, bv) = (self.value(), weight.value(), bias.value());
        assert_eq!(xv.rank(), 2, "linear input must be [N, in]");
        assert_eq!(xv.dim(1), wv.dim(1), "linear input width mismatch");
        assert_eq!(bv.len(), wv.dim(0), "linear bias size");
        let (n, fin, fout) = (xv.dim(0), xv.dim(1), wv.dim(0));
        let out = kernels::linear_forward(n, fin, fout, xv.data(), wv.data(), bv.data());
        let rg = self.requires_grad() || weight.requires_grad() || bias.requires_grad();
        self.graph.push(
            Tensor::new(&[n, fout], out),
            Op::Linear {
                x: self.id,
                w: weight.id,
                b: bias.id,
            },
            rg,
        )
    }

    /// Mean cross-entropy of softmax over axis 1 against integer targets
    /// (one per `[N, ...]` position). Positions labelled `ignore` contribute
    /// nothing and are excluded from the mean.
    pub fn softmax_cross_entropy(self, targets: Arc<Vec<usize>>, ignore: Option<usize>) -> Var<'g> {
        let lv = self.value();
        assert!(lv.rank() >= 2, "cross-entropy logits need a class axis");
        let (n, c) = (lv.dim(0), lv.dim(1));
        let inner = lv.len() / (n * c);
        assert_eq!(targets.len(), n * inner, "cross-entropy target count");
        let mut total = 0.0;
        let mut valid = 0usize;
        for b in 0..n {
            for p in 0..inner {
                let t = targets[b * inner + p];
                if Some(t) == ignore {
                    continue;
                }
                assert!(t < c, "target class {t} out of range {c}");
                let mut m = f64::NEG_INFINITY;
                for k in 0..c {
                    m = m.max(lv.data()[(b * c + k) * inner + p]);
                }
                let mut s = 0.0;
                for k in 0..c {
                    s += (lv.data()[(b * c + k) * inner + p] - m).exp();
                }
                total += m + s.ln() - lv.data()[(b * c + t) * inner + p];
                valid += 1;
            }
        }
        let loss = if valid == 0 {
            0.0
        } else {
            total / valid as f64
        };
        self.unary(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits: self.id,
                targets,
                ignore,
                valid,
            },
        )
    }

    /// Summed closed-form `KL(q ‖ p)` between diagonal Gaussians given by
    /// means and log-variances.
    pub fn gaussian_kl(
        mean_q: Var<'g>,
        logvar_q: Var<'g>,
        mean_p: Var<'g>,
        logvar_p: Var<'g>,
    ) -> Var<'g> {
        for v in [&logvar_q, &mean_p, &logvar_p] {
            mean_q.same_graph(v);
        }
        let (mq, lvq, mp, lvp) = (
            mean_q.value(),
            logvar_q.value(),
            mean_p.value(),
            logvar_p.value(),
        );
        assert!(
            mq.shape() == lvq.shape() && mq.shape() == mp.shape() && mq.shape() == lvp.shape(),
            "gaussian_kl shape mismatch"
        );
        let kl = crate::gaussian_kl_sum(mq.data(), lvq.data(), mp.data(), lvp.data());
        let rg = [mean_q, logvar_q, mean_p, logvar_p]
            .iter()
            .any(|v| v.requires_grad());
        mean_q.graph.push(
            Tensor::scalar(kl),
            Op::GaussianKl {
                mq: mean_q.id,
                lvq: logvar_q.id,
                mp: mean_p.id,
                lvp: logvar_p.id,
            },
            rg,
        )
    }
}
