//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and fills
//! the gradient buffer of every node that depends on a `requires_grad` leaf.
//!
//! The op set is deliberately small: elementwise arithmetic, a handful of
//! reductions, a sparse linear gather (used for interpolated sampling and
//! pixel-pair differences) and the image ops the segmentation network needs
//! (3x3/1x1 convolution, 2x2 max pooling, nearest upsampling, channel
//! concatenation).

mod conv;
pub mod gradcheck;

use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub use conv::{conv2d_reference, gemm};

/// Dense value + gradient pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {numel} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            grad: vec![0.0; numel],
            shape,
            values,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; numel],
            grad: vec![0.0; numel],
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            values: vec![value],
            grad: vec![0.0],
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Compressed sparse rows: `out[i] = sum_j w_ij * x[j]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseRows {
    pub fn new() -> Self {
        Self {
            offsets: vec![0],
            cols: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (col, w) in entries {
            self.cols.push(col);
            self.weights.push(w);
        }
        self.offsets.push(self.cols.len());
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[i]..self.offsets[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    fn max_col(&self) -> Option<usize> {
        self.cols.iter().copied().max()
    }
}

/// Contiguous segment partition of a flat vector; `bounds` has `n + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Segments {
    bounds: Vec<usize>,
}

impl Segments {
    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut bounds = vec![0];
        for len in lengths {
            bounds.push(bounds.last().unwrap() + len);
        }
        Self { bounds }
    }

    pub fn len(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total(&self) -> usize {
        *self.bounds.last().unwrap()
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.bounds[i]..self.bounds[i + 1]
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, f64),
    MulConst(Var, Rc<Vec<f64>>),
    AddConst(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    SegmentSum(Var, Rc<Segments>),
    Gather(Var, Rc<SparseRows>),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        cols: Vec<f64>,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    Concat(Var, Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Recording tape. Nodes are append-only; a new graph is built per forward pass.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> &Node {
        assert_eq!(v.graph, self.id, "variable belongs to a different graph");
        &self.nodes[v.index]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let index = self.nodes.len();
        self.nodes.push(Node {
            shape,
            value,
            grad: Vec::new(),
            requires_grad,
            op,
        });
        Var { graph: self.id, index }
    }

    /// Registers a tensor as a leaf; its `requires_grad` flag is kept.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push(
            tensor.shape.clone(),
            tensor.values.clone(),
            Op::Leaf,
            tensor.requires_grad,
        )
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Var {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        self.push(shape, values, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let node = self.node(v);
        assert_eq!(node.value.len(), 1, "not a scalar");
        node.value[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Gradient accumulated by the last backward pass; zeros if the node was
    /// not reached.
    pub fn grad(&self, v: Var) -> Vec<f64> {
        let node = self.node(v);
        if node.grad.is_empty() {
            vec![0.0; node.value.len()]
        } else {
            node.grad.clone()
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let node = self.node(x);
        let shape = node.shape.clone();
        let value = node.value.iter().map(|&a| f(a)).collect();
        let rg = node.requires_grad;
        self.push(shape, value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (na, nb) = (self.node(a), self.node(b));
        assert_eq!(na.value.len(), nb.value.len(), "elementwise operands differ in length");
        let value = na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect();
        let shape = na.shape.clone();
        let rg = na.requires_grad || nb.requires_grad;
        self.push(shape, value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// `scale * x + offset`
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Var {
        self.unary(x, Op::Affine(x, scale), |a| scale * a + offset)
    }

    pub fn mul_const(&mut self, x: Var, c: Rc<Vec<f64>>) -> Var {
        let node = self.node(x);
        assert_eq!(node.value.len(), c.len());
        let value = node.value.iter().zip(c.iter()).map(|(a, b)| a * b).collect();
        let (shape, rg) = (node.shape.clone(), node.requires_grad);
        self.push(shape, value, Op::MulConst(x, c), rg)
    }

    pub fn add_const(&mut self, x: Var, c: &[f64]) -> Var {
        let node = self.node(x);
        assert_eq!(node.value.len(), c.len());
        let value = node.value.iter().zip(c).map(|(a, b)| a + b).collect();
        let (shape, rg) = (node.shape.clone(), node.requires_grad);
        self.push(shape, value, Op::AddConst(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |a| a * a)
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        self.unary(x, Op::Powf(x, p), |a| a.powf(p))
    }

    /// Clamp into `[lo, hi]`; gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |a| a.clamp(lo, hi))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |a| a.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let node = self.node(x);
        let total = node.value.iter().sum();
        let rg = node.requires_grad;
        self.push(vec![], vec![total], Op::Sum(x), rg)
    }

    pub fn segment_sum(&mut self, x: Var, segments: Rc<Segments>) -> Var {
        let node = self.node(x);
        assert_eq!(node.value.len(), segments.total());
        let value = (0..segments.len())
            .map(|i| node.value[segments.range(i)].iter().sum())
            .collect();
        let rg = node.requires_grad;
        self.push(vec![segments.len()], value, Op::SegmentSum(x, segments), rg)
    }

    /// Sparse linear map into a flat vector of `rows.n_rows()` entries.
    pub fn gather(&mut self, x: Var, rows: Rc<SparseRows>) -> Var {
        let node = self.node(x);
        if let Some(max) = rows.max_col() {
            assert!(max < node.value.len(), "gather index {max} out of range");
        }
        let value = (0..rows.n_rows())
            .map(|i| rows.row(i).map(|(j, w)| w * node.value[j]).sum())
            .collect();
        let rg = node.requires_grad;
        self.push(vec![rows.n_rows()], value, Op::Gather(x, rows), rg)
    }

    /// Same-padded stride-1 convolution. `input` is `[N, Cin, H, W]`,
    /// `weight` is `[Cout, Cin, K, K]` with odd `K`, `bias` is `[Cout]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Var {
        let (xs, ws) = (self.node(input).shape.clone(), self.node(weight).shape.clone());
        assert_eq!(xs.len(), 4, "conv input must be NCHW");
        assert_eq!(ws.len(), 4, "conv weight must be [Cout, Cin, K, K]");
        assert_eq!(xs[1], ws[1], "conv channel mismatch");
        assert_eq!(ws[2], ws[3]);
        assert_eq!(ws[2] % 2, 1, "conv kernel must be odd");
        if let Some(b) = bias {
            assert_eq!(self.node(b).value.len(), ws[0]);
        }
        let geo = conv::ConvGeometry {
            batch: xs[0],
            in_channels: xs[1],
            height: xs[2],
            width: xs[3],
            out_channels: ws[0],
            kernel: ws[2],
        };
        let (value, cols) = conv::forward(
            &geo,
            &self.node(input).value,
            &self.node(weight).value,
            bias.map(|b| self.node(b).value.as_slice()),
        );
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        self.push(
            vec![geo.batch, geo.out_channels, geo.height, geo.width],
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                cols,
            },
            rg,
        )
    }

    /// 2x2 max pooling with stride 2 on NCHW; odd trailing rows/cols dropped.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let node = self.node(x);
        let s = &node.shape;
        assert_eq!(s.len(), 4);
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let mut value = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if node.value[idx] > node.value[best] {
                            best = idx;
                        }
                    }
                    value.push(node.value[best]);
                    argmax.push(best);
                }
            }
        }
        let shape = vec![s[0], s[1], oh, ow];
        let rg = node.requires_grad;
        self.push(shape, value, Op::MaxPool2 { input: x, argmax }, rg)
    }

    /// Nearest-neighbour 2x upsampling on NCHW.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let node = self.node(x);
        let s = &node.shape;
        assert_eq!(s.len(), 4);
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (2 * h, 2 * w);
        let mut value = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            for y in 0..oh {
                let src = &node.value[p * h * w + (y / 2) * w..][..w];
                let dst = &mut value[p * oh * ow + y * ow..][..ow];
                for (x2, d) in dst.iter_mut().enumerate() {
                    *d = src[x2 / 2];
                }
            }
        }
        let shape = vec![s[0], s[1], oh, ow];
        let rg = node.requires_grad;
        self.push(shape, value, Op::Upsample2(x), rg)
    }

    /// Concatenate two NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (na, nb) = (self.node(a), self.node(b));
        let (sa, sb) = (&na.shape, &nb.shape);
        assert_eq!(sa.len(), 4);
        assert!(
            sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3],
            "concat shape mismatch"
        );
        let plane = sa[2] * sa[3];
        let (ca, cb) = (sa[1] * plane, sb[1] * plane);
        let mut value = Vec::with_capacity(na.value.len() + nb.value.len());
        for n in 0..sa[0] {
            value.extend_from_slice(&na.value[n * ca..(n + 1) * ca]);
            value.extend_from_slice(&nb.value[n * cb..(n + 1) * cb]);
        }
        let shape = vec![sa[0], sa[1] + sb[1], sa[2], sa[3]];
        let rg = na.requires_grad || nb.requires_grad;
        self.push(shape, value, Op::Concat(a, b), rg)
    }

    /// Reverse pass from a scalar node. Gradients of earlier passes are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.graph != self.id || loss.index >= self.nodes.len() {
            return Err(Error::Usage(
                "backward called on a variable that was not recorded by this graph".into(),
            ));
        }
        if self.nodes[loss.index].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.index].shape
            )));
        }
        for node in &mut self.nodes {
            node.grad.clear();
        }
        self.nodes[loss.index].grad = vec![1.0];
        for i in (0..=loss.index).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_empty() {
                continue;
            }
            let grad = std::mem::take(&mut self.nodes[i].grad);
            self.propagate(i, &grad);
            self.nodes[i].grad = grad;
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        let node = &mut self.nodes[v.index];
        if !node.requires_grad {
            return None;
        }
        if node.grad.is_empty() {
            node.grad = vec![0.0; node.value.len()];
        }
        Some(&mut node.grad)
    }

    fn acc_elementwise(&mut self, v: Var, g: &[f64], f: impl Fn(usize, f64) -> f64) {
        if let Some(dst) = self.acc(v) {
            for (i, (d, &gi)) in dst.iter_mut().zip(g).enumerate() {
                *d += f(i, gi);
            }
        }
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Borrow juggling: the op is swapped out while parents are updated.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::AddConst(x) => self.acc_elementwise(*x, g, |_, gi| gi),
            Op::Add(a, b) => {
                self.acc_elementwise(*a, g, |_, gi| gi);
                self.acc_elementwise(*b, g, |_, gi| gi);
            }
            Op::Sub(a, b) => {
                self.acc_elementwise(*a, g, |_, gi| gi);
                self.acc_elementwise(*b, g, |_, gi| -gi);
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.index].value.clone();
                let bv = self.nodes[b.index].value.clone();
                self.acc_elementwise(*a, g, |k, gi| gi * bv[k]);
                self.acc_elementwise(*b, g, |k, gi| gi * av[k]);
            }
            Op::Div(a, b) => {
                let av = self.nodes[a.index].value.clone();
                let bv = self.nodes[b.index].value.clone();
                self.acc_elementwise(*a, g, |k, gi| gi / bv[k]);
                self.acc_elementwise(*b, g, |k, gi| -gi * av[k] / (bv[k] * bv[k]));
            }
            Op::Affine(x, s) => self.acc_elementwise(*x, g, |_, gi| gi * s),
            Op::MulConst(x, c) => self.acc_elementwise(*x, g, |k, gi| gi * c[k]),
            Op::Exp(x) => {
                let y = std::mem::take(&mut self.nodes[i].value);
                self.acc_elementwise(*x, g, |k, gi| gi * y[k]);
                self.nodes[i].value = y;
            }
            Op::Log(x) => {
                let xv = self.nodes[x.index].value.clone();
                self.acc_elementwise(*x, g, |k, gi| gi / xv[k]);
            }
            Op::Square(x) => {
                let xv = self.nodes[x.index].value.clone();
                self.acc_elementwise(*x, g, |k, gi| 2.0 * gi * xv[k]);
            }
            Op::Powf(x, p) => {
                let xv = self.nodes[x.index].value.clone();
                let p = *p;
                self.acc_elementwise(*x, g, |k, gi| if p == 0.0 { 0.0 } else { gi * p * xv[k].powf(p - 1.0) });
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.nodes[x.index].value.clone();
                let (lo, hi) = (*lo, *hi);
                self.acc_elementwise(*x, g, |k, gi| if xv[k] < lo || xv[k] > hi { 0.0 } else { gi });
            }
            Op::Relu(x) => {
                let xv = self.nodes[x.index].value.clone();
                self.acc_elementwise(*x, g, |k, gi| if xv[k] > 0.0 { gi } else { 0.0 });
            }
            Op::Sigmoid(x) => {
                let y = std::mem::take(&mut self.nodes[i].value);
                self.acc_elementwise(*x, g, |k, gi| gi * y[k] * (1.0 - y[k]));
                self.nodes[i].value = y;
            }
            Op::Sum(x) => {
                if let Some(dst) = self.acc(*x) {
                    dst.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::SegmentSum(x, segments) => {
                if let Some(dst) = self.acc(*x) {
                    for (s, &gs) in g.iter().enumerate() {
                        for d in &mut dst[segments.range(s)] {
                            *d += gs;
                        }
                    }
                }
            }
            Op::Gather(x, rows) => {
                if let Some(dst) = self.acc(*x) {
                    for (r, &gr) in g.iter().enumerate() {
                        for (j, w) in rows.row(r) {
                            dst[j] += w * gr;
                        }
                    }
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                cols,
            } => {
                let xs = self.nodes[input.index].shape.clone();
                let ws = self.nodes[weight.index].shape.clone();
                let geo = conv::ConvGeometry {
                    batch: xs[0],
                    in_channels: xs[1],
                    height: xs[2],
                    width: xs[3],
                    out_channels: ws[0],
                    kernel: ws[2],
                };
                if let Some(b) = bias {
                    if let Some(db) = self.acc(*b) {
                        conv::backward_bias(&geo, g, db);
                    }
                }
                if self.nodes[weight.index].requires_grad {
                    if geo.kernel == 1 {
                        let xv = std::mem::take(&mut self.nodes[input.index].value);
                        let dw = self.acc(*weight).unwrap();
                        conv::backward_weight(&geo, g, &xv, dw);
                        self.nodes[input.index].value = xv;
                    } else {
                        let dw = self.acc(*weight).unwrap();
                        conv::backward_weight(&geo, g, cols, dw);
                    }
                }
                if self.nodes[input.index].requires_grad {
                    let wv = std::mem::take(&mut self.nodes[weight.index].value);
                    let dx = self.acc(*input).unwrap();
                    conv::backward_input(&geo, g, &wv, dx);
                    self.nodes[weight.index].value = wv;
                }
            }
            Op::MaxPool2 { input, argmax } => {
                if let Some(dst) = self.acc(*input) {
                    for (&idx, &gi) in argmax.iter().zip(g) {
                        dst[idx] += gi;
                    }
                }
            }
            Op::Upsample2(x) => {
                let s = self.nodes[x.index].shape.clone();
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                let ow = 2 * w;
                if let Some(dst) = self.acc(*x) {
                    for p in 0..planes {
                        for y in 0..2 * h {
                            for x2 in 0..ow {
                                dst[p * h * w + (y / 2) * w + x2 / 2] += g[p * 4 * h * w + y * ow + x2];
                            }
                        }
                    }
                }
            }
            Op::Concat(a, b) => {
                let sa = self.nodes[a.index].shape.clone();
                let sb = self.nodes[b.index].shape.clone();
                let plane = sa[2] * sa[3];
                let (ca, cb) = (sa[1] * plane, sb[1] * plane);
                if let Some(dst) = self.acc(*a) {
                    for n in 0..sa[0] {
                        for (d, &gi) in dst[n * ca..(n + 1) * ca]
                            .iter_mut()
                            .zip(&g[n * (ca + cb)..n * (ca + cb) + ca])
                        {
                            *d += gi;
                        }
                    }
                }
                if let Some(dst) = self.acc(*b) {
                    for n in 0..sa[0] {
                        for (d, &gi) in dst[n * cb..(n + 1) * cb]
                            .iter_mut()
                            .zip(&g[n * (ca + cb) + ca..(n + 1) * (ca + cb)])
                        {
                            *d += gi;
                        }
                    }
                }
            }
        }
        self.nodes[i].op = op;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
