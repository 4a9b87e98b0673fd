//! Reverse-mode differentiation over a recorded computation.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its value. [`Graph::backward`] walks the nodes in reverse, accumulating
//! adjoints, and returns the gradients of every parameter leaf that was
//! touched. Values are matrices in the sense of [`Tensor::rows_cols`]; batched
//! activations are `[batch × features]`.

use std::collections::HashMap;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm_nn, gemm_nt, gemm_tn, softmax_into, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    SoftmaxRows(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    SumAll(NodeId),
    Conv1d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        in_maps: usize,
        in_len: usize,
        width: usize,
    },
    MaxPool {
        input: NodeId,
        argmax: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
}

pub struct Graph<'s, T> {
    store: Option<&'s ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    /// A graph with no parameter store; only constants can enter it.
    pub fn detached() -> Self {
        Self {
            store: None,
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

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.push(value, Op::Leaf, "constant")
    }

    /// Leaf node for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let store = self
            .store
            .expect("parameter requested from a detached graph");
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Leaf,
        });
        let node = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, node);
        node
    }

    fn rc(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.rows_cols()
    }

    fn shape_err(&self, op: &'static str, a: NodeId, b: NodeId) -> Error {
        Error::Shape {
            op,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, s) = self.rc(a);
        let (s2, c) = self.rc(b);
        if s != s2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![T::zero(); r * c];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, r, s, c);
        self.push(Tensor::matrix(r, c, out)?, Op::MatMul(a, b), "matmul")
    }

    /// `a · bᵀ`: applies a weight matrix stored as `[out × in]` to row inputs.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, s) = self.rc(a);
        let (c, s2) = self.rc(b);
        if s != s2 {
            return Err(self.shape_err("matmul_nt", a, b));
        }
        let mut out = vec![T::zero(); r * c];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, r, s, c);
        self.push(Tensor::matrix(r, c, out)?, Op::MatMulNt(a, b), "matmul_nt")
    }

    fn zip_same(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        op: Op,
        f: impl Fn(T, T) -> T,
    ) -> Result<NodeId> {
        if self.rc(a) != self.rc(b) {
            return Err(self.shape_err(name, a, b));
        }
        let (r, c) = self.rc(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(Tensor::matrix(r, c, data)?, op, name)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a `[1 × c]` row (or length-`c` vector) to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (r, c) = self.rc(a);
        if self.value(row).len() != c {
            return Err(self.shape_err("add_row", a, row));
        }
        let rv = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, &b) in chunk.iter_mut().zip(rv) {
                *x = *x + b;
            }
        }
        self.push(Tensor::matrix(r, c, data)?, Op::AddRow(a, row), "add_row")
    }

    /// Scales each row of `a` by the matching entry of the `[r × 1]` column.
    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> Result<NodeId> {
        let (r, c) = self.rc(a);
        if self.value(col).len() != r {
            return Err(self.shape_err("mul_col", a, col));
        }
        let cv = self.value(col).data();
        let mut data = self.value(a).data().to_vec();
        for (chunk, &s) in data.chunks_mut(c).zip(cv) {
            for x in chunk {
                *x = *x * s;
            }
        }
        self.push(Tensor::matrix(r, c, data)?, Op::MulCol(a, col), "mul_col")
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let f = T::from_f64(factor);
        let (r, c) = self.rc(a);
        let data = self.value(a).data().iter().map(|&x| x * f).collect();
        self.push(Tensor::matrix(r, c, data)?, Op::Scale(a, factor), "scale")
    }

    fn unary(&mut self, a: NodeId, op: Op, name: &'static str, f: impl Fn(T) -> T) -> Result<NodeId> {
        let (r, c) = self.rc(a);
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        self.push(Tensor::matrix(r, c, data)?, op, name)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Tanh(a), "tanh", |x| x.tanh_fn())
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Relu(a), "relu", |x| x.max(T::zero()))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.rc(a);
        let mut data = vec![T::zero(); r * c];
        for (src, dst) in self.value(a).data().chunks(c).zip(data.chunks_mut(c)) {
            softmax_into(src, dst);
        }
        self.push(Tensor::matrix(r, c, data)?, Op::SoftmaxRows(a), "softmax")
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::Empty { op: "concat_cols" });
        };
        let rows = self.rc(first).0;
        let mut total = 0;
        for &p in parts {
            if self.rc(p).0 != rows {
                return Err(self.shape_err("concat_cols", first, p));
            }
            total += self.rc(p).1;
        }
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(
            Tensor::matrix(rows, total, data)?,
            Op::ConcatCols(parts.to_vec()),
            "concat_cols",
        )
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.rc(a);
        if len == 0 || start + len > c {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: self.value(a).shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&self.value(a).row(i)[start..start + len]);
        }
        self.push(Tensor::matrix(r, len, data)?, Op::SliceCols(a, start), "slice_cols")
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.rc(a);
        if len == 0 || start + len > r {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: self.value(a).shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        self.push(Tensor::matrix(len, c, data)?, Op::SliceRows(a, start), "slice_rows")
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let total = self.value(a).data().iter().fold(T::zero(), |s, &x| s + x);
        self.push(Tensor::matrix(1, 1, vec![total])?, Op::SumAll(a), "sum_all")
    }

    /// Valid stride-1 convolution along the component axis, without activation.
    ///
    /// `input` is `[batch × in_maps·in_len]` with each map contiguous,
    /// `kernel` is `[maps × in_maps × width]`, `bias` has `maps` entries. The
    /// result is `[batch × maps·(in_len − width + 1)]`.
    pub fn conv1d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        in_maps: usize,
        in_len: usize,
    ) -> Result<NodeId> {
        let kshape = self.value(kernel).shape().to_vec();
        let (batch, cols) = self.rc(input);
        if kshape.len() != 3 || kshape[1] != in_maps || cols != in_maps * in_len {
            return Err(self.shape_err("conv1d", input, kernel));
        }
        let (maps, width) = (kshape[0], kshape[2]);
        if self.value(bias).len() != maps {
            return Err(self.shape_err("conv1d", kernel, bias));
        }
        if in_len < width {
            return Err(Error::KernelTooWide { len: in_len, width });
        }
        let out_len = in_len - width + 1;
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let bv = self.value(bias).data();
        let mut out = vec![T::zero(); batch * maps * out_len];
        for b in 0..batch {
            let xrow = &x[b * cols..(b + 1) * cols];
            let orow = &mut out[b * maps * out_len..(b + 1) * maps * out_len];
            for f in 0..maps {
                for i in 0..out_len {
                    let mut acc = bv[f];
                    for p in 0..in_maps {
                        let kk = &k[(f * in_maps + p) * width..(f * in_maps + p + 1) * width];
                        let xs = &xrow[p * in_len + i..p * in_len + i + width];
                        for (&kv, &xv) in kk.iter().zip(xs) {
                            acc = acc + kv * xv;
                        }
                    }
                    orow[f * out_len + i] = acc;
                }
            }
        }
        self.push(
            Tensor::matrix(batch, maps * out_len, out)?,
            Op::Conv1d {
                input,
                kernel,
                bias,
                in_maps,
                in_len,
                width,
            },
            "conv1d",
        )
    }

    /// Non-overlapping max pooling of width `width` over each map; the last
    /// window is truncated when `width` does not divide `len`.
    pub fn max_pool(&mut self, input: NodeId, maps: usize, len: usize, width: usize) -> Result<NodeId> {
        if width < 1 {
            return Err(Error::PoolWidth(width));
        }
        let (batch, cols) = self.rc(input);
        if len == 0 || cols != maps * len {
            return Err(Error::Shape {
                op: "max_pool",
                lhs: self.value(input).shape().to_vec(),
                rhs: vec![maps, len],
            });
        }
        let out_len = len.div_ceil(width);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(batch * maps * out_len);
        let mut argmax = Vec::with_capacity(batch * maps * out_len);
        for b in 0..batch {
            for f in 0..maps {
                let base = b * cols + f * len;
                for k in 0..out_len {
                    let lo = base + k * width;
                    let hi = base + ((k + 1) * width).min(len);
                    let mut best = lo;
                    for idx in lo + 1..hi {
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        self.push(
            Tensor::matrix(batch, maps * out_len, out)?,
            Op::MaxPool { input, argmax },
            "max_pool",
        )
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    pub fn backward_all(&self, loss: NodeId) -> Result<Vec<Option<Tensor<T>>>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }

        Ok(grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|d| Tensor::new(n.value.shape().to_vec(), d).expect("same shape")))
            .collect())
    }

    /// Gradients of `loss` with respect to every parameter used in the graph.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let mut all = self.backward_all(loss)?;
        let mut entries: Vec<(ParamId, Tensor<T>)> = self
            .param_nodes
            .iter()
            .map(|(&pid, &node)| {
                let g = all[node.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.value(node).shape()));
                (pid, g)
            })
            .collect();
        entries.sort_by_key(|(p, _)| *p);
        Ok(Gradients { entries })
    }

    fn propagate(&self, node: &Node<T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (r, s) = self.rc(*a);
                let c = self.rc(*b).1;
                let ga = acc_buf(grads, *a, r * s);
                gemm_nt(dy, self.value(*b).data(), ga, r, c, s);
                let gb = acc_buf(grads, *b, s * c);
                gemm_tn(self.value(*a).data(), dy, gb, s, r, c);
            }
            Op::MatMulNt(a, b) => {
                let (r, s) = self.rc(*a);
                let c = self.rc(*b).0;
                let ga = acc_buf(grads, *a, r * s);
                gemm_nn(dy, self.value(*b).data(), ga, r, c, s);
                let gb = acc_buf(grads, *b, c * s);
                gemm_tn(dy, self.value(*a).data(), gb, c, r, s);
            }
            Op::Add(a, b) => {
                add_into(acc_buf(grads, *a, dy.len()), dy);
                add_into(acc_buf(grads, *b, dy.len()), dy);
            }
            Op::Sub(a, b) => {
                add_into(acc_buf(grads, *a, dy.len()), dy);
                let gb = acc_buf(grads, *b, dy.len());
                for (g, &d) in gb.iter_mut().zip(dy) {
                    *g = *g - d;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let ga = acc_buf(grads, *a, dy.len());
                for ((g, &d), &x) in ga.iter_mut().zip(dy).zip(bv) {
                    *g = *g + d * x;
                }
                let gb = acc_buf(grads, *b, dy.len());
                for ((g, &d), &x) in gb.iter_mut().zip(dy).zip(av) {
                    *g = *g + d * x;
                }
            }
            Op::AddRow(a, row) => {
                add_into(acc_buf(grads, *a, dy.len()), dy);
                let c = self.value(*row).len();
                let gr = acc_buf(grads, *row, c);
                for chunk in dy.chunks(c) {
                    add_into(gr, chunk);
                }
            }
            Op::MulCol(a, col) => {
                let (r, c) = self.rc(*a);
                let cv = self.value(*col).data();
                let av = self.value(*a).data();
                let ga = acc_buf(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = ga[i * c + j] + dy[i * c + j] * cv[i];
                    }
                }
                let gc = acc_buf(grads, *col, r);
                for i in 0..r {
                    let dot = (0..c).fold(T::zero(), |s, j| s + dy[i * c + j] * av[i * c + j]);
                    gc[i] = gc[i] + dot;
                }
            }
            Op::Scale(a, f) => {
                let f = T::from_f64(*f);
                let ga = acc_buf(grads, *a, dy.len());
                for (g, &d) in ga.iter_mut().zip(dy) {
                    *g = *g + d * f;
                }
            }
            Op::Tanh(a) => {
                let ga = acc_buf(grads, *a, dy.len());
                for ((g, &d), &t) in ga.iter_mut().zip(dy).zip(y) {
                    *g = *g + d * (T::one() - t * t);
                }
            }
            Op::Sigmoid(a) => {
                let ga = acc_buf(grads, *a, dy.len());
                for ((g, &d), &s) in ga.iter_mut().zip(dy).zip(y) {
                    *g = *g + d * s * (T::one() - s);
                }
            }
            Op::Relu(a) => {
                let ga = acc_buf(grads, *a, dy.len());
                for ((g, &d), &o) in ga.iter_mut().zip(dy).zip(y) {
                    if o > T::zero() {
                        *g = *g + d;
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let c = self.rc(*a).1;
                let ga = acc_buf(grads, *a, dy.len());
                for ((grow, drow), yrow) in ga.chunks_mut(c).zip(dy.chunks(c)).zip(y.chunks(c)) {
                    let dot = drow.iter().zip(yrow).fold(T::zero(), |s, (&d, &p)| s + d * p);
                    for ((g, &d), &p) in grow.iter_mut().zip(drow).zip(yrow) {
                        *g = *g + p * (d - dot);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.rows_cols().1;
                let rows = node.value.rows_cols().0;
                let mut offset = 0;
                for &p in parts {
                    let c = self.rc(p).1;
                    let gp = acc_buf(grads, p, rows * c);
                    for i in 0..rows {
                        add_into(
                            &mut gp[i * c..(i + 1) * c],
                            &dy[i * total + offset..i * total + offset + c],
                        );
                    }
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.rc(*a);
                let len = node.value.rows_cols().1;
                let ga = acc_buf(grads, *a, r * c);
                for i in 0..r {
                    add_into(
                        &mut ga[i * c + start..i * c + start + len],
                        &dy[i * len..(i + 1) * len],
                    );
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.rc(*a);
                let ga = acc_buf(grads, *a, r * c);
                add_into(&mut ga[start * c..start * c + dy.len()], dy);
            }
            Op::SumAll(a) => {
                let n = self.value(*a).len();
                let ga = acc_buf(grads, *a, n);
                for g in ga.iter_mut() {
                    *g = *g + dy[0];
                }
            }
            Op::Conv1d {
                input,
                kernel,
                bias,
                in_maps,
                in_len,
                width,
            } => {
                let (batch, cols) = self.rc(*input);
                let maps = self.value(*kernel).shape()[0];
                let out_len = in_len - width + 1;
                let x = self.value(*input).data();
                let k = self.value(*kernel).data();
                let mut gx = vec![T::zero(); batch * cols];
                let mut gk = vec![T::zero(); k.len()];
                let mut gb = vec![T::zero(); maps];
                for b in 0..batch {
                    let drow = &dy[b * maps * out_len..(b + 1) * maps * out_len];
                    for f in 0..maps {
                        for i in 0..out_len {
                            let d = drow[f * out_len + i];
                            if d == T::zero() {
                                continue;
                            }
                            gb[f] = gb[f] + d;
                            for p in 0..*in_maps {
                                let kbase = (f * in_maps + p) * width;
                                let xbase = b * cols + p * in_len + i;
                                for j in 0..*width {
                                    gk[kbase + j] = gk[kbase + j] + d * x[xbase + j];
                                    gx[xbase + j] = gx[xbase + j] + d * k[kbase + j];
                                }
                            }
                        }
                    }
                }
                add_into(acc_buf(grads, *input, gx.len()), &gx);
                add_into(acc_buf(grads, *kernel, gk.len()), &gk);
                add_into(acc_buf(grads, *bias, gb.len()), &gb);
            }
            Op::MaxPool { input, argmax } => {
                let n = self.value(*input).len();
                let ga = acc_buf(grads, *input, n);
                for (&src, &d) in argmax.iter().zip(dy) {
                    ga[src] = ga[src] + d;
                }
            }
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp_fn()).recip_fn()
    } else {
        let e = x.exp_fn();
        e * (T::one() + e).recip_fn()
    }
}

fn acc_buf<T: Scalar>(grads: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut [T] {
    grads[id.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
