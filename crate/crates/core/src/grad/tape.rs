use super::{ParamGrads, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `y = scale * x + shift`
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Embedding(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Sum(Var),
    Gather(Var, usize),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// empty for parameter nodes; their value lives in the store
    value: Tensor,
    requires_grad: bool,
}

/// Records operations on dense tensors for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order; `backward` walks it in reverse.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_log_softmax(row: &[f64], out: &mut Vec<f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    out.extend(row.iter().map(|x| x - lse));
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Differentiable leaf; its gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Parameter leaf. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let v = self.push(Op::Param(id), Tensor::zeros(&[0]), true);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2();
        let (k2, n) = tb.dims2();
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let crow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (c, b) in crow.iter_mut().zip(brow) {
                    *c += x * b;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out), rg))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(op, t, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix (bias add).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (m, n) = ta.dims2();
        if tr.dims2() != (1, n) {
            return Err(mismatch("add_row", ta, tr));
        }
        let rd = tr.data();
        let mut data = ta.data().to_vec();
        for r in 0..m {
            for (x, b) in data[r * n..(r + 1) * n].iter_mut().zip(rd) {
                *x += b;
            }
        }
        let t = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Op::AddRow(a, row), t, rg))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| scale * x + shift).collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(a);
        self.push(Op::Affine(a, scale), t, rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.affine(a, factor, 0.0)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| f(*x)).collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(a);
        self.push(op, t, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (m, n) = ta.dims2();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            row_log_softmax(&ta.data()[r * n..(r + 1) * n], &mut data);
        }
        let t = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(a);
        self.push(Op::LogSoftmax(a), t, rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (m, n) = ta.dims2();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            row_log_softmax(&ta.data()[r * n..(r + 1) * n], &mut data);
        }
        for x in &mut data {
            *x = x.exp();
        }
        let t = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(a);
        self.push(Op::Softmax(a), t, rg)
    }

    /// Row `index` of a `V x d` table as a `1 x d` row.
    pub fn embedding(&mut self, table: Var, index: usize) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = tt.dims2();
        if index >= v {
            return Err(Error::ShapeMismatch {
                op: "embedding",
                lhs: tt.shape().to_vec(),
                rhs: vec![index],
            });
        }
        let t = Tensor::from_parts(vec![1, d], tt.data()[index * d..(index + 1) * d].to_vec());
        let rg = self.rg(table);
        Ok(self.push(Op::Embedding(table, index), t, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).dims2().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2();
            if r != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::from_parts(vec![rows, total], data),
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).dims2().1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.dims2();
            if c != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), t));
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Op::ConcatRows(parts.to_vec()),
            Tensor::from_parts(vec![rows, cols], data),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.dims2();
        if start + len > m {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: ta.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let t = Tensor::from_parts(vec![len, n], ta.data()[start * n..(start + len) * n].to_vec());
        let rg = self.rg(a);
        Ok(self.push(Op::SliceRows(a, start), t, rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.dims2();
        if start + len > n {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: ta.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&ta.data()[r * n + start..r * n + start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Op::SliceCols(a, start),
            Tensor::from_parts(vec![m, len], data),
            rg,
        ))
    }

    /// Sum of all elements as a `1 x 1` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Op::Sum(a), Tensor::scalar(s), rg)
    }

    /// Element at flat (row-major) `index` as a `1 x 1` scalar.
    pub fn gather(&mut self, a: Var, index: usize) -> Result<Var> {
        let ta = self.value(a);
        let Some(&x) = ta.data().get(index) else {
            return Err(Error::ShapeMismatch {
                op: "gather",
                lhs: ta.shape().to_vec(),
                rhs: vec![index],
            });
        };
        let rg = self.rg(a);
        Ok(self.push(Op::Gather(a, index), Tensor::scalar(x), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if shape.iter().product::<usize>() != ta.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: ta.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let t = Tensor::from_parts(shape.to_vec(), ta.data().to_vec());
        let rg = self.rg(a);
        Ok(self.push(Op::Reshape(a), t, rg))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Takes `&self`: the tape is not consumed, and repeated calls yield
    /// identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, i, &g, &mut grads);
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                grads[i] = Some(g);
            }
        }
        let mut param_grads = vec![None; self.param_nodes.len()];
        for (slot, v) in param_grads.iter_mut().zip(&self.param_nodes) {
            if let Some(v) = v {
                *slot = grads[v.0].clone();
            }
        }
        Ok(Gradients {
            nodes: grads,
            params: param_grads,
        })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, op: &Op, out: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = &self.nodes[out].value;
        match *op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k) = ta.dims2();
                let n = tb.dims2().1;
                let (ad, bd) = (ta.data(), tb.data());
                if let Some(ga) = self.slot(grads, a) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = ad[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (d, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += x * gv;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(a, 1.0), (b, 1.0)] {
                    if let Some(gv) = self.slot(grads, v) {
                        for (d, x) in gv.iter_mut().zip(g) {
                            *d += sign * x;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(a, 1.0), (b, -1.0)] {
                    if let Some(gv) = self.slot(grads, v) {
                        for (d, x) in gv.iter_mut().zip(g) {
                            *d += sign * x;
                        }
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = self.slot(grads, a) {
                    for (d, x) in ga.iter_mut().zip(g) {
                        *d += x;
                    }
                }
                let n = self.value(row).len();
                if let Some(gr) = self.slot(grads, row) {
                    for chunk in g.chunks(n) {
                        for (d, x) in gr.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = self.slot(grads, a) {
                    for ((d, x), bv) in ga.iter_mut().zip(g).zip(self.value(b).data()) {
                        *d += x * bv;
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for ((d, x), av) in gb.iter_mut().zip(g).zip(self.value(a).data()) {
                        *d += x * av;
                    }
                }
            }
            Op::Affine(a, scale) => {
                if let Some(ga) = self.slot(grads, a) {
                    for (d, x) in ga.iter_mut().zip(g) {
                        *d += scale * x;
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.slot(grads, a) {
                    for ((d, x), s) in ga.iter_mut().zip(g).zip(y.data()) {
                        *d += x * s * (1.0 - s);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.slot(grads, a) {
                    for ((d, x), t) in ga.iter_mut().zip(g).zip(y.data()) {
                        *d += x * (1.0 - t * t);
                    }
                }
            }
            Op::Softmax(a) => {
                let (m, n) = y.dims2();
                if let Some(ga) = self.slot(grads, a) {
                    for r in 0..m {
                        let yr = &y.data()[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, x)| p * x).sum();
                        for ((d, p), x) in ga[r * n..(r + 1) * n].iter_mut().zip(yr).zip(gr) {
                            *d += p * (x - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let (m, n) = y.dims2();
                if let Some(ga) = self.slot(grads, a) {
                    for r in 0..m {
                        let yr = &y.data()[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let gsum: f64 = gr.iter().sum();
                        for ((d, l), x) in ga[r * n..(r + 1) * n].iter_mut().zip(yr).zip(gr) {
                            *d += x - l.exp() * gsum;
                        }
                    }
                }
            }
            Op::Embedding(table, index) => {
                let d = g.len();
                if let Some(gt) = self.slot(grads, table) {
                    for (dst, x) in gt[index * d..(index + 1) * d].iter_mut().zip(g) {
                        *dst += x;
                    }
                }
            }
            Op::ConcatCols(ref parts) => {
                let (rows, total) = y.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims2().1;
                    if let Some(gp) = self.slot(grads, p) {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            for (d, x) in gp[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *d += x;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.slot(grads, p) {
                        for (d, x) in gp.iter_mut().zip(&g[offset..offset + len]) {
                            *d += x;
                        }
                    }
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let n = self.value(a).dims2().1;
                if let Some(ga) = self.slot(grads, a) {
                    for (d, x) in ga[start * n..start * n + g.len()].iter_mut().zip(g) {
                        *d += x;
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let n = self.value(a).dims2().1;
                let (m, len) = y.dims2();
                if let Some(ga) = self.slot(grads, a) {
                    for r in 0..m {
                        let dst = &mut ga[r * n + start..r * n + start + len];
                        for (d, x) in dst.iter_mut().zip(&g[r * len..(r + 1) * len]) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, a) {
                    for d in ga.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Gather(a, index) => {
                if let Some(ga) = self.slot(grads, a) {
                    ga[index] += g[0];
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, a) {
                    for (d, x) in ga.iter_mut().zip(g) {
                        *d += x;
                    }
                }
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to a differentiable leaf created by
    /// [`Tape::input`] or [`Tape::param`].
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    /// `acc += scale * dL/dθ` for every parameter reached by the sweep.
    pub fn accumulate_into(&self, acc: &mut ParamGrads, scale: f64) {
        for (i, g) in self.params.iter().enumerate() {
            if let Some(g) = g {
                let dst = acc.get_mut(ParamId(i)).data_mut();
                for (d, x) in dst.iter_mut().zip(g) {
                    *d += scale * x;
                }
            }
        }
    }

    pub fn to_param_grads(&self, store: &ParamStore) -> ParamGrads {
        let mut acc = ParamGrads::zeros_like(store);
        self.accumulate_into(&mut acc, 1.0);
        acc
    }
}
