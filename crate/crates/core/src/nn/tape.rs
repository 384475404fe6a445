//! Reverse-mode tape over a fixed set of 2-D primitives.

use std::collections::HashMap;

use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Input,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    BroadcastRows(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Abs(Var),
    Embedding(Var, Vec<usize>),
    CumsumRows(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation; parameters are read from a borrowed store.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape { op, lhs: a.shape(), rhs: b.shape() }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self { store, nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows, t.cols)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    /// The store's parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let value = self.store.get(id).value.clone();
        let v = self.push(value, Op::Param, true);
        self.params.insert(id, v);
        v
    }

    /// Copy of `v` cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols != tb.rows {
            return Err(shape_err("matmul", ta, tb));
        }
        let (n, k, m) = (ta.rows, ta.cols, tb.cols);
        let mut out = Tensor::zeros(n, m);
        for i in 0..n {
            let orow = &mut out.data[i * m..(i + 1) * m];
            for p in 0..k {
                let x = ta.data[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for (o, y) in orow.iter_mut().zip(&tb.data[p * m..(p + 1) * m]) {
                    *o += x * y;
                }
            }
        }
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows != tb.rows || ta.cols != tb.cols {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor { rows: ta.rows, cols: ta.cols, data })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// `a + b` with the single row `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows != 1 || tb.cols != ta.cols {
            return Err(shape_err("add_row", ta, tb));
        }
        let mut out = ta.clone();
        for row in out.data.chunks_mut(ta.cols.max(1)) {
            for (o, y) in row.iter_mut().zip(&tb.data) {
                *o += y;
            }
        }
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::AddRow(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x *= s);
        let ng = self.needs(&[a]);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Shape { op: "concat_cols", lhs: vec![], rhs: vec![] })?;
        let rows = self.value(*first).rows;
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows != rows {
                return Err(shape_err("concat_cols", self.value(*first), t));
            }
            cols += t.cols;
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            for i in 0..rows {
                out.data[i * cols + off..i * cols + off + t.cols].copy_from_slice(t.row(i));
            }
            off += t.cols;
        }
        let ng = self.needs(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Shape { op: "concat_rows", lhs: vec![], rhs: vec![] })?;
        let cols = self.value(*first).cols;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols != cols {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            data.extend_from_slice(&t.data);
        }
        let rows = data.len() / cols.max(1);
        let ng = self.needs(parts);
        Ok(self.push(Tensor { rows, cols, data }, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.cols {
            return Err(Error::Shape { op: "slice_cols", lhs: t.shape(), rhs: vec![start, start + len] });
        }
        let mut out = Tensor::zeros(t.rows, len);
        for i in 0..t.rows {
            out.data[i * len..(i + 1) * len].copy_from_slice(&t.row(i)[start..start + len]);
        }
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.rows {
            return Err(Error::Shape { op: "slice_rows", lhs: t.shape(), rhs: vec![start, start + len] });
        }
        let out = Tensor { rows: len, cols: t.cols, data: t.data[start * t.cols..(start + len) * t.cols].to_vec() };
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::SliceRows(a, start), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let ng = self.needs(&[a]);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let ng = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Shape { op: "mean", lhs: t.shape(), rhs: vec![] });
        }
        let m = t.data.iter().sum::<f64>() / t.len() as f64;
        let ng = self.needs(&[a]);
        Ok(self.push(Tensor::scalar(m), Op::Mean(a), ng))
    }

    /// Column means as a single row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rows == 0 {
            return Err(Error::Shape { op: "mean_rows", lhs: t.shape(), rhs: vec![] });
        }
        let mut out = Tensor::zeros(1, t.cols);
        for i in 0..t.rows {
            for (o, x) in out.data.iter_mut().zip(t.row(i)) {
                *o += x;
            }
        }
        let n = t.rows as f64;
        out.data.iter_mut().for_each(|x| *x /= n);
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::MeanRows(a), ng))
    }

    /// Repeats the single row `a` `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rows != 1 {
            return Err(Error::Shape { op: "broadcast_rows", lhs: t.shape(), rhs: vec![1, t.cols] });
        }
        let data = t.data.repeat(n);
        let out = Tensor { rows: n, cols: t.cols, data };
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::BroadcastRows(a), ng))
    }

    /// Row-wise softmax; entries with `keep[i] == false` get weight exactly 0.
    pub fn softmax(&mut self, a: Var, keep: Option<&[bool]>) -> Result<Var> {
        let t = self.value(a);
        if let Some(k) = keep {
            if k.len() != t.len() {
                return Err(Error::Shape { op: "softmax mask", lhs: t.shape(), rhs: vec![k.len()] });
            }
        }
        let mut out = Tensor::zeros(t.rows, t.cols);
        for i in 0..t.rows {
            let kept = |j: usize| keep.is_none_or(|k| k[i * t.cols + j]);
            let row = t.row(i);
            let max = (0..t.cols).filter(|&j| kept(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Domain(format!("softmax row {i} has no unmasked entries")));
            }
            let orow = &mut out.data[i * t.cols..(i + 1) * t.cols];
            let mut z = 0.0;
            for j in 0..t.cols {
                if kept(j) {
                    orow[j] = (row[j] - max).exp();
                    z += orow[j];
                }
            }
            orow.iter_mut().for_each(|x| *x /= z);
        }
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::Softmax(a), ng))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        for row in out.data.chunks_mut(t.cols.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let ng = self.needs(&[a]);
        self.push(out, Op::LogSoftmax(a), ng)
    }

    /// Row-wise layer norm with single-row `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        if tg.rows != 1 || tg.cols != tx.cols {
            return Err(shape_err("layer_norm gain", tx, tg));
        }
        if tb.rows != 1 || tb.cols != tx.cols {
            return Err(shape_err("layer_norm bias", tx, tb));
        }
        let c = tx.cols;
        let mut xhat = vec![0.0; tx.len()];
        let mut rstd = vec![0.0; tx.rows];
        let mut out = Tensor::zeros(tx.rows, c);
        for i in 0..tx.rows {
            let row = tx.row(i);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = r;
            for j in 0..c {
                let h = (row[j] - mu) * r;
                xhat[i * c + j] = h;
                out.data[i * c + j] = h * tg.data[j] + tb.data[j];
            }
        }
        let ng = self.needs(&[x, gain, bias]);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, rstd }, ng))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = f(*x));
        let ng = self.needs(&[a]);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, gelu, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, f64::abs, Op::Abs(a))
    }

    /// Gathers rows `ids` of `table`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * t.cols);
        for &id in ids {
            if id >= t.rows {
                return Err(Error::Index { what: "embedding row", index: id, len: t.rows });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor { rows: ids.len(), cols: t.cols, data };
        let ng = self.needs(&[table]);
        Ok(self.push(out, Op::Embedding(table, ids.to_vec()), ng))
    }

    /// Running sum down the rows.
    pub fn cumsum_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let c = out.cols;
        for i in 1..out.rows {
            for j in 0..c {
                out.data[i * c + j] += out.data[(i - 1) * c + j];
            }
        }
        let ng = self.needs(&[a]);
        self.push(out, Op::CumsumRows(a), ng)
    }

    /// Reverse pass from a 1 x 1 output.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Shape { op: "backward", lhs: lt.shape(), rhs: vec![1, 1] });
        }
        let mut g: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        g[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gi) = g[i].take() else { continue };
            self.backprop(node, &gi, &mut g);
            g[i] = Some(gi);
        }
        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients { grads: g, params })
    }

    fn buf<'g>(&self, g: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(g[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn backprop(&self, node: &Node, gy: &[f64], g: &mut [Option<Vec<f64>>]) {
        let y = &node.value;
        match &node.op {
            Op::Constant | Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.rows, ta.cols, tb.cols);
                if let Some(ga) = self.buf(g, *a) {
                    for i in 0..n {
                        for p in 0..k {
                            let brow = &tb.data[p * m..(p + 1) * m];
                            let s: f64 = gy[i * m..(i + 1) * m].iter().zip(brow).map(|(x, y)| x * y).sum();
                            ga[i * k + p] += s;
                        }
                    }
                }
                if let Some(gb) = self.buf(g, *b) {
                    for i in 0..n {
                        let grow = &gy[i * m..(i + 1) * m];
                        for p in 0..k {
                            let x = ta.data[i * k + p];
                            for (o, d) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *o += x * d;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.buf(g, v) {
                        gv.iter_mut().zip(gy).for_each(|(o, d)| *o += d);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.buf(g, *a) {
                    ga.iter_mut().zip(gy).for_each(|(o, d)| *o += d);
                }
                if let Some(gb) = self.buf(g, *b) {
                    gb.iter_mut().zip(gy).for_each(|(o, d)| *o -= d);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.buf(g, *a) {
                    for ((o, d), x) in ga.iter_mut().zip(gy).zip(&tb.data) {
                        *o += d * x;
                    }
                }
                if let Some(gb) = self.buf(g, *b) {
                    for ((o, d), x) in gb.iter_mut().zip(gy).zip(&ta.data) {
                        *o += d * x;
                    }
                }
            }
            Op::AddRow(a, b) => {
                if let Some(ga) = self.buf(g, *a) {
                    ga.iter_mut().zip(gy).for_each(|(o, d)| *o += d);
                }
                if let Some(gb) = self.buf(g, *b) {
                    for row in gy.chunks(y.cols.max(1)) {
                        gb.iter_mut().zip(row).for_each(|(o, d)| *o += d);
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.buf(g, *a) {
                    ga.iter_mut().zip(gy).for_each(|(o, d)| *o += s * d);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols;
                    if let Some(gp) = self.buf(g, p) {
                        for i in 0..y.rows {
                            let src = &gy[i * y.cols + off..i * y.cols + off + pc];
                            gp[i * pc..(i + 1) * pc].iter_mut().zip(src).for_each(|(o, d)| *o += d);
                        }
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(gp) = self.buf(g, p) {
                        gp.iter_mut().zip(&gy[off..off + n]).for_each(|(o, d)| *o += d);
                    }
                    off += n;
                }
            }
            Op::SliceCols(a, start) => {
                let ac = self.value(*a).cols;
                if let Some(ga) = self.buf(g, *a) {
                    for i in 0..y.rows {
                        let dst = &mut ga[i * ac + start..i * ac + start + y.cols];
                        dst.iter_mut().zip(&gy[i * y.cols..(i + 1) * y.cols]).for_each(|(o, d)| *o += d);
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let ac = self.value(*a).cols;
                if let Some(ga) = self.buf(g, *a) {
                    ga[start * ac..start * ac + gy.len()].iter_mut().zip(gy).for_each(|(o, d)| *o += d);
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = self.buf(g, *a) {
                    // y is (c x r) of a (r x c)
                    for i in 0..y.rows {
                        for j in 0..y.cols {
                            ga[j * y.rows + i] += gy[i * y.cols + j];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.buf(g, *a) {
                    ga.iter_mut().for_each(|o| *o += gy[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = self.buf(g, *a) {
                    let d = gy[0] / ga.len() as f64;
                    ga.iter_mut().for_each(|o| *o += d);
                }
            }
            Op::MeanRows(a) => {
                let n = self.value(*a).rows as f64;
                if let Some(ga) = self.buf(g, *a) {
                    for row in ga.chunks_mut(y.cols.max(1)) {
                        row.iter_mut().zip(gy).for_each(|(o, d)| *o += d / n);
                    }
                }
            }
            Op::BroadcastRows(a) => {
                if let Some(ga) = self.buf(g, *a) {
                    for row in gy.chunks(y.cols.max(1)) {
                        ga.iter_mut().zip(row).for_each(|(o, d)| *o += d);
                    }
                }
            }
            Op::Softmax(a) => {
                if let Some(ga) = self.buf(g, *a) {
                    let c = y.cols.max(1);
                    for ((grow, yrow), orow) in gy.chunks(c).zip(y.data.chunks(c)).zip(ga.chunks_mut(c)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(d, p)| d * p).sum();
                        for ((o, d), p) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += p * (d - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if let Some(ga) = self.buf(g, *a) {
                    let c = y.cols.max(1);
                    for ((grow, yrow), orow) in gy.chunks(c).zip(y.data.chunks(c)).zip(ga.chunks_mut(c)) {
                        let total: f64 = grow.iter().sum();
                        for ((o, d), l) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += d - l.exp() * total;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let c = y.cols;
                let tg = self.value(*gain);
                if let Some(gx) = self.buf(g, *x) {
                    let mut dh = vec![0.0; c];
                    for i in 0..y.rows {
                        let grow = &gy[i * c..(i + 1) * c];
                        let hrow = &xhat[i * c..(i + 1) * c];
                        for j in 0..c {
                            dh[j] = grow[j] * tg.data[j];
                        }
                        let m1 = dh.iter().sum::<f64>() / c as f64;
                        let m2 = dh.iter().zip(hrow).map(|(d, h)| d * h).sum::<f64>() / c as f64;
                        for j in 0..c {
                            gx[i * c + j] += rstd[i] * (dh[j] - m1 - hrow[j] * m2);
                        }
                    }
                }
                if let Some(gg) = self.buf(g, *gain) {
                    for (grow, hrow) in gy.chunks(c.max(1)).zip(xhat.chunks(c.max(1))) {
                        for ((o, d), h) in gg.iter_mut().zip(grow).zip(hrow) {
                            *o += d * h;
                        }
                    }
                }
                if let Some(gb) = self.buf(g, *bias) {
                    for grow in gy.chunks(c.max(1)) {
                        gb.iter_mut().zip(grow).for_each(|(o, d)| *o += d);
                    }
                }
            }
            Op::Relu(a) | Op::Gelu(a) | Op::Abs(a) => {
                let x = &self.value(*a).data;
                let deriv: fn(f64) -> f64 = match node.op {
                    Op::Relu(_) => |v| if v > 0.0 { 1.0 } else { 0.0 },
                    Op::Gelu(_) => gelu_grad,
                    _ => |v: f64| {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    },
                };
                if let Some(ga) = self.buf(g, *a) {
                    for ((o, d), v) in ga.iter_mut().zip(gy).zip(x) {
                        *o += d * deriv(*v);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.buf(g, *a) {
                    for ((o, d), s) in ga.iter_mut().zip(gy).zip(&y.data) {
                        *o += d * s * (1.0 - s);
                    }
                }
            }
            Op::Embedding(table, ids) => {
                let c = y.cols;
                if let Some(gt) = self.buf(g, *table) {
                    for (i, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id * c..(id + 1) * c];
                        dst.iter_mut().zip(&gy[i * c..(i + 1) * c]).for_each(|(o, d)| *o += d);
                    }
                }
            }
            Op::CumsumRows(a) => {
                if let Some(ga) = self.buf(g, *a) {
                    let c = y.cols;
                    let mut run = vec![0.0; c];
                    for i in (0..y.rows).rev() {
                        for j in 0..c {
                            run[j] += gy[i * c + j];
                            ga[i * c + j] += run[j];
                        }
                    }
                }
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` is unreachable.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Parameter gradients, in no particular order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, Option<&[f64]>)> {
        self.params.iter().map(|&(id, v)| (id, self.wrt(v)))
    }
}
