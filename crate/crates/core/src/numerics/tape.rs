//! Reverse-mode automatic differentiation over a recorded op tape.
//!
//! Every op appends a node holding its forward value. `backward` walks the
//! tape in reverse and accumulates exact gradients for every node that
//! depends on a leaf created with `requires_grad`. All ops work on 2-D
//! matrices; a vector is a `1 x n` row.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Stand-in for negative infinity in masked attention scores.
pub const MASK_VALUE: f64 = -1e30;

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    RepeatRows(Var),
    Softmax(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    LayerNorm(Var, Var, Var),
    Embedding(Var, Vec<usize>),
    MaskedFill(Var, Vec<bool>),
    CrossEntropy(Var, Vec<usize>),
    NllSum(Var, Vec<usize>),
    ScatterCols(Var, Vec<usize>),
    AdditiveScores(Var, Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by `Var`.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn dim_err(op: &'static str, detail: String) -> Error {
    Error::Dimension { op, detail }
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::matrix(rows, cols, data).expect("op produced consistent shape")
}

fn softmax_row(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        sum += *d;
    }
    for d in dst.iter_mut() {
        *d /= sum;
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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
        (t.rows(), t.cols())
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.shape(a);
        let (k2, p) = self.shape(b);
        if k != k2 {
            return Err(dim_err("matmul", format!("{n}x{k} @ {k2}x{p}")));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let orow = &mut out[i * p..(i + 1) * p];
            for kk in 0..k {
                let x = av[i * k + kk];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[kk * p..(kk + 1) * p];
                for (o, &bb) in orow.iter_mut().zip(brow) {
                    *o += x * bb;
                }
            }
        }
        Ok(self.push(mat(n, p, out), Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (r, c) = self.shape(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(mat(r, c, data), Op::Add(a, b), &[a, b]))
    }

    /// `a [r x c] + b [1 x c]` with `b` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(b) != (1, c) {
            return Err(dim_err("add_row", format!("{r}x{c} + {:?}", self.shape(b))));
        }
        let bv = self.value(b).data().to_vec();
        let data = self
            .value(a)
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(&bv).map(|(x, y)| x + y))
            .collect();
        Ok(self.push(mat(r, c, data), Op::AddRow(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (r, c) = self.shape(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(mat(r, c, data), Op::Mul(a, b), &[a, b]))
    }

    /// `a [r x c]` scaled row-wise by `g [r x 1]`.
    pub fn mul_col(&mut self, a: Var, g: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(g) != (r, 1) {
            return Err(dim_err("mul_col", format!("{r}x{c} * {:?}", self.shape(g))));
        }
        let gv = self.value(g).data().to_vec();
        let data = self
            .value(a)
            .data()
            .chunks(c)
            .zip(&gv)
            .flat_map(|(row, &s)| row.iter().map(move |x| x * s))
            .collect();
        Ok(self.push(mat(r, c, data), Op::MulCol(a, g), &[a, g]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// Elementwise `a * mul + add`.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let (r, c) = self.shape(a);
        let data = self.value(a).data().iter().map(|x| x * mul + add).collect();
        self.push(mat(r, c, data), Op::Affine(a, mul), &[a])
    }

    /// Concatenation along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(dim_err("concat", "no inputs".into()));
        };
        let r = self.shape(first).0;
        if parts.iter().any(|&p| self.shape(p).0 != r) {
            return Err(dim_err("concat", "row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(r * total);
        for row in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(row));
            }
        }
        Ok(self.push(mat(r, total, data), Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c || len == 0 {
            return Err(dim_err("slice_cols", format!("[{start}, {}) of {c}", start + len)));
        }
        let t = self.value(a);
        let data = (0..r)
            .flat_map(|row| t.row_slice(row)[start..start + len].iter().copied())
            .collect();
        Ok(self.push(mat(r, len, data), Op::SliceCols(a, start), &[a]))
    }

    /// Stacks inputs with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(dim_err("concat_rows", "no inputs".into()));
        };
        let c = self.shape(first).1;
        if parts.iter().any(|&p| self.shape(p).1 != c) {
            return Err(dim_err("concat_rows", "column counts differ".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let r = data.len() / c;
        Ok(self.push(mat(r, c, data), Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > r || len == 0 {
            return Err(dim_err("slice_rows", format!("[{start}, {}) of {r}", start + len)));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(mat(len, c, data), Op::SliceRows(a, start), &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let t = self.value(a).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = t[i * c + j];
            }
        }
        self.push(mat(c, r, data), Op::Transpose(a), &[a])
    }

    /// Repeats a `1 x c` row `n` times.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r != 1 || n == 0 {
            return Err(dim_err("repeat_rows", format!("{r}x{c} repeated {n} times")));
        }
        let row = self.value(a).data().to_vec();
        let data = std::iter::repeat_n(row, n).flatten().collect();
        Ok(self.push(mat(n, c, data), Op::RepeatRows(a), &[a]))
    }

    /// Row-wise softmax, stabilized by subtracting the row maximum.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let src = self.value(a).data();
        let mut data = vec![0.0; r * c];
        for (s, d) in src.chunks(c).zip(data.chunks_mut(c)) {
            softmax_row(s, d);
        }
        self.push(mat(r, c, data), Op::Softmax(a), &[a])
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        self.push(mat(r, c, data), op, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// Row-wise layer normalization with gain and bias rows of width `c`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(gain) != (1, c) || self.shape(bias) != (1, c) {
            return Err(dim_err(
                "layer_norm",
                format!("input width {c}, gain/bias must be 1x{c}"),
            ));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut data = Vec::with_capacity(r * c);
        for row in self.value(x).data().chunks(c) {
            let (mean, rstd) = moments(row);
            data.extend(row.iter().enumerate().map(|(j, v)| (v - mean) * rstd * g[j] + b[j]));
        }
        Ok(self.push(mat(r, c, data), Op::LayerNorm(x, gain, bias), &[x, gain, bias]))
    }

    /// Gathers rows of `table` by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Index(format!("embedding id {bad} >= table size {v}")));
        }
        if ids.is_empty() {
            return Err(dim_err("embedding", "no ids".into()));
        }
        let t = self.value(table);
        let data = ids.iter().flat_map(|&i| t.row_slice(i).iter().copied()).collect();
        Ok(self.push(mat(ids.len(), d, data), Op::Embedding(table, ids.to_vec()), &[table]))
    }

    /// Replaces entries where `mask` is true with `MASK_VALUE`.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if mask.len() != r * c {
            return Err(dim_err("masked_fill", format!("mask {} vs {r}x{c}", mask.len())));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m { MASK_VALUE } else { x })
            .collect();
        Ok(self.push(mat(r, c, data), Op::MaskedFill(a, mask.to_vec()), &[a]))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if targets.len() != r || targets.iter().any(|&t| t >= c) {
            return Err(dim_err(
                "cross_entropy",
                format!("{} targets for {r}x{c}", targets.len()),
            ));
        }
        let mut total = 0.0;
        for (row, &t) in self.value(logits).data().chunks(c).zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let v = Tensor::scalar(total / r as f64);
        Ok(self.push(v, Op::CrossEntropy(logits, targets.to_vec()), &[logits]))
    }

    /// Sum over rows of `-ln probs[target]`.
    pub fn nll_sum(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(probs);
        if targets.len() != r || targets.iter().any(|&t| t >= c) {
            return Err(dim_err("nll", format!("{} targets for {r}x{c}", targets.len())));
        }
        let p = self.value(probs);
        let total: f64 = targets.iter().enumerate().map(|(i, &t)| -p.get(i, t).ln()).sum();
        Ok(self.push(Tensor::scalar(total), Op::NllSum(probs, targets.to_vec()), &[probs]))
    }

    /// `out[r][index[c]] += a[r][c]` into `width` columns.
    pub fn scatter_cols(&mut self, a: Var, index: &[usize], width: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if index.len() != c || index.iter().any(|&i| i >= width) {
            return Err(dim_err("scatter_cols", format!("index for {c} columns into {width}")));
        }
        let src = self.value(a).data();
        let mut data = vec![0.0; r * width];
        for row in 0..r {
            for (j, &dst) in index.iter().enumerate() {
                data[row * width + dst] += src[row * c + j];
            }
        }
        Ok(self.push(mat(r, width, data), Op::ScatterCols(a, index.to_vec()), &[a]))
    }

    /// Additive attention scores `s[t][i] = Σ_k w_k tanh(q[t][k] + key[i][k])`
    /// for queries `q [n x a]`, keys `key [m x a]` and `w [1 x a]`.
    pub fn additive_scores(&mut self, q: Var, key: Var, w: Var) -> Result<Var> {
        let (n, a) = self.shape(q);
        let (m, a2) = self.shape(key);
        if a != a2 || self.shape(w) != (1, a) {
            return Err(dim_err("additive_scores", format!("q {n}x{a}, key {m}x{a2}")));
        }
        let (qv, kv, wv) = (self.value(q).data(), self.value(key).data(), self.value(w).data());
        let mut data = vec![0.0; n * m];
        for t in 0..n {
            let qr = &qv[t * a..(t + 1) * a];
            for i in 0..m {
                let kr = &kv[i * a..(i + 1) * a];
                data[t * m + i] = (0..a).map(|k| wv[k] * (qr[k] + kr[k]).tanh()).sum();
            }
        }
        Ok(self.push(mat(n, m, data), Op::AdditiveScores(q, key, w), &[q, key, w]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Gradients of the scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(dim_err("backward", "loss must be a scalar".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dout) = grads[idx].take() else { continue };
            self.backprop_node(node, &dout, &mut grads);
            grads[idx] = Some(dout);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, node: &Node, dout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        let (r, c) = (out.rows(), out.cols());
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = av.cols();
                if self.wants(*a) {
                    let ga = accumulate(&mut grads[a.0], r * k);
                    for i in 0..r {
                        let drow = &dout[i * c..(i + 1) * c];
                        for kk in 0..k {
                            let brow = bv.row_slice(kk);
                            ga[i * k + kk] += drow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if self.wants(*b) {
                    let gb = accumulate(&mut grads[b.0], k * c);
                    for i in 0..r {
                        let drow = &dout[i * c..(i + 1) * c];
                        let arow = av.row_slice(i);
                        for kk in 0..k {
                            let x = arow[kk];
                            if x == 0.0 {
                                continue;
                            }
                            for (g, d) in gb[kk * c..(kk + 1) * c].iter_mut().zip(drow) {
                                *g += x * d;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        let g = accumulate(&mut grads[v.0], dout.len());
                        g.iter_mut().zip(dout).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if self.wants(*a) {
                    let g = accumulate(&mut grads[a.0], dout.len());
                    g.iter_mut().zip(dout).for_each(|(g, d)| *g += d);
                }
                if self.wants(*b) {
                    let g = accumulate(&mut grads[b.0], c);
                    for row in dout.chunks(c) {
                        g.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let g = accumulate(&mut grads[a.0], dout.len());
                    for i in 0..dout.len() {
                        g[i] += dout[i] * bv[i];
                    }
                }
                if self.wants(*b) {
                    let g = accumulate(&mut grads[b.0], dout.len());
                    for i in 0..dout.len() {
                        g[i] += dout[i] * av[i];
                    }
                }
            }
            Op::MulCol(a, s) => {
                let (av, sv) = (self.value(*a).data(), self.value(*s).data());
                if self.wants(*a) {
                    let g = accumulate(&mut grads[a.0], dout.len());
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += dout[i * c + j] * sv[i];
                        }
                    }
                }
                if self.wants(*s) {
                    let g = accumulate(&mut grads[s.0], r);
                    for i in 0..r {
                        g[i] += (0..c).map(|j| dout[i * c + j] * av[i * c + j]).sum::<f64>();
                    }
                }
            }
            Op::Affine(a, mul) => {
                let g = accumulate(&mut grads[a.0], dout.len());
                g.iter_mut().zip(dout).for_each(|(g, d)| *g += mul * d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pc = self.value(*p).cols();
                    if self.wants(*p) {
                        let g = accumulate(&mut grads[p.0], r * pc);
                        for i in 0..r {
                            for j in 0..pc {
                                g[i * pc + j] += dout[i * c + offset + j];
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::SliceCols(a, start) => {
                let ac = self.value(*a).cols();
                let g = accumulate(&mut grads[a.0], r * ac);
                for i in 0..r {
                    for j in 0..c {
                        g[i * ac + start + j] += dout[i * c + j];
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if self.wants(*p) {
                        let g = accumulate(&mut grads[p.0], n);
                        g.iter_mut().zip(&dout[offset..offset + n]).for_each(|(g, d)| *g += d);
                    }
                    offset += n;
                }
            }
            Op::SliceRows(a, start) => {
                let n = self.value(*a).len();
                let g = accumulate(&mut grads[a.0], n);
                g[start * c..start * c + dout.len()]
                    .iter_mut()
                    .zip(dout)
                    .for_each(|(g, d)| *g += d);
            }
            Op::Transpose(a) => {
                let g = accumulate(&mut grads[a.0], r * c);
                for i in 0..r {
                    for j in 0..c {
                        g[j * r + i] += dout[i * c + j];
                    }
                }
            }
            Op::RepeatRows(a) => {
                let g = accumulate(&mut grads[a.0], c);
                for row in dout.chunks(c) {
                    g.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                }
            }
            Op::Softmax(a) => {
                let y = out.data();
                let g = accumulate(&mut grads[a.0], r * c);
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let dr = &dout[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        g[i * c + j] += yr[j] * (dr[j] - dot);
                    }
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let g = accumulate(&mut grads[a.0], dout.len());
                for i in 0..dout.len() {
                    if x[i] > 0.0 {
                        g[i] += dout[i];
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                let g = accumulate(&mut grads[a.0], dout.len());
                for i in 0..dout.len() {
                    g[i] += dout[i] * y[i] * (1.0 - y[i]);
                }
            }
            Op::Tanh(a) => {
                let y = out.data();
                let g = accumulate(&mut grads[a.0], dout.len());
                for i in 0..dout.len() {
                    g[i] += dout[i] * (1.0 - y[i] * y[i]);
                }
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let g = accumulate(&mut grads[a.0], dout.len());
                for i in 0..dout.len() {
                    g[i] += dout[i] / x[i];
                }
            }
            Op::LayerNorm(x, gain, bias) => {
                let xv = self.value(*x).data();
                let gv = self.value(*gain).data();
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let row = &xv[i * c..(i + 1) * c];
                    let dr = &dout[i * c..(i + 1) * c];
                    let (mean, rstd) = moments(row);
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * rstd).collect();
                    let dxhat: Vec<f64> = (0..c).map(|j| dr[j] * gv[j]).collect();
                    let m1 = dxhat.iter().sum::<f64>() / c as f64;
                    let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dgain[j] += dr[j] * xhat[j];
                        dbias[j] += dr[j];
                        dx[i * c + j] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                for (v, d) in [(x, dx), (gain, dgain), (bias, dbias)] {
                    if self.wants(*v) {
                        let g = accumulate(&mut grads[v.0], d.len());
                        g.iter_mut().zip(&d).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::Embedding(table, ids) => {
                let t = self.value(*table);
                let d = t.cols();
                let g = accumulate(&mut grads[table.0], t.len());
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        g[id * d + j] += dout[row * d + j];
                    }
                }
            }
            Op::MaskedFill(a, mask) => {
                let g = accumulate(&mut grads[a.0], dout.len());
                for i in 0..dout.len() {
                    if !mask[i] {
                        g[i] += dout[i];
                    }
                }
            }
            Op::CrossEntropy(logits, targets) => {
                let lv = self.value(*logits);
                let (lr, lc) = (lv.rows(), lv.cols());
                let g = accumulate(&mut grads[logits.0], lr * lc);
                let scale = dout[0] / lr as f64;
                let mut probs = vec![0.0; lc];
                for (i, &t) in targets.iter().enumerate() {
                    softmax_row(lv.row_slice(i), &mut probs);
                    for j in 0..lc {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        g[i * lc + j] += scale * (probs[j] - onehot);
                    }
                }
            }
            Op::NllSum(probs, targets) => {
                let p = self.value(*probs);
                let pc = p.cols();
                let g = accumulate(&mut grads[probs.0], p.len());
                for (i, &t) in targets.iter().enumerate() {
                    g[i * pc + t] -= dout[0] / p.get(i, t);
                }
            }
            Op::ScatterCols(a, index) => {
                let ac = index.len();
                let g = accumulate(&mut grads[a.0], r * ac);
                for i in 0..r {
                    for (j, &dst) in index.iter().enumerate() {
                        g[i * ac + j] += dout[i * c + dst];
                    }
                }
            }
            Op::AdditiveScores(q, key, w) => {
                let (qv, kv, wv) = (self.value(*q), self.value(*key), self.value(*w).data());
                let a = qv.cols();
                let (n, m) = (r, c);
                let mut dq = vec![0.0; n * a];
                let mut dk = vec![0.0; m * a];
                let mut dw = vec![0.0; a];
                for t in 0..n {
                    let qr = qv.row_slice(t);
                    for i in 0..m {
                        let ds = dout[t * m + i];
                        if ds == 0.0 {
                            continue;
                        }
                        let kr = kv.row_slice(i);
                        for k in 0..a {
                            let th = (qr[k] + kr[k]).tanh();
                            dw[k] += ds * th;
                            let dz = ds * wv[k] * (1.0 - th * th);
                            dq[t * a + k] += dz;
                            dk[i * a + k] += dz;
                        }
                    }
                }
                for (v, d) in [(q, dq), (key, dk), (w, dw)] {
                    if self.wants(*v) {
                        let g = accumulate(&mut grads[v.0], d.len());
                        g.iter_mut().zip(&d).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                let g = accumulate(&mut grads[a.0], n);
                g.iter_mut().for_each(|g| *g += dout[0]);
            }
        }
    }
}

/// Mean and reciprocal standard deviation of one row.
fn moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}
