//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Every operation appends a node holding its forward value and the indices
//! of its inputs. [`Tape::backward`] walks the nodes in reverse and accumulates
//! exact adjoints into every node that depends on a parameter.

use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Softmax reduction axis: `Rows` normalizes each row, `Cols` each column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Elu(Var),
    Softmax(Var, Reduce),
    LogSoftmax(Var),
    Log(Var),
    Abs(Var),
    Mean(Var),
    Sum(Var),
    RowSum(Var),
    OuterAdd(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Transpose(Var),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adjoint of `v` shaped like `like`, zero when `v` did not reach the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        match self.get(v) {
            Some(g) => Tensor::new(like.shape().to_vec(), g.data().to_vec()).expect("adjoint shape"),
            None => Tensor::zeros(like.shape()),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Sum whose rounding does not depend on the order of `terms`: the terms are
/// sorted first, so any permutation of the same values gives the same bits.
pub fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

fn softmax_slice(xs: &[f64], out: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut scratch = Vec::with_capacity(xs.len());
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - max).exp();
        scratch.push(*o);
    }
    let z = canonical_sum(&mut scratch);
    out.iter_mut().for_each(|o| *o /= z);
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
        dims(self.value(v))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.as_matrix(), Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let m = t.as_matrix();
        self.push(m, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} * {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// Matrix product whose inner sums use [`canonical_sum`], so permuting the
    /// shared index (columns of `a` with rows of `b`) leaves the result
    /// bit-identical. Slower than [`Tape::matmul`]; meant for aggregating over
    /// graph neighbours.
    pub fn attend(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::shape("attend", format!("{m}x{k} * {k2}x{n}")));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        let mut terms = vec![0.0; k];
        for i in 0..m {
            for j in 0..n {
                for (l, t) in terms.iter_mut().enumerate() {
                    *t = ad[i * k + l] * bd[l * n + j];
                }
                out[i * n + j] = canonical_sum(&mut terms);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{}x{} vs {}x{}", sa.0, sa.1, sb.0, sb.1)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (r, c) = self.shape(a);
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(r, c, data).expect("zip shape"), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        Ok(self.zip_with(a, b, Op::Hadamard(a, b), |x, y| x * y))
    }

    /// Adds the `1 x c` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let ((r, c), (r2, c2)) = (self.shape(a), self.shape(row));
        if r2 != 1 || c2 != c {
            return Err(Error::shape("add_row", format!("{r}x{c} + {r2}x{c2}")));
        }
        let bias = self.value(row).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        if c > 0 {
            for chunk in data.chunks_mut(c) {
                chunk.iter_mut().zip(&bias).for_each(|(x, b)| *x += b);
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::AddRow(a, row), rg))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(v, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Elu(a), elu)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn softmax(&mut self, a: Var, axis: Reduce) -> Var {
        let (r, c) = self.shape(a);
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        match axis {
            Reduce::Rows => {
                for i in 0..r {
                    softmax_slice(&x[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
                }
            }
            Reduce::Cols => {
                let mut col = vec![0.0; r];
                let mut res = vec![0.0; r];
                for j in 0..c {
                    for i in 0..r {
                        col[i] = x[i * c + j];
                    }
                    softmax_slice(&col, &mut res);
                    for i in 0..r {
                        out[i * c + j] = res[i];
                    }
                }
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(r, c, out).expect("softmax"), Op::Softmax(a, axis), rg)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                out[i * c + j] = row[j] - lse;
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(r, c, out).expect("log_softmax"), Op::LogSoftmax(a), rg)
    }

    /// Mean over all elements as a `1 x 1` node. The mean of nothing is 0.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = if t.is_empty() { 0.0 } else { t.data().iter().sum::<f64>() / t.len() as f64 };
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Sums each row into an `r x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = dims(t);
        let data = (0..r).map(|i| t.data()[i * c..(i + 1) * c].iter().sum()).collect();
        let rg = self.rg(a);
        self.push(Tensor::matrix(r, 1, data).expect("row_sum"), Op::RowSum(a), rg)
    }

    /// `out[i][j] = u[i] + v[j]` for columns `u (m x 1)` and `v (n x 1)`.
    pub fn outer_add(&mut self, u: Var, v: Var) -> Result<Var> {
        let ((m, cu), (n, cv)) = (self.shape(u), self.shape(v));
        if cu != 1 || cv != 1 {
            return Err(Error::shape("outer_add", format!("{m}x{cu} (+) {n}x{cv}")));
        }
        let (ud, vd) = (self.value(u).data(), self.value(v).data());
        let data = ud.iter().flat_map(|&x| vd.iter().map(move |&y| x + y)).collect();
        let rg = self.rg(u) || self.rg(v);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::OuterAdd(u, v), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.shape(p).0,
            None => return Err(Error::shape("concat", "no inputs")),
        };
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(Error::shape("concat", format!("row counts {rows} and {r}")));
            }
            total += c;
        }
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            let c = t.cols();
            for i in 0..rows {
                data[i * total + offset..i * total + offset + c].copy_from_slice(t.row_slice(i));
            }
            offset += c;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, total, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start > end || end > c {
            return Err(Error::shape("slice_cols", format!("{start}..{end} of {r}x{c}")));
        }
        let w = end - start;
        let t = self.value(a);
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&t.row_slice(i)[start..end]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(r, w, data)?, Op::SliceCols(a, start), rg))
    }

    /// Row `idx[k]` of `a` becomes row `k` of the output.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {r}x{c}")));
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(t.row_slice(i));
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(idx.len(), c, data)?, Op::GatherRows(a, idx.to_vec()), rg))
    }

    /// `out[i] = a[i][cols[i]]` as an `r x 1` column.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if cols.len() != r || cols.iter().any(|&j| j >= c) {
            return Err(Error::shape("pick", format!("{} indices into {r}x{c}", cols.len())));
        }
        let t = self.value(a);
        let data = cols.iter().enumerate().map(|(i, &j)| t.at(i, j)).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(r, 1, data)?, Op::Pick(a, cols.to_vec()), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = dims(t);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = t.data()[i * c + j];
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(c, r, data).expect("transpose"), Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r * c != rows * cols {
            return Err(Error::shape("reshape", format!("{r}x{c} -> {rows}x{cols}")));
        }
        let data = self.value(a).data().to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::Reshape(a), rg))
    }

    /// Reverse sweep from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(Error::shape("backward", format!("loss must be 1x1, got {r}x{c}")));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        let (r, c) = dims(y);
        let mat = |data: Vec<f64>, r: usize, c: usize| Tensor::matrix(r, c, data).expect("adjoint");
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = c;
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    matmul_nt_into(g.data(), self.value(*b).data(), &mut ga, m, n, k);
                    self.accumulate(grads, *a, mat(ga, m, k));
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    matmul_tn_into(self.value(*a).data(), g.data(), &mut gb, m, k, n);
                    self.accumulate(grads, *b, mat(gb, k, n));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                let mut gr = vec![0.0; c];
                for i in 0..r {
                    gr.iter_mut().zip(g.row_slice(i)).for_each(|(s, v)| *s += v);
                }
                self.accumulate(grads, *row, mat(gr, 1, c));
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let ga = g.data().iter().zip(bv).map(|(x, y)| x * y).collect();
                let gb = g.data().iter().zip(av).map(|(x, y)| x * y).collect();
                self.accumulate(grads, *a, mat(ga, r, c));
                self.accumulate(grads, *b, mat(gb, r, c));
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|v| v * s)),
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                let ga = g.data().iter().zip(x).map(|(d, &x)| if x > 0.0 { *d } else { d * slope }).collect();
                self.accumulate(grads, *a, mat(ga, r, c));
            }
            Op::Elu(a) => {
                let x = self.value(*a).data();
                let ga = g
                    .data()
                    .iter()
                    .zip(x.iter().zip(y.data()))
                    .map(|(d, (&x, &y))| if x > 0.0 { *d } else { d * (y + 1.0) })
                    .collect();
                self.accumulate(grads, *a, mat(ga, r, c));
            }
            Op::Softmax(a, axis) => {
                let (yd, gd) = (y.data(), g.data());
                let mut ga = vec![0.0; r * c];
                match axis {
                    Reduce::Rows => {
                        for i in 0..r {
                            let span = i * c..(i + 1) * c;
                            let dot: f64 = yd[span.clone()].iter().zip(&gd[span.clone()]).map(|(p, q)| p * q).sum();
                            for j in span {
                                ga[j] = yd[j] * (gd[j] - dot);
                            }
                        }
                    }
                    Reduce::Cols => {
                        for j in 0..c {
                            let dot: f64 = (0..r).map(|i| yd[i * c + j] * gd[i * c + j]).sum();
                            for i in 0..r {
                                ga[i * c + j] = yd[i * c + j] * (gd[i * c + j] - dot);
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, mat(ga, r, c));
            }
            Op::LogSoftmax(a) => {
                let (yd, gd) = (y.data(), g.data());
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let span = i * c..(i + 1) * c;
                    let total: f64 = gd[span.clone()].iter().sum();
                    for j in span {
                        ga[j] = gd[j] - yd[j].exp() * total;
                    }
                }
                self.accumulate(grads, *a, mat(ga, r, c));
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let ga = g.data().iter().zip(x).map(|(d, x)| d / x).collect();
                self.accumulate(grads, *a, mat(ga, r, c));
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                let ga = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(d, &x)| if x > 0.0 { *d } else if x < 0.0 { -d } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, mat(ga, r, c));
            }
            Op::Mean(a) => {
                let (ar, ac) = self.shape(*a);
                let n = ar * ac;
                if n > 0 {
                    let d = g.item() / n as f64;
                    self.accumulate(grads, *a, mat(vec![d; n], ar, ac));
                }
            }
            Op::Sum(a) => {
                let (ar, ac) = self.shape(*a);
                self.accumulate(grads, *a, mat(vec![g.item(); ar * ac], ar, ac));
            }
            Op::RowSum(a) => {
                let (ar, ac) = self.shape(*a);
                let ga = (0..ar).flat_map(|i| std::iter::repeat_n(g.data()[i], ac)).collect();
                self.accumulate(grads, *a, mat(ga, ar, ac));
            }
            Op::OuterAdd(u, v) => {
                let gu = (0..r).map(|i| g.row_slice(i).iter().sum()).collect();
                let mut gv = vec![0.0; c];
                for i in 0..r {
                    gv.iter_mut().zip(g.row_slice(i)).for_each(|(s, x)| *s += x);
                }
                self.accumulate(grads, *u, mat(gu, r, 1));
                self.accumulate(grads, *v, mat(gv, c, 1));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p).1;
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(r * pc);
                        for i in 0..r {
                            gp.extend_from_slice(&g.row_slice(i)[offset..offset + pc]);
                        }
                        self.accumulate(grads, p, mat(gp, r, pc));
                    }
                    offset += pc;
                }
            }
            Op::SliceCols(a, start) => {
                let (ar, ac) = self.shape(*a);
                let mut ga = vec![0.0; ar * ac];
                for i in 0..ar {
                    ga[i * ac + start..i * ac + start + c].copy_from_slice(g.row_slice(i));
                }
                self.accumulate(grads, *a, mat(ga, ar, ac));
            }
            Op::GatherRows(a, idx) => {
                let (ar, ac) = self.shape(*a);
                let mut ga = vec![0.0; ar * ac];
                for (k, &i) in idx.iter().enumerate() {
                    ga[i * ac..(i + 1) * ac].iter_mut().zip(g.row_slice(k)).for_each(|(s, x)| *s += x);
                }
                self.accumulate(grads, *a, mat(ga, ar, ac));
            }
            Op::Pick(a, cols) => {
                let (ar, ac) = self.shape(*a);
                let mut ga = vec![0.0; ar * ac];
                for (i, &j) in cols.iter().enumerate() {
                    ga[i * ac + j] = g.data()[i];
                }
                self.accumulate(grads, *a, mat(ga, ar, ac));
            }
            Op::Transpose(a) => {
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[j * r + i] = g.data()[i * c + j];
                    }
                }
                self.accumulate(grads, *a, mat(ga, c, r));
            }
            Op::Reshape(a) => {
                let (ar, ac) = self.shape(*a);
                self.accumulate(grads, *a, mat(g.data().to_vec(), ar, ac));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(&[0.0, 0.0]));
        let y = t.softmax(x, Reduce::Rows);
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn attend_matches_matmul_and_ignores_order() {
        let a = Tensor::matrix(2, 3, vec![0.1, 1e16, -1e16, 0.3, 0.2, 0.7]).unwrap();
        let b = Tensor::matrix(3, 2, vec![1.0, 2.0, 1.0, 1.0, 1.0, 3.0]).unwrap();
        let mut t = Tape::new();
        let (va, vb) = (t.param(&a), t.param(&b));
        let y = t.attend(va, vb).unwrap();
        let plain = t.matmul(va, vb).unwrap();
        assert!((t.value(y).at(1, 0) - t.value(plain).at(1, 0)).abs() < 1e-15);
        // permute the shared index
        let pa = Tensor::matrix(2, 3, vec![-1e16, 0.1, 1e16, 0.7, 0.3, 0.2]).unwrap();
        let pb = Tensor::matrix(3, 2, vec![1.0, 3.0, 1.0, 2.0, 1.0, 1.0]).unwrap();
        let mut t2 = Tape::new();
        let (qa, qb) = (t2.param(&pa), t2.param(&pb));
        let y2 = t2.attend(qa, qb).unwrap();
        assert_eq!(t.value(y).data(), t2.value(y2).data());
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        let s2 = t.sum(plain);
        let g2 = t.backward(s2).unwrap();
        assert_eq!(g.get(va).unwrap().data(), g2.get(va).unwrap().data());
    }

    #[test]
    fn elu_definition() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(&[2.0, 0.0, -1.0]));
        let y = t.elu(x);
        let v = t.value(y).data();
        assert_eq!(v[0], 2.0);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn mean_gradient_is_one_over_n() {
        let mut t = Tape::new();
        let x = t.param(&Tensor::row(&[1.0, 2.0, 3.0, 4.0]));
        let m = t.mean(x);
        let g = t.backward(m).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("2x3"), "{err}");
        let c = t.constant(Tensor::zeros(&[3, 2]));
        assert!(t.add(a, c).is_err());
    }

    #[test]
    fn empty_reductions() {
        let mut t = Tape::new();
        let a = t.param(&Tensor::zeros(&[0, 3]));
        let s = t.softmax(a, Reduce::Rows);
        assert_eq!(t.shape(s), (0, 3));
        let w = t.param(&Tensor::zeros(&[3, 4]));
        let p = t.matmul(s, w).unwrap();
        let m = t.mean(p);
        assert_eq!(t.value(m).item(), 0.0);
        let g = t.backward(m).unwrap();
        let gw = g.get_or_zeros(w, &Tensor::zeros(&[3, 4]));
        assert!(gw.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::row(&[1.0, 2.0]));
        let p = t.param(&Tensor::row(&[3.0, 4.0]));
        let h = t.hadamard(c, p).unwrap();
        let s = t.sum(h);
        let g = t.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data(), &[1.0, 2.0]);
    }
}
