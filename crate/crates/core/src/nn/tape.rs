//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! referenced from the [`ParameterStore`] without copying; calling
//! [`Tape::backward`] returns per-parameter gradients which the caller
//! accumulates into the store.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParameterStore};
use crate::error::{Error, Result};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Owned row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "matrix",
                detail: format!("{} values for {rows}x{cols}", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm { x: Var, rstd: Vec<f64> },
    Softmax(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { x: Var, index: Vec<usize> },
    SumRows(Var),
    Sum(Var),
    CrossEntropy { logits: Var, targets: Vec<usize> },
    Dropout { x: Var, mask: Vec<f64> },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Value,
    op: Op,
}

/// Gradients of the parameters reached by a backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    pub entries: Vec<(ParamId, Vec<f64>)>,
}

pub struct Tape<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
    dropout_rng: Option<ChaCha8Rng>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            dropout_rng: None,
        }
    }

    /// Enables dropout with the given generator.
    pub fn with_dropout(mut self, rng: ChaCha8Rng) -> Self {
        self.dropout_rng = Some(rng);
        self
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value: Value::Owned(data),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(id) => self.store.value(*id),
        }
    }

    pub fn to_matrix(&self, v: Var) -> Matrix {
        let (rows, cols) = self.shape(v);
        Matrix {
            rows,
            cols,
            data: self.value(v).to_vec(),
        }
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m.rows, m.cols, m.data, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let (rows, cols) = self.store.shape(id);
        self.nodes.push(Node {
            rows,
            cols,
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// `a (m x k) * b (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(shape_err("matmul", format!("{m}x{k} * {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(m, n, out, Op::MatMul(a, b)))
    }

    /// `a (m x k) * b^T` where `b` is `n x k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(shape_err("matmul_t", format!("{m}x{k} * ({n}x{k2})^T")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &av[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(ar, &bv[j * k..(j + 1) * k]);
            }
        }
        Ok(self.push(m, n, out, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", format!("{:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(r, c, out, Op::Add(a, b)))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(shape_err("add_row", format!("{r}x{c} + {:?}", self.shape(row))));
        }
        let rv = self.value(row);
        let out = self.value(a).chunks(c).flat_map(|x| x.iter().zip(rv).map(|(p, q)| p + q)).collect();
        Ok(self.push(r, c, out, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(shape_err("mul_row", format!("{r}x{c} * {:?}", self.shape(row))));
        }
        let rv = self.value(row);
        let out = self.value(a).chunks(c).flat_map(|x| x.iter().zip(rv).map(|(p, q)| p * q)).collect();
        Ok(self.push(r, c, out, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * s).collect();
        self.push(r, c, out, Op::Scale(a, s))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self
            .value(a)
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044_715 * x * x * x)).tanh()))
            .collect();
        self.push(r, c, out, Op::Gelu(a))
    }

    /// Row-wise normalization to zero mean and unit variance, no affine.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = Vec::with_capacity(r * c);
        let mut rstd = Vec::with_capacity(r);
        for row in self.value(a).chunks(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            out.extend(row.iter().map(|x| (x - mean) * s));
            rstd.push(s);
        }
        self.push(r, c, out, Op::LayerNorm { x: a, rstd })
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` for `j > i` is masked.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; r * c];
        for (i, (row, o)) in self.value(a).chunks(c).zip(out.chunks_mut(c)).enumerate() {
            let limit = if causal { (i + 1).min(c) } else { c };
            softmax_into(&row[..limit], &mut o[..limit]);
        }
        self.push(r, c, out, Op::Softmax(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + width > c {
            return Err(shape_err("slice_cols", format!("cols {start}..{} of {c}", start + width)));
        }
        let out = self.value(a).chunks(c).flat_map(|row| row[start..start + width].iter().copied()).collect();
        Ok(self.push(r, width, out, Op::SliceCols { x: a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.shape(parts[0]).0;
        if parts.iter().any(|p| self.shape(*p).0 != r) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let c: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for p in parts {
                let pc = self.shape(*p).1;
                out.extend_from_slice(&self.value(*p)[i * pc..(i + 1) * pc]);
            }
        }
        Ok(self.push(r, c, out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.shape(parts[0]).1;
        if parts.iter().any(|p| self.shape(*p).1 != c) {
            return Err(shape_err("concat_rows", "column counts differ".into()));
        }
        let r: usize = parts.iter().map(|p| self.shape(*p).0).sum();
        let mut out = Vec::with_capacity(r * c);
        for p in parts {
            out.extend_from_slice(self.value(*p));
        }
        Ok(self.push(r, c, out, Op::ConcatRows(parts.to_vec())))
    }

    /// Selects rows by index (embedding lookup when `a` is a table).
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(bad) = index.iter().find(|&&i| i >= r) {
            return Err(shape_err("gather_rows", format!("row {bad} of {r}")));
        }
        let v = self.value(a);
        let out = index.iter().flat_map(|&i| v[i * c..(i + 1) * c].iter().copied()).collect();
        Ok(self.push(index.len(), c, out, Op::GatherRows { x: a, index: index.to_vec() }))
    }

    /// Column sums as a `1 x n` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (_, c) = self.shape(a);
        let mut out = vec![0.0; c];
        for row in self.value(a).chunks(c) {
            out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
        }
        self.push(1, c, out, Op::SumRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    /// Summed cross entropy of each logit row against its target index.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if targets.len() != r {
            return Err(shape_err("cross_entropy", format!("{} targets for {r} rows", targets.len())));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= c) {
            return Err(shape_err("cross_entropy", format!("target {t} of {c} classes")));
        }
        let mut loss = 0.0;
        for (row, &t) in self.value(logits).chunks(c).zip(targets) {
            loss += log_sum_exp(row) - row[t];
        }
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Inverted dropout; identity unless dropout was enabled on the tape.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if p <= 0.0 || self.dropout_rng.is_none() {
            return a;
        }
        let (r, c) = self.shape(a);
        let rng = self.dropout_rng.as_mut().expect("checked above");
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..r * c).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let out = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        self.push(r, c, out, Op::Dropout { x: a, mask })
    }

    /// Back-propagates from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(shape_err("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], v: Var, len: usize) -> &'g mut [f64] {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let (rows, cols) = (node.rows, node.cols);
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.entries.push((*id, g)),
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = cols;
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs_grad(*a) {
                        let ga = acc(&mut grads, *a, m * k);
                        for i in 0..m {
                            let gr = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                ga[i * k + p] += dot(gr, &bv[p * n..(p + 1) * n]);
                            }
                        }
                    }
                    if self.needs_grad(*b) {
                        let gb = acc(&mut grads, *b, k * n);
                        for i in 0..m {
                            let gr = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                axpy(av[i * k + p], gr, &mut gb[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
                Op::MatMulT(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = cols;
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs_grad(*a) {
                        let ga = acc(&mut grads, *a, m * k);
                        for i in 0..m {
                            for j in 0..n {
                                axpy(g[i * n + j], &bv[j * k..(j + 1) * k], &mut ga[i * k..(i + 1) * k]);
                            }
                        }
                    }
                    if self.needs_grad(*b) {
                        let gb = acc(&mut grads, *b, n * k);
                        for i in 0..m {
                            for j in 0..n {
                                axpy(g[i * n + j], &av[i * k..(i + 1) * k], &mut gb[j * k..(j + 1) * k]);
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.needs_grad(v) {
                            acc(&mut grads, v, g.len()).iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs_grad(*a) {
                        acc(&mut grads, *a, g.len()).iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    }
                    if self.needs_grad(*row) {
                        let gr = acc(&mut grads, *row, cols);
                        for chunk in g.chunks(cols) {
                            gr.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::MulRow(a, row) => {
                    let (av, rv) = (self.value(*a), self.value(*row));
                    if self.needs_grad(*a) {
                        let ga = acc(&mut grads, *a, g.len());
                        for (i, x) in ga.iter_mut().enumerate() {
                            *x += g[i] * rv[i % cols];
                        }
                    }
                    if self.needs_grad(*row) {
                        let gr = acc(&mut grads, *row, cols);
                        for (i, (gv, x)) in g.iter().zip(av).enumerate() {
                            gr[i % cols] += gv * x;
                        }
                    }
                }
                Op::Scale(a, s) => {
                    if self.needs_grad(*a) {
                        acc(&mut grads, *a, g.len()).iter_mut().zip(&g).for_each(|(x, y)| *x += s * y);
                    }
                }
                Op::Gelu(a) => {
                    if self.needs_grad(*a) {
                        let av = self.value(*a);
                        let ga = acc(&mut grads, *a, g.len());
                        for ((o, &x), gv) in ga.iter_mut().zip(av).zip(&g) {
                            let u = GELU_C * (x + 0.044_715 * x * x * x);
                            let t = u.tanh();
                            let du = GELU_C * (1.0 + 3.0 * 0.044_715 * x * x);
                            *o += gv * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
                        }
                    }
                }
                Op::LayerNorm { x, rstd } => {
                    if self.needs_grad(*x) {
                        let y = self.value(Var(idx));
                        let gx = acc(&mut grads, *x, g.len());
                        for i in 0..rows {
                            let gr = &g[i * cols..(i + 1) * cols];
                            let yr = &y[i * cols..(i + 1) * cols];
                            let mean_g = gr.iter().sum::<f64>() / cols as f64;
                            let mean_gy = dot(gr, yr) / cols as f64;
                            for j in 0..cols {
                                gx[i * cols + j] += rstd[i] * (gr[j] - mean_g - yr[j] * mean_gy);
                            }
                        }
                    }
                }
                Op::Softmax(a) => {
                    if self.needs_grad(*a) {
                        let y = self.value(Var(idx));
                        let ga = acc(&mut grads, *a, g.len());
                        for i in 0..rows {
                            let gr = &g[i * cols..(i + 1) * cols];
                            let yr = &y[i * cols..(i + 1) * cols];
                            let s = dot(gr, yr);
                            for j in 0..cols {
                                ga[i * cols + j] += yr[j] * (gr[j] - s);
                            }
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    if self.needs_grad(*x) {
                        let xc = self.shape(*x).1;
                        let gx = acc(&mut grads, *x, rows * xc);
                        for i in 0..rows {
                            for j in 0..cols {
                                gx[i * xc + start + j] += g[i * cols + j];
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.shape(*p).1;
                        if self.needs_grad(*p) {
                            let gp = acc(&mut grads, *p, rows * pc);
                            for i in 0..rows {
                                for j in 0..pc {
                                    gp[i * pc + j] += g[i * cols + offset + j];
                                }
                            }
                        }
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.shape(*p).0 * cols;
                        if self.needs_grad(*p) {
                            acc(&mut grads, *p, len)
                                .iter_mut()
                                .zip(&g[offset..offset + len])
                                .for_each(|(x, y)| *x += y);
                        }
                        offset += len;
                    }
                }
                Op::GatherRows { x, index } => {
                    if self.needs_grad(*x) {
                        let xr = self.shape(*x).0;
                        let gx = acc(&mut grads, *x, xr * cols);
                        for (i, &src) in index.iter().enumerate() {
                            axpy(1.0, &g[i * cols..(i + 1) * cols], &mut gx[src * cols..(src + 1) * cols]);
                        }
                    }
                }
                Op::SumRows(a) => {
                    if self.needs_grad(*a) {
                        let ar = self.shape(*a).0;
                        let ga = acc(&mut grads, *a, ar * cols);
                        for chunk in ga.chunks_mut(cols) {
                            chunk.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::Sum(a) => {
                    if self.needs_grad(*a) {
                        let len = self.value(*a).len();
                        acc(&mut grads, *a, len).iter_mut().for_each(|x| *x += g[0]);
                    }
                }
                Op::CrossEntropy { logits, targets } => {
                    if self.needs_grad(*logits) {
                        let (lr, lc) = self.shape(*logits);
                        let lv = self.value(*logits);
                        let gl = acc(&mut grads, *logits, lr * lc);
                        let mut p = vec![0.0; lc];
                        for (i, &t) in targets.iter().enumerate() {
                            softmax_into(&lv[i * lc..(i + 1) * lc], &mut p);
                            p[t] -= 1.0;
                            axpy(g[0], &p, &mut gl[i * lc..(i + 1) * lc]);
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    if self.needs_grad(*x) {
                        acc(&mut grads, *x, g.len())
                            .iter_mut()
                            .zip(g.iter().zip(mask))
                            .for_each(|(o, (gv, m))| *o += gv * m);
                    }
                }
            }
        }
        Ok(out)
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Leaf)
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s != 0.0 {
                axpy(s, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(o, v)| *o += s * v);
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Init;
    use rand::SeedableRng;

    fn store_with(values: &[(&str, usize, usize)], seed: u64) -> ParameterStore {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, r, c) in values {
            store.add(name, *r, *c, Init::Normal(0.5), &mut rng).unwrap();
        }
        store
    }

    /// Central finite differences of `f` with respect to every parameter.
    fn finite_diff(store: &mut ParameterStore, f: &dyn Fn(&ParameterStore) -> f64) -> Vec<Vec<f64>> {
        let h = 1e-5;
        let mut out = Vec::new();
        for id in store.ids() {
            let mut g = Vec::new();
            for i in 0..store.value(id).len() {
                let orig = store.value(id)[i];
                store.value_mut(id)[i] = orig + h;
                let up = f(store);
                store.value_mut(id)[i] = orig - h;
                let down = f(store);
                store.value_mut(id)[i] = orig;
                g.push((up - down) / (2.0 * h));
            }
            out.push(g);
        }
        out
    }

    fn check(store: &mut ParameterStore, f: &dyn Fn(&mut Tape) -> Var) {
        let analytic = {
            let mut tape = Tape::new(store);
            let loss = f(&mut tape);
            let grads = tape.backward(loss).unwrap();
            let mut dense: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
            for (id, g) in grads.entries {
                dense[id.index()].iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            dense
        };
        let numeric = finite_diff(store, &|s| {
            let mut tape = Tape::new(s);
            let loss = f(&mut tape);
            tape.value(loss)[0]
        });
        for (a, n) in analytic.iter().flatten().zip(numeric.iter().flatten()) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-5, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let store = store_with(&[("w", 2, 3)], 1);
        let mut tape = Tape::new(&store);
        let w = tape.param(store.id("w").unwrap());
        let loss = tape.sum(w);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.entries.len(), 1);
        assert_eq!(grads.entries[0].1, vec![1.0; 6]);
    }

    #[test]
    fn non_scalar_loss_is_error() {
        let store = store_with(&[("w", 2, 3)], 1);
        let mut tape = Tape::new(&store);
        let w = tape.param(store.id("w").unwrap());
        assert!(tape.backward(w).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let store = store_with(&[("w", 3, 2)], 1);
        let mut tape = Tape::new(&store);
        let x = tape.constant(Matrix::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let w = tape.param(store.id("w").unwrap());
        let y = tape.matmul(x, w).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.entries.len(), 1);
        assert_eq!(grads.entries[0].1, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let store = store_with(&[("a", 2, 3), ("b", 2, 3)], 1);
        let mut tape = Tape::new(&store);
        let a = tape.param(store.id("a").unwrap());
        let b = tape.param(store.id("b").unwrap());
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("2x3"), "{err}");
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let store = ParameterStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Matrix::new(1, 4, vec![3.0; 4]).unwrap());
        let y = tape.layer_norm(x);
        assert!(tape.value(y).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut store = store_with(
            &[("a", 3, 4), ("b", 4, 5), ("c", 5, 5), ("row", 1, 5), ("tab", 6, 5)],
            7,
        );
        let ids: Vec<ParamId> = ["a", "b", "c", "row", "tab"].iter().map(|n| store.id(n).unwrap()).collect();
        let f = move |t: &mut Tape| {
            let a = t.param(ids[0]);
            let b = t.param(ids[1]);
            let c = t.param(ids[2]);
            let row = t.param(ids[3]);
            let tab = t.param(ids[4]);
            let ab = t.matmul(a, b).unwrap();
            let ab = t.add_row(ab, row).unwrap();
            let ab = t.mul_row(ab, row).unwrap();
            let g = t.gelu(ab);
            let n = t.layer_norm(g);
            let e = t.gather_rows(tab, &[0, 2, 2]).unwrap();
            let n = t.add(n, e).unwrap();
            let s = t.matmul_t(n, c).unwrap();
            let s = t.scale(s, 0.7);
            let p = t.softmax(s, true);
            let left = t.slice_cols(p, 0, 2).unwrap();
            let right = t.slice_cols(p, 2, 3).unwrap();
            let joined = t.concat_cols(&[right, left]).unwrap();
            let stacked = t.concat_rows(&[joined, n]).unwrap();
            let pooled = t.sum_rows(stacked);
            let both = t.concat_rows(&[stacked, pooled]).unwrap();
            let ce = t.cross_entropy(both, &[0, 1, 2, 3, 4, 0, 1]).unwrap();
            let extra = t.sum(g);
            let extra = t.scale(extra, 0.01);
            t.add(ce, extra).unwrap()
        };
        check(&mut store, &f);
    }
}
