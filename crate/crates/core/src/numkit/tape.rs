//! Reverse-mode automatic differentiation over rank-2 tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each operation appends a
//! node holding its value; [`Tape::backward`] walks the nodes in reverse and
//! accumulates adjoints. Nodes that cannot reach a parameter are skipped.

use super::tensor::{gemm, softmax_slice, Tensor};
use super::ParamSet;
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Transpose(Var),
    Reshape(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Sigmoid(Var),
    Silu(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    EntropyRows(Var),
    RowNorm(Var),
    RowSums(Var),
    PairwiseDistance(Var, Var),
    GroupSumRows(Var, usize),
    GroupMeanRows(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    PickPerRow(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the differentiated output with respect to `v`, if `v`
    /// influenced it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn mat(t: &Tensor) -> (usize, usize) {
    t.dims2()
}

fn expect_same(a: &Tensor, b: &Tensor, what: &str) {
    assert_eq!(
        mat(a),
        mat(b),
        "{what}: operand shapes {:?} and {:?} differ",
        a.shape(),
        b.shape()
    );
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, &[])
    }

    /// Leaf bound to a named parameter of `params`.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Var {
        let value = params
            .value(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .clone();
        self.push(value, Op::Param(name.to_string()), &[])
    }

    /// Leaf that receives a gradient but is not tied to a parameter set.
    /// Used by gradient checks that differentiate with respect to inputs.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Param(String::new()), &[])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b)).unwrap_or_else(|e| panic!("{e}"));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        expect_same(ta, tb, "element-wise op");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `a[r×c] + row[1×c]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        self.broadcast(a, row, true, Op::AddRow(a, row), |x, y| x + y)
    }

    /// `a[r×c] * row[1×c]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        self.broadcast(a, row, true, Op::MulRow(a, row), |x, y| x * y)
    }

    /// `a[r×c] * col[r×1]` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        self.broadcast(a, col, false, Op::MulCol(a, col), |x, y| x * y)
    }

    /// `a[r×c] / col[r×1]` broadcast over columns.
    pub fn div_col(&mut self, a: Var, col: Var) -> Var {
        self.broadcast(a, col, false, Op::DivCol(a, col), |x, y| x / y)
    }

    fn broadcast(
        &mut self,
        a: Var,
        b: Var,
        along_row: bool,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, c) = mat(ta);
        let expected = if along_row { c } else { r };
        assert_eq!(
            tb.len(),
            expected,
            "broadcast operand has {} values, expected {}",
            tb.len(),
            expected
        );
        let bd = tb.data();
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in ta.data().chunks(c.max(1)).enumerate() {
            for (j, &x) in row.iter().enumerate() {
                data.push(f(x, if along_row { bd[j] } else { bd[i] }));
            }
        }
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(out, op, &[a, b])
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op, &[a])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| x * k)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + k)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    /// Natural logarithm; inputs must be strictly positive.
    pub fn ln(&mut self, a: Var) -> Var {
        debug_assert!(self.value(a).data().iter().all(|&x| x > 0.0));
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Silu(a), |x| x * sigmoid(x))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Clamps into `[lo, hi]`; the gradient vanishes outside the open range.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).reshape(shape).unwrap_or_else(|e| panic!("{e}"));
        self.push(out, Op::Reshape(a), &[a])
    }

    /// Row-wise stabilized softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let data = t.data().chunks(c).flat_map(softmax_slice).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    /// Row-wise Shannon entropy in nats, `[r×c] -> [r×1]`, with `0 ln 0 = 0`.
    pub fn entropy_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = mat(t);
        let data = t
            .data()
            .chunks(c)
            .map(|row| -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
            .collect();
        let out = Tensor::from_parts(vec![r, 1], data);
        self.push(out, Op::EntropyRows(a), &[a])
    }

    /// Euclidean norm of every row, `[r×c] -> [r×1]`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = mat(t);
        let data = t
            .data()
            .chunks(c)
            .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let out = Tensor::from_parts(vec![r, 1], data);
        self.push(out, Op::RowNorm(a), &[a])
    }

    /// Sum of every row, `[r×c] -> [r×1]`.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = mat(t);
        let data = t.data().chunks(c).map(|row| row.iter().sum()).collect();
        let out = Tensor::from_parts(vec![r, 1], data);
        self.push(out, Op::RowSums(a), &[a])
    }

    /// Euclidean distances between every row of `a[r×d]` and every row of
    /// `b[s×d]`, giving `[r×s]`.
    pub fn pairwise_distance(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, d) = mat(ta);
        let (s, d2) = mat(tb);
        assert_eq!(d, d2, "pairwise_distance: feature dimensions differ");
        let mut data = Vec::with_capacity(r * s);
        for x in ta.data().chunks(d) {
            for y in tb.data().chunks(d) {
                data.push(x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt());
            }
        }
        let out = Tensor::from_parts(vec![r, s], data);
        self.push(out, Op::PairwiseDistance(a, b), &[a, b])
    }

    fn group_rows(&mut self, a: Var, group: usize, mean: bool) -> Var {
        let t = self.value(a);
        let (r, c) = mat(t);
        assert!(group > 0 && r % group == 0, "group size {group} does not divide {r} rows");
        let mut data = vec![0.0; (r / group) * c];
        for (i, row) in t.data().chunks(c).enumerate() {
            let dst = &mut data[(i / group) * c..(i / group + 1) * c];
            for (o, x) in dst.iter_mut().zip(row) {
                *o += x;
            }
        }
        if mean {
            for v in &mut data {
                *v /= group as f64;
            }
        }
        let out = Tensor::from_parts(vec![r / group, c], data);
        let op = if mean {
            Op::GroupMeanRows(a, group)
        } else {
            Op::GroupSumRows(a, group)
        };
        self.push(out, op, &[a])
    }

    /// Sums consecutive blocks of `group` rows.
    pub fn group_sum_rows(&mut self, a: Var, group: usize) -> Var {
        self.group_rows(a, group, false)
    }

    /// Averages consecutive blocks of `group` rows.
    pub fn group_mean_rows(&mut self, a: Var, group: usize) -> Var {
        self.group_rows(a, group, true)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(out, Op::MeanAll(a), &[a])
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        let (r, c) = mat(t);
        assert!(start + len <= c);
        let data = t
            .data()
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let out = Tensor::from_parts(vec![r, len], data);
        self.push(out, Op::SliceCols(a, start), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows(), r, "concat_cols: row counts differ");
                data.extend_from_slice(t.row(i));
            }
        }
        let out = Tensor::from_parts(vec![r, total], data);
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), c, "concat_rows: column counts differ");
            data.extend_from_slice(t.data());
        }
        let r = data.len() / c.max(1);
        let out = Tensor::from_parts(vec![r, c], data);
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Gathers rows by index; indices may repeat.
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_parts(vec![idx.len(), c], data);
        self.push(out, Op::SelectRows(a, idx.to_vec()), &[a])
    }

    /// `out[r] = a[r, idx[r]]`, giving `[r×1]`.
    pub fn pick_per_row(&mut self, a: Var, idx: &[usize]) -> Var {
        let t = self.value(a);
        assert_eq!(t.rows(), idx.len());
        let data = idx.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        let out = Tensor::from_parts(vec![idx.len(), 1], data);
        self.push(out, Op::PickPerRow(a, idx.to_vec()), &[a])
    }

    /// Back-propagates from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::from_parts(out.shape().to_vec(), vec![1.0]));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta) {
                    *a += b;
                }
            }
            slot @ None => {
                let shape = self.nodes[v.0].value.shape().to_vec();
                *slot = Some(Tensor::from_parts(shape, delta));
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let y = node.value.data();
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = mat(ta);
                let n = tb.cols();
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, gd, false, tb.data(), true, 0.0, &mut da);
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, 1.0, ta.data(), true, gd, false, 0.0, &mut db);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    self.accumulate(grads, *a, gd.iter().zip(tb).map(|(g, y)| g * y).collect());
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, gd.iter().zip(ta).map(|(g, x)| g * x).collect());
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, gd.to_vec());
                if self.wants(*row) {
                    let c = g.cols();
                    let mut dr = vec![0.0; c];
                    for chunk in gd.chunks(c) {
                        for (d, x) in dr.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                    self.accumulate(grads, *row, dr);
                }
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (self.value(*a), self.value(*row).data());
                let c = ta.cols();
                if self.wants(*a) {
                    let da = gd.iter().enumerate().map(|(i, g)| g * tr[i % c]).collect();
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*row) {
                    let mut dr = vec![0.0; c];
                    for (i, (g, x)) in gd.iter().zip(ta.data()).enumerate() {
                        dr[i % c] += g * x;
                    }
                    self.accumulate(grads, *row, dr);
                }
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col).data());
                let c = ta.cols();
                if self.wants(*a) {
                    let da = gd.iter().enumerate().map(|(i, g)| g * tc[i / c]).collect();
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*col) {
                    let mut dc = vec![0.0; tc.len()];
                    for (i, (g, x)) in gd.iter().zip(ta.data()).enumerate() {
                        dc[i / c] += g * x;
                    }
                    self.accumulate(grads, *col, dc);
                }
            }
            Op::DivCol(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col).data());
                let c = ta.cols();
                if self.wants(*a) {
                    let da = gd.iter().enumerate().map(|(i, g)| g / tc[i / c]).collect();
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*col) {
                    let mut dc = vec![0.0; tc.len()];
                    for (i, (g, x)) in gd.iter().zip(ta.data()).enumerate() {
                        let s = tc[i / c];
                        dc[i / c] -= g * x / (s * s);
                    }
                    self.accumulate(grads, *col, dc);
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, gd.iter().map(|g| g * k).collect()),
            Op::AddScalar(a) | Op::Reshape(a) => self.accumulate(grads, *a, gd.to_vec()),
            Op::Transpose(a) => {
                let (r, c) = mat(g);
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[j * r + i] = gd[i * c + j];
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::Exp(a) => self.accumulate(grads, *a, gd.iter().zip(y).map(|(g, y)| g * y).collect()),
            Op::Ln(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, gd.iter().zip(x).map(|(g, x)| g / x).collect());
            }
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                let da = gd.iter().zip(x).map(|(g, &x)| g * sigmoid(x)).collect();
                self.accumulate(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                let da = gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *a, da);
            }
            Op::Silu(a) => {
                let x = self.value(*a).data();
                let da = gd
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| {
                        let s = sigmoid(x);
                        g * (s + x * s * (1.0 - s))
                    })
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let da = gd.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *a, da);
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                let da = gd
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > *lo && x < *hi { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::SoftmaxRows(a) => {
                let c = g.cols();
                let mut da = Vec::with_capacity(gd.len());
                for (gr, yr) in gd.chunks(c).zip(y.chunks(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    da.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                }
                self.accumulate(grads, *a, da);
            }
            Op::EntropyRows(a) => {
                let t = self.value(*a);
                let c = t.cols();
                let da = t
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| if p > 0.0 { -gd[i / c] * (p.ln() + 1.0) } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::RowNorm(a) => {
                let t = self.value(*a);
                let c = t.cols();
                let da = t
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let n = y[i / c];
                        if n > 0.0 {
                            gd[i / c] * x / n
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::RowSums(a) => {
                let c = self.value(*a).cols();
                let da = (0..gd.len() * c).map(|i| gd[i / c]).collect();
                self.accumulate(grads, *a, da);
            }
            Op::PairwiseDistance(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let d = ta.cols();
                let s = tb.rows();
                let mut da = vec![0.0; ta.len()];
                let mut db = vec![0.0; tb.len()];
                for (i, x) in ta.data().chunks(d).enumerate() {
                    for (j, z) in tb.data().chunks(d).enumerate() {
                        let dist = y[i * s + j];
                        if dist <= 0.0 {
                            continue;
                        }
                        let coef = gd[i * s + j] / dist;
                        for k in 0..d {
                            let diff = coef * (x[k] - z[k]);
                            da[i * d + k] += diff;
                            db[j * d + k] -= diff;
                        }
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::GroupSumRows(a, group) | Op::GroupMeanRows(a, group) => {
                let c = g.cols();
                let scale = if matches!(node.op, Op::GroupMeanRows(..)) {
                    1.0 / *group as f64
                } else {
                    1.0
                };
                let rows = self.value(*a).rows();
                let mut da = Vec::with_capacity(rows * c);
                for r in 0..rows {
                    da.extend(gd[(r / group) * c..(r / group + 1) * c].iter().map(|g| g * scale));
                }
                self.accumulate(grads, *a, da);
            }
            Op::SumAll(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gd[0]; n]);
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gd[0] / n as f64; n]);
            }
            Op::SliceCols(a, start) => {
                let ta = self.value(*a);
                let c = ta.cols();
                let w = g.cols();
                let mut da = vec![0.0; ta.len()];
                for (r, row) in gd.chunks(w).enumerate() {
                    da[r * c + start..r * c + start + w].copy_from_slice(row);
                }
                self.accumulate(grads, *a, da);
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        let dp = gd
                            .chunks(total)
                            .flat_map(|row| row[offset..offset + w].iter().copied())
                            .collect();
                        self.accumulate(grads, p, dp);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, gd[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::SelectRows(a, idx) => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut da = vec![0.0; ta.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for k in 0..c {
                        da[i * c + k] += gd[r * c + k];
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::PickPerRow(a, idx) => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut da = vec![0.0; ta.len()];
                for (r, &j) in idx.iter().enumerate() {
                    da[r * c + j] += gd[r];
                }
                self.accumulate(grads, *a, da);
            }
        }
    }

    /// Names and gradients of every parameter leaf, in tape order. A
    /// parameter bound more than once appears once per binding.
    pub fn param_grads<'a>(
        &'a self,
        grads: &'a Gradients,
    ) -> impl Iterator<Item = (&'a str, &'a Tensor)> + 'a {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| match &n.op {
            Op::Param(name) if !name.is_empty() => grads.grads[i].as_ref().map(|g| (name.as_str(), g)),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Central-difference check of `f` with respect to a free input tensor.
    fn check_input_grad(input: Tensor, f: impl Fn(&mut Tape, Var) -> Var) {
        let mut tape = Tape::new();
        let x = tape.variable(input.clone());
        let out = f(&mut tape, x);
        let grads = tape.backward(out).unwrap();
        let analytic = grads.wrt(x).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        let h = 1e-5;
        for i in 0..input.len() {
            let eval = |delta: f64| {
                let mut t = Tape::new();
                let mut shifted = input.clone();
                shifted.data_mut()[i] += delta;
                let v = t.constant(shifted);
                let o = f(&mut t, v);
                t.value(o).item()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - fd).abs() / (a.abs().max(fd.abs()).max(1e-6));
            assert!(err < 1e-5, "component {i}: analytic {a}, finite difference {fd}");
        }
    }

    fn random(seed: u64, r: usize, c: usize) -> Tensor {
        let mut rng = crate::seeds::rng(seed);
        Tensor::from_parts(vec![r, c], (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect())
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let p = tape.variable(Tensor::vector(&[1.0, -2.0, 3.0]));
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(p).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn dot_gradient_is_twice_input() {
        let mut tape = Tape::new();
        let p = tape.variable(Tensor::vector(&[0.5, -2.0, 3.0]));
        let sq = tape.mul(p, p);
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(p).unwrap().data(), &[1.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let p = tape.variable(Tensor::vector(&[1.0, 2.0]));
        assert!(matches!(tape.backward(p), Err(Error::Usage(_))));
    }

    #[test]
    fn elementwise_and_broadcast_ops() {
        let w = random(1, 3, 4);
        let col = random(2, 3, 1).map(|v| v.abs() + 0.5);
        let row = random(3, 1, 4);
        check_input_grad(random(4, 3, 4), |t, x| {
            let w = t.constant(w.clone());
            let col = t.constant(col.clone());
            let row = t.constant(row.clone());
            let a = t.mul(x, w);
            let b = t.add_row(a, row);
            let c = t.mul_row(b, row);
            let d = t.div_col(c, col);
            let e = t.mul_col(d, col);
            let f = t.sub(e, x);
            let g = t.silu(f);
            let h = t.softplus(g);
            let i = t.sigmoid(h);
            let j = t.scale(i, 1.7);
            let k = t.add_scalar(j, 0.3);
            let l = t.exp(k);
            let m = t.ln(l);
            t.mean(m)
        });
    }

    #[test]
    fn broadcast_operand_gradients() {
        let a = random(5, 3, 4);
        check_input_grad(random(6, 3, 1).map(|v| v.abs() + 0.5), |t, col| {
            let a = t.constant(a.clone());
            let x = t.div_col(a, col);
            let y = t.mul_col(x, col);
            let z = t.mul_col(y, col);
            let s = t.silu(z);
            t.sum(s)
        });
        check_input_grad(random(7, 1, 4), |t, row| {
            let a = t.constant(a.clone());
            let x = t.mul_row(a, row);
            let y = t.add_row(x, row);
            let s = t.silu(y);
            t.sum(s)
        });
    }

    #[test]
    fn matrix_ops() {
        let b = random(8, 4, 5);
        check_input_grad(random(9, 3, 4), |t, x| {
            let b = t.constant(b.clone());
            let y = t.matmul(x, b);
            let yt = t.transpose(y);
            let z = t.matmul(yt, x);
            let s = t.softmax_rows(z);
            let e = t.entropy_rows(s);
            t.sum(e)
        });
        check_input_grad(random(10, 4, 5), |t, bvar| {
            let a = t.constant(random(11, 3, 4));
            let y = t.matmul(a, bvar);
            let n = t.row_norm(y);
            let r = t.row_sums(y);
            let p = t.mul(n, r);
            t.sum(p)
        });
    }

    #[test]
    fn structural_ops() {
        check_input_grad(random(12, 6, 4), |t, x| {
            let g = t.group_mean_rows(x, 2);
            let s = t.group_sum_rows(x, 3);
            let sel = t.select_rows(x, &[0, 0, 5]);
            let gs = t.slice_cols(g, 1, 2);
            let ss = t.slice_cols(s, 0, 2);
            let cc = t.concat_rows(&[gs, ss]);
            let sel2 = t.slice_cols(sel, 2, 2);
            let all = t.concat_rows(&[cc, sel2]);
            let wide = t.concat_cols(&[all, all]);
            let pk = t.pick_per_row(wide, &[0, 3, 1, 2, 0, 1, 3, 2]);
            let r = t.reshape(pk, &[2, 4]);
            let c = t.clamp(r, -0.8, 0.8);
            let sq = t.mul(c, r);
            t.sum(sq)
        });
    }

    #[test]
    fn distance_gradient() {
        let b = random(13, 3, 4);
        check_input_grad(random(14, 5, 4), |t, x| {
            let b = t.constant(b.clone());
            let d = t.pairwise_distance(x, b);
            let n = t.neg(d);
            let p = t.softmax_rows(n);
            let e = t.entropy_rows(p);
            t.sum(e)
        });
    }

    #[test]
    fn coincident_points_have_zero_distance_and_finite_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let c = tape.constant(Tensor::from_rows(&[[1.0, 2.0], [0.0, 0.0]]).unwrap());
        let d = tape.pairwise_distance(x, c);
        assert_eq!(tape.value(d).get(0, 0), 0.0);
        let s = tape.sum(d);
        let g = tape.backward(s).unwrap();
        assert!(g.wrt(x).unwrap().is_finite());
    }
}
