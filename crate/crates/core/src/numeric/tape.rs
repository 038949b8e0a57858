//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] owns every intermediate value. Operations append a node and
//! return a [`Var`] handle; [`Tape::backward`] walks the nodes in reverse
//! insertion order, which is a valid topological order because a node can
//! only reference handles that already exist.

use super::linalg;
use super::{NumericError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Same shape, or the right operand is a single row broadcast over rows.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Neg(Var),
    Exp(Var),
    Ln(Var),
    Pow(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    SqDistRows(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    L1RowNormalize(Var),
    Transpose(Var),
    Inverse(Var),
    Reshape(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | SqDistRows(a, b) => vec![*a, *b],
            Affine(a, ..) | Neg(a) | Exp(a) | Ln(a) | Pow(a, _) | Sigmoid(a) | Relu(a)
            | Clamp(a, ..) | Sum(a) | Mean(a) | RowSum(a) | Softmax(a) | LogSoftmax(a)
            | SliceCols(a, ..) | L1RowNormalize(a) | Transpose(a) | Inverse(a) | Reshape(a) => vec![*a],
            ConcatCols(parts) => parts.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-owner recording of a computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when `var` does not
    /// influence the loss.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::new(
                self.shapes[var.0].clone(),
                vec![0.0; self.shapes[var.0].iter().product()],
            )
            .expect("recorded shape is valid"),
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NumericError {
    NumericError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn as_matrix(t: &Tensor) -> Tensor {
    if t.rank() == 2 {
        t.clone()
    } else {
        Tensor::matrix(t.rows(), t.cols(), t.data().to_vec()).expect("same length")
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

fn softmax_rows(x: &Tensor) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(r, c);
    for i in 0..r {
        let row = x.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (j, e) in exps.into_iter().enumerate() {
            out.data_mut()[i * c + j] = e / total;
        }
    }
    out
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(r, c);
    for i in 0..r {
        let row = x.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (j, v) in row.iter().enumerate() {
            out.data_mut()[i * c + j] = v - lse;
        }
    }
    out
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var, NumericError> {
        if !value.is_finite() {
            return Err(NumericError::NonFinite(name));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), value, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (x, y) = (self.value(a), self.value(b));
        let value = if x.shape() == y.shape() {
            x.zip_map(y, |p, q| p + q)
        } else if y.rows() == 1 && y.cols() == x.cols() {
            let c = x.cols();
            let mut out = as_matrix(x);
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += y.data()[i % c];
            }
            out
        } else {
            return Err(mismatch("add", x, y));
        };
        self.push(Op::Add(a, b), value, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch("sub", x, y));
        }
        let value = x.zip_map(y, |p, q| p - q);
        self.push(Op::Sub(a, b), value, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch("mul", x, y));
        }
        let value = x.zip_map(y, |p, q| p * q);
        self.push(Op::Mul(a, b), value, "mul")
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var, NumericError> {
        let value = self.value(a).map(|v| scale * v + shift);
        self.push(Op::Affine(a, scale), value, "affine")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, NumericError> {
        self.affine(a, factor, 0.0)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = self.value(a).map(|v| -v);
        self.push(Op::Neg(a), value, "neg")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), value, "exp")
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = self.value(a).map(f64::ln);
        self.push(Op::Ln(a), value, "ln")
    }

    pub fn pow(&mut self, a: Var, exponent: f64) -> Result<Var, NumericError> {
        let value = self.value(a).map(|v| v.powf(exponent));
        self.push(Op::Pow(a, exponent), value, "pow")
    }

    pub fn square(&mut self, a: Var) -> Result<Var, NumericError> {
        self.mul(a, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), value, "sigmoid")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), value, "relu")
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, NumericError> {
        if lo > hi {
            return Err(NumericError::InvalidArgument(format!(
                "clamp bounds {lo} > {hi}"
            )));
        }
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), value, "clamp")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericError> {
        let x = self.value(a);
        let value = Tensor::scalar(x.sum() / x.len() as f64);
        self.push(Op::Mean(a), value, "mean")
    }

    /// Sums each row, giving a column of shape `[rows, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var, NumericError> {
        let x = self.value(a);
        let sums: Vec<f64> = (0..x.rows()).map(|i| x.row(i).iter().sum()).collect();
        let value = Tensor::matrix(x.rows(), 1, sums)?;
        self.push(Op::RowSum(a), value, "row_sum")
    }

    /// `out[i][j] = ‖a_i − b_j‖²` for rows of `a` and `b`.
    pub fn sq_dist_rows(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(mismatch("sq_dist_rows", x, y));
        }
        let (ra, rb) = (x.rows(), y.rows());
        let mut out = Tensor::zeros(ra, rb);
        for i in 0..ra {
            for j in 0..rb {
                out.data_mut()[i * rb + j] = x
                    .row(i)
                    .iter()
                    .zip(y.row(j))
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum();
            }
        }
        self.push(Op::SqDistRows(a, b), out, "sq_dist_rows")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = softmax_rows(self.value(a));
        self.push(Op::Softmax(a), value, "softmax")
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = log_softmax_rows(self.value(a));
        self.push(Op::LogSoftmax(a), value, "log_softmax")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let first = parts
            .first()
            .ok_or_else(|| NumericError::InvalidArgument("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(mismatch("concat_cols", self.value(*first), self.value(*p)));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        self.push(Op::ConcatCols(parts.to_vec()), value, "concat_cols")
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericError> {
        let x = self.value(a);
        if start >= end || end > x.cols() {
            return Err(NumericError::InvalidArgument(format!(
                "column range {start}..{end} out of bounds for {:?}",
                x.shape()
            )));
        }
        let data: Vec<f64> = (0..x.rows())
            .flat_map(|i| x.row(i)[start..end].to_vec())
            .collect();
        let value = Tensor::matrix(x.rows(), end - start, data)?;
        self.push(Op::SliceCols(a, start, end), value, "slice_cols")
    }

    /// Divides each row by the sum of its absolute values.
    pub fn l1_row_normalize(&mut self, a: Var) -> Result<Var, NumericError> {
        let x = self.value(a);
        let mut out = as_matrix(x);
        let c = x.cols();
        for i in 0..x.rows() {
            let norm: f64 = x.row(i).iter().map(|v| v.abs()).sum();
            if norm == 0.0 {
                return Err(NumericError::ZeroRow(i));
            }
            for v in &mut out.data_mut()[i * c..(i + 1) * c] {
                *v /= norm;
            }
        }
        self.push(Op::L1RowNormalize(a), out, "l1_row_normalize")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value, "transpose")
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, NumericError> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push(Op::Reshape(a), value, "reshape")
    }

    pub fn inverse(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = linalg::inverse(self.value(a))?;
        self.push(Op::Inverse(a), value, "inverse")
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        let out = self.value(loss);
        if !out.is_scalar() {
            return Err(NumericError::NotScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(out.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            for (input, contribution) in self.local_grads(node, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                let contribution = contribution.reshape(self.value(input).shape().to_vec())?;
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>, NumericError> {
        let y = &node.value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (as_matrix(self.value(*a)), as_matrix(self.value(*b)));
                let g = as_matrix(g);
                vec![
                    (*a, g.matmul(&bv.transpose())?),
                    (*b, av.transpose().matmul(&g)?),
                ]
            }
            Op::Add(a, b) => {
                let bv = self.value(*b);
                let gb = if bv.len() == g.len() {
                    g.clone()
                } else {
                    let c = g.cols();
                    let mut acc = vec![0.0; c];
                    for (i, v) in g.data().iter().enumerate() {
                        acc[i % c] += v;
                    }
                    Tensor::vector(acc)?
                };
                vec![(*a, g.clone()), (*b, gb)]
            }
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(self.value(*b), |p, q| p * q)),
                (*b, g.zip_map(self.value(*a), |p, q| p * q)),
            ],
            Op::Affine(a, scale) => vec![(*a, g.map(|v| v * scale))],
            Op::Neg(a) => vec![(*a, g.map(|v| -v))],
            Op::Exp(a) => vec![(*a, g.zip_map(y, |p, q| p * q))],
            Op::Ln(a) => vec![(*a, g.zip_map(self.value(*a), |p, x| p / x))],
            Op::Pow(a, e) => vec![(
                *a,
                g.zip_map(self.value(*a), |p, x| p * e * x.powf(e - 1.0)),
            )],
            Op::Sigmoid(a) => vec![(*a, g.zip_map(y, |p, s| p * s * (1.0 - s)))],
            Op::Relu(a) => vec![(
                *a,
                g.zip_map(self.value(*a), |p, x| if x > 0.0 { p } else { 0.0 }),
            )],
            Op::Clamp(a, lo, hi) => vec![(
                *a,
                g.zip_map(self.value(*a), |p, x| if x >= *lo && x <= *hi { p } else { 0.0 }),
            )],
            Op::Sum(a) => {
                let x = self.value(*a);
                vec![(*a, Tensor::zeros_like(x).map(|_| g.data()[0]))]
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let v = g.data()[0] / x.len() as f64;
                vec![(*a, Tensor::zeros_like(x).map(|_| v))]
            }
            Op::RowSum(a) => {
                let x = self.value(*a);
                let c = x.cols();
                let data = (0..x.len()).map(|i| g.data()[i / c]).collect();
                vec![(*a, Tensor::new(x.shape().to_vec(), data)?)]
            }
            Op::SqDistRows(a, b) => {
                let (x, z) = (self.value(*a), self.value(*b));
                let (ra, rb, n) = (x.rows(), z.rows(), x.cols());
                let mut ga = vec![0.0; ra * n];
                let mut gb = vec![0.0; rb * n];
                for i in 0..ra {
                    for j in 0..rb {
                        let gij = 2.0 * g.data()[i * rb + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for k in 0..n {
                            let d = gij * (x.get(i, k) - z.get(j, k));
                            ga[i * n + k] += d;
                            gb[j * n + k] -= d;
                        }
                    }
                }
                vec![
                    (*a, Tensor::new(x.shape().to_vec(), ga)?),
                    (*b, Tensor::new(z.shape().to_vec(), gb)?),
                ]
            }
            Op::Softmax(a) => {
                let (r, c) = (y.rows(), y.cols());
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(p, s)| p * s).sum();
                    for j in 0..c {
                        out[i * c + j] = y.get(i, j) * (g.get(i, j) - dot);
                    }
                }
                vec![(*a, Tensor::matrix(r, c, out)?)]
            }
            Op::LogSoftmax(a) => {
                let (r, c) = (y.rows(), y.cols());
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let total: f64 = g.row(i).iter().sum();
                    for j in 0..c {
                        out[i * c + j] = g.get(i, j) - y.get(i, j).exp() * total;
                    }
                }
                vec![(*a, Tensor::matrix(r, c, out)?)]
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for p in parts {
                    let c = self.value(*p).cols();
                    let data = (0..rows)
                        .flat_map(|i| g.row(i)[offset..offset + c].to_vec())
                        .collect();
                    out.push((*p, Tensor::matrix(rows, c, data)?));
                    offset += c;
                }
                out
            }
            Op::SliceCols(a, start, end) => {
                let x = self.value(*a);
                let (r, c) = (x.rows(), x.cols());
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    out[i * c + start..i * c + end].copy_from_slice(g.row(i));
                }
                vec![(*a, Tensor::matrix(r, c, out)?)]
            }
            Op::L1RowNormalize(a) => {
                let x = self.value(*a);
                let (r, c) = (x.rows(), x.cols());
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let norm: f64 = x.row(i).iter().map(|v| v.abs()).sum();
                    let gy: f64 = g.row(i).iter().zip(y.row(i)).map(|(p, q)| p * q).sum();
                    for k in 0..c {
                        let sign = x.get(i, k).signum() * (x.get(i, k) != 0.0) as u8 as f64;
                        out[i * c + k] = (g.get(i, k) - sign * gy) / norm;
                    }
                }
                vec![(*a, Tensor::matrix(r, c, out)?)]
            }
            Op::Transpose(a) => vec![(*a, as_matrix(g).transpose())],
            Op::Reshape(a) => vec![(*a, g.clone())],
            Op::Inverse(a) => {
                // d(A⁻¹) = −A⁻¹ dA A⁻¹  =>  Ḡ_A = −A⁻ᵀ G A⁻ᵀ
                let yt = y.transpose();
                let ga = yt.matmul(&as_matrix(g))?.matmul(&yt)?.map(|v| -v);
                vec![(*a, ga)]
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_t(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(vec_t(&[0.0, 0.0]));
        let s = tape.softmax(x).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn sq_dist_example() {
        let mut tape = Tape::new();
        let a = tape.constant(vec_t(&[1.0, 0.0]));
        let b = tape.constant(vec_t(&[0.0, 1.0]));
        let d = tape.sq_dist_rows(a, b).unwrap();
        assert_eq!(tape.value(d).data(), &[2.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(3));
        let a = tape.constant(
            Tensor::matrix(3, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap(),
        );
        let p = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(p), tape.value(a));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(vec_t(&[1.0, -2.0, 3.0]));
        let s = tape.sum(x).unwrap();
        assert_eq!(tape.backward(s).unwrap().get(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_times_x_gives_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(vec_t(&[1.0, 2.0]));
        let z = tape.scale(x, 0.0).unwrap();
        let s = tape.sum(z).unwrap();
        assert_eq!(tape.backward(s).unwrap().get(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(0.0));
        let x = tape.constant(Tensor::scalar(1.0));
        let wx = tape.mul(w, x).unwrap();
        let s = tape.sigmoid(wx).unwrap();
        let g = tape.backward(s).unwrap().get(w);
        assert_eq!(g.data(), &[0.25]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(vec_t(&[1.0, 2.0]));
        let unused = tape.param(Tensor::zeros(2, 2));
        let s = tape.sum(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(unused), Tensor::zeros(2, 2));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(vec_t(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(NumericError::NotScalar(_))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        assert!(matches!(
            tape.matmul(a, b),
            Err(NumericError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn non_finite_values_are_an_error() {
        let mut tape = Tape::new();
        let a = tape.constant(vec_t(&[0.0]));
        assert!(matches!(tape.ln(a), Err(NumericError::NonFinite("ln"))));
    }

    #[test]
    fn chain_rule_matches_manual_product() {
        // y = exp(3x), dy/dx = 3 exp(3x)
        let x0 = 0.37;
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(x0));
        let u = tape.scale(x, 3.0).unwrap();
        let y = tape.exp(u).unwrap();
        let g = tape.backward(y).unwrap().get(x).item().unwrap();
        let manual = (3.0 * x0).exp() * 3.0;
        assert_eq!(g, manual);
    }

    #[test]
    fn broadcast_add_sums_bias_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(4, 2));
        let b = tape.param(vec_t(&[1.0, 2.0]));
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.value(y).get(3, 1), 2.0);
        let s = tape.sum(y).unwrap();
        assert_eq!(tape.backward(s).unwrap().get(b).data(), &[4.0, 4.0]);
    }
}
