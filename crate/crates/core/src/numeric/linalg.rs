//! Small dense LU factorization with partial pivoting.

use super::{NumericError, Tensor};

/// Pivots smaller than this (relative to the largest entry of the input)
/// mark the matrix as singular.
pub const SINGULAR_PIVOT_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn factor(a: &Tensor) -> Result<Self, NumericError> {
        let n = a.rows();
        if a.rank() != 2 || a.cols() != n {
            return Err(NumericError::NotSquare(a.shape().to_vec()));
        }
        let scale = a.max_abs();
        if scale == 0.0 || !scale.is_finite() {
            return Err(NumericError::SingularMatrix);
        }
        let mut lu = a.data().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let (pivot_row, pivot_abs) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot_abs < SINGULAR_PIVOT_TOL * scale {
                return Err(NumericError::SingularMatrix);
            }
            if pivot_row != k {
                for j in 0..n {
                    lu.swap(k * n + j, pivot_row * n + j);
                }
                perm.swap(k, pivot_row);
                sign = -sign;
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                if factor != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= factor * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Self { n, lu, perm, sign })
    }

    pub fn determinant(&self) -> f64 {
        (0..self.n).fold(self.sign, |d, i| d * self.lu[i * self.n + i])
    }

    /// Solves `A x = b` for a single right-hand side.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve(&self, b: &Tensor) -> Result<Tensor, NumericError> {
        if b.rows() != self.n {
            return Err(NumericError::ShapeMismatch {
                op: "solve",
                left: vec![self.n, self.n],
                right: b.shape().to_vec(),
            });
        }
        let cols = b.cols();
        let mut out = Tensor::zeros(self.n, cols);
        let mut column = vec![0.0; self.n];
        for c in 0..cols {
            for (r, v) in column.iter_mut().enumerate() {
                *v = b.get(r, c);
            }
            let x = self.solve_vec(&column);
            for (r, v) in x.into_iter().enumerate() {
                out.data_mut()[r * cols + c] = v;
            }
        }
        Ok(out)
    }

    pub fn inverse(&self) -> Tensor {
        self.solve(&Tensor::identity(self.n))
            .expect("identity has matching rows")
    }
}

pub fn inverse(a: &Tensor) -> Result<Tensor, NumericError> {
    let inv = Lu::factor(a)?.inverse();
    if !inv.is_finite() {
        return Err(NumericError::SingularMatrix);
    }
    Ok(inv)
}

/// Solves `X A = B` (right division), i.e. `X = B A⁻¹`, without forming the inverse.
pub fn solve_right(b: &Tensor, a: &Tensor) -> Result<Tensor, NumericError> {
    // X A = B  <=>  Aᵀ Xᵀ = Bᵀ
    let lu = Lu::factor(&a.transpose())?;
    Ok(lu.solve(&b.transpose())?.transpose())
}
