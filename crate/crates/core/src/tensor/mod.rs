//! Dense row-major tensors with a reverse-mode tape.
//!
//! [`Tensor`] is a plain value container that also carries small dense
//! algebra (products, transposes, SPD solves) for the planner. Differentiable
//! computation goes through [`Tape`], which records primitive operations on
//! [`Var`] handles and replays them in reverse.

mod kernels;
mod mlp;
mod tape;

use alloc::vec;
use alloc::vec::Vec;

pub use mlp::{mlp_forward, Activation, Layer, LayerVars, Mlp, MlpVars};
pub use tape::{Gradients, Tape, Unary, Var};

pub(crate) use kernels::matmul;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} elements but {got} were supplied")]
    Length {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: argument outside the domain of the function")]
    Domain { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{op}: expected a matrix (rank <= 2), got shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Dense array of `f64` in row-major order with an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(try_from = "TensorRepr", into = "TensorRepr")
)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

/// Serialized form: shape and data, without the gradient.
#[cfg(feature = "serde")]
#[derive(serde::Serialize, serde::Deserialize)]
struct TensorRepr {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[cfg(feature = "serde")]
impl TryFrom<TensorRepr> for Tensor {
    type Error = TensorError;

    fn try_from(r: TensorRepr) -> Result<Self, Self::Error> {
        Tensor::new(&r.shape, r.data)
    }
}

#[cfg(feature = "serde")]
impl From<Tensor> for TensorRepr {
    fn from(t: Tensor) -> Self {
        TensorRepr {
            shape: t.shape,
            data: t.data,
        }
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let expected = shape.iter().product::<usize>();
        if shape.is_empty() || shape.contains(&0) || expected != data.len() {
            return Err(TensorError::Length {
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    /// `rows x cols` matrix. Panics if the data length is wrong.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self {
            shape: vec![rows, cols],
            data,
            grad: None,
        }
    }

    /// `1 x n` row vector.
    pub fn row(data: Vec<f64>) -> Self {
        Self::matrix(1, data.len(), data)
    }

    /// `n x 1` column vector.
    pub fn column(data: Vec<f64>) -> Self {
        Self::matrix(data.len(), 1, data)
    }

    pub fn scalar(value: f64) -> Self {
        Self::matrix(1, 1, vec![value])
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::matrix(rows, cols, vec![0.0; rows * cols])
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut t = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            t.data[i * n + i] = d;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut Vec<f64> {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Rows and columns, treating a rank-1 tensor as a row vector.
    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        match self.shape.as_slice() {
            [n] => Ok((1, *n)),
            [r, c] => Ok((*r, *c)),
            _ => Err(TensorError::Rank {
                op: "dims2",
                shape: self.shape.clone(),
            }),
        }
    }

    fn dims2_unchecked(&self) -> (usize, usize) {
        self.dims2().expect("matrix-shaped tensor")
    }

    pub fn rows(&self) -> usize {
        self.dims2_unchecked().0
    }

    pub fn cols(&self) -> usize {
        self.dims2_unchecked().1
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let c = self.cols();
        self.data[i * c + j] = value;
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Tensor::matrix(m, n, matmul(&self.data, &other.data, m, k, n)))
    }

    /// Matrix-vector product with a plain slice.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>, TensorError> {
        let (m, n) = self.dims2()?;
        if n != v.len() {
            return Err(TensorError::Shape {
                op: "matvec",
                lhs: self.shape.clone(),
                rhs: vec![v.len()],
            });
        }
        Ok((0..m)
            .map(|i| {
                self.data[i * n..(i + 1) * n]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect())
    }

    pub fn transpose(&self) -> Tensor {
        let (m, n) = self.dims2_unchecked();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::matrix(n, m, out)
    }

    fn zip_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
            grad: None,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
            grad: None,
        }
    }

    /// `(A + Aᵀ) / 2` for a square matrix.
    pub fn symmetrize(&self) -> Tensor {
        let n = self.rows();
        let mut out = self.clone();
        for i in 0..n {
            for j in 0..n {
                out.data[i * n + j] = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
            }
        }
        out.grad = None;
        out
    }

    /// Lower Cholesky factor of a symmetric positive-definite matrix.
    pub fn cholesky(&self) -> Result<Tensor, TensorError> {
        let (n, n2) = self.dims2()?;
        if n != n2 {
            return Err(TensorError::Shape {
                op: "cholesky",
                lhs: self.shape.clone(),
                rhs: self.shape.clone(),
            });
        }
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = self.data[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(TensorError::NotPositiveDefinite);
            }
            let d = libm::sqrt(d);
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = self.data[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Tensor::matrix(n, n, l))
    }

    /// Solves `self · X = rhs` for symmetric positive-definite `self`.
    pub fn solve_spd(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        let l = self.cholesky()?;
        let n = l.rows();
        let (rn, m) = rhs.dims2()?;
        if rn != n {
            return Err(TensorError::Shape {
                op: "solve_spd",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let mut x = rhs.data.clone();
        for col in 0..m {
            // forward substitution L y = b
            for i in 0..n {
                let mut s = x[i * m + col];
                for k in 0..i {
                    s -= l.data[i * n + k] * x[k * m + col];
                }
                x[i * m + col] = s / l.data[i * n + i];
            }
            // back substitution Lᵀ x = y
            for i in (0..n).rev() {
                let mut s = x[i * m + col];
                for k in (i + 1)..n {
                    s -= l.data[k * n + i] * x[k * m + col];
                }
                x[i * m + col] = s / l.data[i * n + i];
            }
        }
        Ok(Tensor::matrix(n, m, x))
    }
}
