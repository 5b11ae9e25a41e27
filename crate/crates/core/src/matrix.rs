//! Dense row-major f64 matrix and the primitives everything else composes.
//!
//! Values are immutable in spirit: every operation returns a fresh matrix and
//! shape checks run on every binary op. 64-bit floats throughout — the
//! finite-difference tolerances used for gradient checking are unreachable in
//! f32.

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Dense 2-D matrix of f64, row-major, `data.len() == rows * cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from nested rows; handy in tests.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidArgument(
                "matrix rows have unequal lengths".into(),
            ));
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data: rows.concat(),
        })
    }

    /// i.i.d. N(0, std²) entries drawn row-major from `rng`; `std` must be > 0.
    pub fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut RngStream) -> Result<Self> {
        if !(std > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gaussian std must be > 0, got {std}"
            )));
        }
        let data = (0..rows * cols)
            .map(|_| std * rng.standard_normal())
            .collect();
        Ok(Matrix { rows, cols, data })
    }

    /// i.i.d. ±1 entries (used for the fixed binary direction matrix).
    pub fn rademacher(rows: usize, cols: usize, rng: &mut RngStream) -> Self {
        let data = (0..rows * cols).map(|_| rng.rademacher()).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    fn check_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape_mismatch(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    /// Standard matrix product; `self.cols` must equal `rhs.rows`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::shape_mismatch("matmul", self.shape(), rhs.shape()));
        }
        let (m, n, p) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; m * p];
        // i-k-j order keeps the inner loop contiguous in both rhs and out.
        for i in 0..m {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * p..(k + 1) * p];
                let out_row = &mut out[i * p..(i + 1) * p];
                for j in 0..p {
                    out_row[j] += a * rhs_row[j];
                }
            }
        }
        Ok(Matrix {
            rows: m,
            cols: p,
            data: out,
        })
    }

    /// Elementwise product; shapes must match.
    pub fn hadamard(&self, rhs: &Matrix) -> Result<Matrix> {
        self.check_same_shape(rhs, "hadamard")?;
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.check_same_shape(rhs, "add")?;
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.check_same_shape(rhs, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add_assign(&mut self, rhs: &Matrix) -> Result<()> {
        self.check_same_shape(rhs, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|x| c * x)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise max(0, x).
    pub fn relu(&self) -> Matrix {
        self.map(|x| if x > 0.0 { x } else { 0.0 })
    }

    /// Elementwise |x|.
    pub fn abs_act(&self) -> Matrix {
        self.map(f64::abs)
    }

    /// Elementwise logistic 1/(1+e^-x); output strictly in (0, 1).
    pub fn sigmoid_act(&self) -> Matrix {
        self.map(|x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    pub fn count_where(&self, pred: impl Fn(f64) -> bool) -> usize {
        self.data.iter().filter(|&&x| pred(x)).count()
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// max_ij |a-b| / (|b| + eps); shapes must match.
    pub fn max_relative_deviation(&self, reference: &Matrix, eps: f64) -> Result<f64> {
        self.check_same_shape(reference, "max_relative_deviation")?;
        Ok(self
            .data
            .iter()
            .zip(&reference.data)
            .map(|(a, b)| (a - b).abs() / (b.abs() + eps))
            .fold(0.0, f64::max))
    }
}
