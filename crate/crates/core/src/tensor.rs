//! Dense N-way tensors and the multilinear kernels used by the TT model.
//!
//! Tensors store their values in colexicographic order (first index varies
//! fastest) and matrices are column-major, so the mode-1 unfolding of a
//! tensor is its buffer reinterpreted as an `I_1 x (I_2 ... I_N)` matrix.

use std::fmt;

use crate::error::{Error, Result};

/// Dimensions `(I_1, ..., I_N)` of a tensor. Every dim is at least 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::InvalidShape(
                "a tensor needs at least one mode".into(),
            ));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidShape(format!("dim {} is zero", pos + 1)));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidShape(format!("element count of {dims:?} overflows")))?;
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    /// Size of mode `n` (1-based).
    pub fn dim(&self, n: usize) -> usize {
        self.0[n - 1]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Colexicographic strides, `strides[k] = prod(dims[..k])`.
    pub fn strides(&self) -> Vec<usize> {
        let mut acc = 1;
        self.0
            .iter()
            .map(|&d| {
                let s = acc;
                acc *= d;
                s
            })
            .collect()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

impl TryFrom<&[usize]> for Shape {
    type Error = Error;

    fn try_from(dims: &[usize]) -> Result<Self> {
        Shape::new(dims.to_vec())
    }
}

/// Dense real tensor with a colexicographic buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::InvalidShape(format!(
                "buffer holds {} values but shape {shape} needs {}",
                data.len(),
                shape.numel()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        let data = vec![value; shape.numel()];
        DenseTensor { shape, data }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn ones(shape: Shape) -> Self {
        Self::filled(shape, 1.0)
    }

    /// Builds a tensor from a function of the 0-based multi-index.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        let mut idx = vec![0usize; shape.order()];
        for _ in 0..shape.numel() {
            data.push(f(&idx));
            advance_colex(&mut idx, shape.dims());
        }
        DenseTensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn order(&self) -> usize {
        self.shape.order()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Flat offset of the 1-based multi-index `index`.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        let dims = self.dims();
        if index.len() != dims.len() || index.iter().zip(dims).any(|(&i, &d)| i == 0 || i > d) {
            return Err(Error::IndexOutOfRange {
                index: index.to_vec(),
                shape: dims.to_vec(),
            });
        }
        let mut off = 0;
        let mut stride = 1;
        for (&i, &d) in index.iter().zip(dims) {
            off += (i - 1) * stride;
            stride *= d;
        }
        Ok(off)
    }

    /// Element at the 1-based multi-index `index`.
    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    fn check_same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.dims().to_vec(),
                actual: other.dims().to_vec(),
            });
        }
        Ok(())
    }

    fn check_mode(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.order() {
            return Err(Error::ModeOutOfRange {
                mode: n,
                order: self.order(),
            });
        }
        Ok(())
    }

    /// Sizes `(prod of dims before n, I_n, prod of dims after n)` for a 1-based mode.
    pub(crate) fn split_at_mode(dims: &[usize], n: usize) -> (usize, usize, usize) {
        let before = dims[..n - 1].iter().product();
        let after = dims[n..].iter().product();
        (before, dims[n - 1], after)
    }

    /// Mode-`n` matricization: `I_n` rows, columns ordered colexicographically
    /// over the remaining modes in ascending order.
    pub fn unfold(&self, n: usize) -> Result<Matrix> {
        self.check_mode(n)?;
        let (before, size, after) = Self::split_at_mode(self.dims(), n);
        let mut out = vec![0.0; self.data.len()];
        for r in 0..after {
            for i in 0..size {
                let src = &self.data[before * (i + size * r)..before * (i + size * r + 1)];
                for (l, &v) in src.iter().enumerate() {
                    let col = l + before * r;
                    out[i + size * col] = v;
                }
            }
        }
        Ok(Matrix {
            rows: size,
            cols: before * after,
            data: out,
        })
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(m: &Matrix, n: usize, shape: &Shape) -> Result<Self> {
        if n == 0 || n > shape.order() {
            return Err(Error::ModeOutOfRange {
                mode: n,
                order: shape.order(),
            });
        }
        let (before, size, after) = Self::split_at_mode(shape.dims(), n);
        if m.rows != size || m.cols != before * after {
            return Err(Error::InvalidShape(format!(
                "{}x{} matrix cannot fold into mode {n} of {shape}",
                m.rows, m.cols
            )));
        }
        let mut out = vec![0.0; shape.numel()];
        for r in 0..after {
            for i in 0..size {
                let dst = &mut out[before * (i + size * r)..before * (i + size * r + 1)];
                for (l, v) in dst.iter_mut().enumerate() {
                    *v = m.data[i + size * (l + before * r)];
                }
            }
        }
        Ok(DenseTensor {
            shape: shape.clone(),
            data: out,
        })
    }

    pub fn hadamard(&self, other: &DenseTensor) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(dot(&self.data, &other.data))
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    /// Reorders modes so that output mode `k` is input mode `order[k]` (1-based).
    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        let n = self.order();
        let mut seen = vec![false; n];
        if order.len() != n
            || order.iter().any(|&p| {
                if p == 0 || p > n || seen[p - 1] {
                    return true;
                }
                seen[p - 1] = true;
                false
            })
        {
            return Err(Error::InvalidPermutation(order.to_vec()));
        }
        let in_strides = self.shape.strides();
        let out_dims: Vec<usize> = order.iter().map(|&p| self.dims()[p - 1]).collect();
        let src_strides: Vec<usize> = order.iter().map(|&p| in_strides[p - 1]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; n];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[src]);
            // Odometer step that also tracks the source offset.
            for k in 0..n {
                idx[k] += 1;
                src += src_strides[k];
                if idx[k] < out_dims[k] {
                    break;
                }
                src -= src_strides[k] * out_dims[k];
                idx[k] = 0;
            }
        }
        Ok(DenseTensor {
            shape: Shape(out_dims),
            data,
        })
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: Shape) -> Result<Self> {
        self.clone().into_reshaped(shape)
    }

    pub fn into_reshaped(self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.data.len() {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        Ok(DenseTensor {
            shape,
            data: self.data,
        })
    }
}

pub(crate) fn advance_colex(idx: &mut [usize], dims: &[usize]) {
    for (i, &d) in idx.iter_mut().zip(dims) {
        *i += 1;
        if *i < d {
            return;
        }
        *i = 0;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inverse of a 1-based permutation.
pub fn inverse_permutation(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (k, &p) in order.iter().enumerate() {
        inv[p - 1] = k + 1;
    }
    inv
}

/// Column-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::InvalidShape(format!(
                "{rows}x{cols} matrix with {} values",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i + n * i] = 1.0;
        }
        m
    }

    /// Row-major literal, handy for small fixed matrices.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidShape("ragged rows".into()));
        }
        let mut data = vec![0.0; r * c];
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                data[i + r * j] = v;
            }
        }
        Matrix::new(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Entry at 1-based `(row, col)`.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        assert!(row >= 1 && row <= self.rows && col >= 1 && col <= self.cols);
        self.data[(row - 1) + self.rows * (col - 1)]
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = vec![0.0; self.data.len()];
        for j in 0..self.cols {
            for i in 0..self.rows {
                data[j + self.cols * i] = self.data[i + self.rows * j];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn scaled(&self, alpha: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                expected: vec![self.rows, self.cols],
                actual: vec![other.rows, other.cols],
            });
        }
        let mut out = vec![0.0; self.rows * other.cols];
        gemm(
            self.rows,
            self.cols,
            other.cols,
            MatRef::col_major(&self.data, self.rows),
            MatRef::col_major(&other.data, other.rows),
            &mut out,
        );
        Ok(Matrix {
            rows: self.rows,
            cols: other.cols,
            data: out,
        })
    }

    /// Kronecker product; the indices of `b` vary fastest within each block.
    pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
        let rows = a.rows * b.rows;
        let cols = a.cols * b.cols;
        let mut data = vec![0.0; rows * cols];
        for ja in 0..a.cols {
            for jb in 0..b.cols {
                let col = jb + b.cols * ja;
                for ia in 0..a.rows {
                    let s = a.data[ia + a.rows * ja];
                    let dst = &mut data[rows * col + b.rows * ia..rows * col + b.rows * (ia + 1)];
                    let src = &b.data[b.rows * jb..b.rows * (jb + 1)];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = s * v;
                    }
                }
            }
        }
        Matrix { rows, cols, data }
    }
}

/// Borrowed strided matrix operand for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn col_major(data: &'a [f64], rows: usize) -> Self {
        MatRef {
            data,
            row_stride: 1,
            col_stride: rows as isize,
        }
    }

    /// The transpose of a column-major `rows x cols` buffer.
    pub fn transposed(data: &'a [f64], rows: usize) -> Self {
        MatRef {
            data,
            row_stride: rows as isize,
            col_stride: 1,
        }
    }
}

/// `c = a * b` with `a: m x k`, `b: k x n` and a column-major `m x n` output.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef<'_>, b: MatRef<'_>, c: &mut [f64]) {
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(0.0);
        return;
    }
    // SAFETY: operands cover every offset reachable by the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            0.0,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
}
