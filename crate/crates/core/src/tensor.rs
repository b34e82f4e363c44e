//! Dense row-major tensors over an [`Scalar`] element type.
//!
//! Values are stored flat with an explicit shape. Rank-1 and rank-2 tensors
//! cover everything the model needs; the container format accepts any rank.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "shape {shape:?} must be non-empty with positive dims"
            )));
        }
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} values, got {}",
                shape,
                count,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let count: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); count],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let count: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; count],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    /// 1 x n row vector.
    pub fn row(values: Vec<T>) -> Result<Self> {
        let n = values.len();
        Tensor::new(vec![1, n], values)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dimension("at least one row required".into()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// (rows, cols) of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Dimension(format!(
                "expected rank-2 tensor, got shape {other:?}"
            ))),
        }
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        let cols = self.shape[self.shape.len() - 1];
        self.data[r * cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        let cols = self.shape[self.shape.len() - 1];
        self.data[r * cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[T] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "elementwise op on shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|x| x * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (n, k) = self.dims2()?;
        let (k2, m) = other.dims2()?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dims differ: {n}x{k} · {k2}x{m}"
            )));
        }
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let row = &other.data[p * m..(p + 1) * m];
                let dst = &mut out[i * m..(i + 1) * m];
                for (d, &b) in dst.iter_mut().zip(row.iter()) {
                    *d += a * b;
                }
            }
        }
        Tensor::new(vec![n, m], out)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (n, m) = self.dims2()?;
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = self.data[i * m + j];
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// Column-wise mean, collapsing rows: n x d -> 1 x d.
    pub fn mean_rows(&self) -> Result<Self> {
        let (n, d) = self.dims2()?;
        let inv = T::one() / T::from_usize(n).expect("row count fits scalar");
        let mut out = vec![T::zero(); d];
        for i in 0..n {
            for j in 0..d {
                out[j] += self.data[i * d + j];
            }
        }
        for v in &mut out {
            *v *= inv;
        }
        Tensor::new(vec![1, d], out)
    }

    pub fn concat_cols(parts: &[&Tensor<T>]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of zero tensors".into()));
        }
        let (n, _) = parts[0].dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pn, pc) = p.dims2()?;
            if pn != n {
                return Err(Error::Dimension(format!(
                    "concat_cols row counts differ: {n} vs {pn}"
                )));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(p.row_slice(i));
            }
        }
        Tensor::new(vec![n, total], data)
    }

    pub fn concat_rows(parts: &[&Tensor<T>]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of zero tensors".into()));
        }
        let (_, d) = parts[0].dims2()?;
        let mut rows = 0usize;
        let mut data = Vec::new();
        for p in parts {
            let (pn, pc) = p.dims2()?;
            if pc != d {
                return Err(Error::Dimension(format!(
                    "concat_rows widths differ: {d} vs {pc}"
                )));
            }
            rows += pn;
            data.extend_from_slice(p.data());
        }
        Tensor::new(vec![rows, d], data)
    }

    pub fn slice_cols(&self, lo: usize, hi: usize) -> Result<Self> {
        let (n, d) = self.dims2()?;
        if lo >= hi || hi > d {
            return Err(Error::Dimension(format!(
                "column slice {lo}..{hi} out of width {d}"
            )));
        }
        let mut data = Vec::with_capacity(n * (hi - lo));
        for i in 0..n {
            data.extend_from_slice(&self.row_slice(i)[lo..hi]);
        }
        Tensor::new(vec![n, hi - lo], data)
    }

    /// Reorder rows by `perm` (output row i = input row `perm[i]`).
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        let (n, d) = self.dims2()?;
        if perm.len() != n {
            return Err(Error::Dimension(format!(
                "permutation of length {} on {n} rows",
                perm.len()
            )));
        }
        let mut data = Vec::with_capacity(n * d);
        for &src in perm {
            data.extend_from_slice(self.row_slice(src));
        }
        Tensor::new(vec![n, d], data)
    }

    pub fn is_finite_all(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), |acc, d| if d > acc { d } else { acc })
    }

    /// Convert element type, rounding through f64.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::cast(v.to_f64_lossy())).collect(),
        }
    }
}
