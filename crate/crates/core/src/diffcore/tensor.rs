use crate::error::{Error, Result};
use crate::scalar::{Lift, Scalar};

/// Dense row-major tensor. Rank 0 is a scalar, rank 1 a vector, rank 2 a
/// matrix with `shape = [rows, cols]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> DenseTensor<S> {
    /// Validating constructor: `product(shape) == data.len()` and every entry
    /// finite.
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let t = Self::from_parts(shape, data)?;
        if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                block: format!("tensor entry {i}"),
            });
        }
        Ok(t)
    }

    /// Like [`DenseTensor::new`] but skips the finiteness scan.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} entries, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn raw(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, S::zero())
    }

    pub fn filled(shape: &[usize], v: S) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: S) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<S>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            _ => *self.shape.last().unwrap(),
        }
    }

    pub fn row(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[S]> {
        let c = self.cols().max(1);
        self.data.chunks(c).take(self.rows())
    }

    /// Value of a rank-0 (or single-entry) tensor.
    pub fn item(&self) -> S {
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self::raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self::raw(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    /// Converts into another scalar type that can embed `S`.
    pub fn lift<U: Lift<S>>(&self) -> DenseTensor<U> {
        DenseTensor::raw(self.shape.clone(), self.data.iter().map(|&v| U::lift(v)).collect())
    }

    pub fn sum(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, &v| acc + v)
    }

    pub fn dot(&self, other: &Self) -> S {
        self.data
            .iter()
            .zip(&other.data)
            .fold(S::zero(), |acc, (&a, &b)| acc + a * b)
    }

    pub fn norm(&self) -> S {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, k: S) -> Self {
        self.map(|v| v * k)
    }

    /// `self += k · other`
    pub fn axpy(&mut self, k: S, other: &Self) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.primal().abs()).fold(0.0, f64::max)
    }

    /// `self · otherᵀ` for `self: n×k`, `other: m×k`, giving `n×m`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        let (n, k) = (self.rows(), self.cols());
        let (m, k2) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner widths differ: {k} vs {k2}")));
        }
        let mut out = vec![S::zero(); n * m];
        for i in 0..n {
            let a = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let b = &other.data[j * k..(j + 1) * k];
                let mut acc = S::zero();
                for t in 0..k {
                    acc += a[t] * b[t];
                }
                out[i * m + j] = acc;
            }
        }
        Ok(Self::raw(vec![n, m], out))
    }

    /// `self · other` for `self: n×m`, `other: m×k`.
    pub fn matmul_nn(&self, other: &Self) -> Result<Self> {
        let (n, m) = (self.rows(), self.cols());
        let (m2, k) = (other.rows(), other.cols());
        if m != m2 {
            return Err(Error::shape("matmul", format!("inner widths differ: {m} vs {m2}")));
        }
        let mut out = vec![S::zero(); n * k];
        for i in 0..n {
            for t in 0..m {
                let a = self.data[i * m + t];
                let b = &other.data[t * k..(t + 1) * k];
                let o = &mut out[i * k..(i + 1) * k];
                for j in 0..k {
                    o[j] += a * b[j];
                }
            }
        }
        Ok(Self::raw(vec![n, k], out))
    }

    /// `selfᵀ · other` for `self: n×m`, `other: n×k`, giving `m×k`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        let (n, m) = (self.rows(), self.cols());
        let (n2, k) = (other.rows(), other.cols());
        if n != n2 {
            return Err(Error::shape("matmul", format!("row counts differ: {n} vs {n2}")));
        }
        let mut out = vec![S::zero(); m * k];
        for i in 0..n {
            let b = &other.data[i * k..(i + 1) * k];
            for t in 0..m {
                let a = self.data[i * m + t];
                let o = &mut out[t * k..(t + 1) * k];
                for j in 0..k {
                    o[j] += a * b[j];
                }
            }
        }
        Ok(Self::raw(vec![m, k], out))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&self, bias: &Self) -> Result<Self> {
        let c = self.cols();
        if bias.len() != c {
            return Err(Error::shape("bias", format!("bias length {} vs width {c}", bias.len())));
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(c.max(1)) {
            for (o, &b) in row.iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Multiplies row `r` by `scale[r]`.
    pub fn scale_rows(&self, scale: &Self) -> Result<Self> {
        let r = self.rows();
        if scale.len() != r {
            return Err(Error::shape(
                "row scaling",
                format!("{} scales for {r} rows", scale.len()),
            ));
        }
        let c = self.cols();
        let mut out = self.clone();
        for (row, &s) in out.data.chunks_mut(c.max(1)).zip(&scale.data) {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        Ok(out)
    }

    /// Column sums of a matrix as a vector.
    pub fn sum_rows(&self) -> Self {
        let c = self.cols();
        let mut out = vec![S::zero(); c];
        for row in self.iter_rows() {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Self::vector(out)
    }

    /// Row sums of a matrix as a vector.
    pub fn sum_cols(&self) -> Self {
        Self::vector(
            self.iter_rows()
                .map(|r| r.iter().fold(S::zero(), |a, &b| a + b))
                .collect(),
        )
    }

    /// Mean of the rows of a matrix.
    pub fn mean_row(&self) -> Self {
        let n = S::from_count(self.rows().max(1));
        self.sum_rows().map(|v| v / n)
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::raw(vec![indices.len(), c], data)
    }

    /// Leading `k` columns of a matrix.
    pub fn take_cols(&self, k: usize) -> Result<Self> {
        let c = self.cols();
        if k > c {
            return Err(Error::shape("take_cols", format!("{k} columns requested of {c}")));
        }
        let mut data = Vec::with_capacity(self.rows() * k);
        for row in self.iter_rows() {
            data.extend_from_slice(&row[..k]);
        }
        Ok(Self::raw(vec![self.rows(), k], data))
    }

    /// Stacks matrices of equal width vertically.
    pub fn vstack(parts: &[&Self]) -> Result<Self> {
        let cols = parts.first().map_or(0, |p| p.cols());
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.cols() != cols {
                return Err(Error::shape("vstack", format!("width {} vs {cols}", p.cols())));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Ok(Self::raw(vec![rows, cols], data))
    }
}
