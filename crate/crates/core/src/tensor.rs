//! Dense tensors and matrices in row-major layout (last index fastest).
//!
//! Mode indices are zero-based throughout the crate. The mode-`k` unfolding
//! places mode `k` on the rows and the remaining modes, in ascending order
//! with the last one varying fastest, on the columns.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RgtnError};

/// N-dimensional dense array of `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    strides
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(RgtnError::InvalidShape("tensor order must be at least 1".into()));
        }
        if shape.contains(&0) {
            return Err(RgtnError::InvalidShape(format!("zero-sized mode in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(RgtnError::InvalidShape(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Order-0 tensor holding a single value. Only produced by internal
    /// network contractions; public constructors require order >= 1.
    pub(crate) fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..numel {
            data.push(f(&idx));
            increment(&mut idx, shape);
        }
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
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

    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.shape)
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        idx.iter().zip(self.strides()).map(|(i, s)| i * s).sum()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(RgtnError::InvalidShape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(RgtnError::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Reorders modes so that output mode `i` is input mode `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.order();
        if perm.len() != n {
            return Err(RgtnError::InvalidArgument(format!(
                "permutation {perm:?} has wrong length for order {n}"
            )));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(RgtnError::InvalidArgument(format!("invalid permutation {perm:?}")));
            }
            seen[p] = true;
        }
        Ok(self.permute_unchecked(perm))
    }

    pub(crate) fn permute_unchecked(&self, perm: &[usize]) -> Self {
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return self.clone();
        }
        let in_strides = self.strides();
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = Vec::with_capacity(self.data.len());
        let n = out_shape.len();
        let last = n - 1;
        let inner = out_shape[last];
        let inner_step = step[last];
        let outer: usize = out_shape[..last].iter().product();
        let mut idx = vec![0usize; last];
        let mut base = 0usize;
        for _ in 0..outer {
            let mut off = base;
            for _ in 0..inner {
                out.push(self.data[off]);
                off += inner_step;
            }
            // odometer over the leading output modes
            for k in (0..last).rev() {
                idx[k] += 1;
                base += step[k];
                if idx[k] < out_shape[k] {
                    break;
                }
                base -= step[k] * out_shape[k];
                idx[k] = 0;
            }
        }
        Self { shape: out_shape, data: out }
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for k in (0..shape.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

/// Frobenius norm of a tensor.
pub fn frobenius_norm(t: &DenseTensor) -> f64 {
    t.squared_norm().sqrt()
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(RgtnError::InvalidShape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, &x) in d.iter().enumerate() {
            m.data[i * n + i] = x;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(RgtnError::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(matmul_raw(&self.data, &other.data, self.rows, self.cols, other.cols)
            .into_matrix(self.rows, other.cols))
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_transposed(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(RgtnError::DimensionMismatch(format!(
                "{}x{} times ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn into_tensor(self) -> DenseTensor {
        DenseTensor::from_parts_unchecked(vec![self.rows, self.cols], self.data)
    }
}

struct RawProduct(Vec<f64>);

impl RawProduct {
    fn into_matrix(self, rows: usize, cols: usize) -> Matrix {
        Matrix { rows, cols, data: self.0 }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> RawProduct {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    RawProduct(out)
}

/// Matricizes `t` with `row_modes` (in the given order) on the rows and the
/// remaining modes, ascending, on the columns.
pub fn matricize(t: &DenseTensor, row_modes: &[usize]) -> Result<Matrix> {
    let n = t.order();
    for &m in row_modes {
        if m >= n {
            return Err(RgtnError::ModeOutOfRange { mode: m, order: n });
        }
    }
    let mut perm: Vec<usize> = row_modes.to_vec();
    perm.extend((0..n).filter(|k| !row_modes.contains(k)));
    let rows: usize = row_modes.iter().map(|&m| t.shape()[m]).product();
    let cols = t.numel() / rows;
    let p = t.permute(&perm)?;
    Ok(Matrix { rows, cols, data: p.into_data() })
}

/// Mode-`k` unfolding (zero-based `k`).
pub fn unfold(t: &DenseTensor, k: usize) -> Result<Matrix> {
    if k >= t.order() {
        return Err(RgtnError::ModeOutOfRange { mode: k, order: t.order() });
    }
    matricize(t, &[k])
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, k: usize, shape: &[usize]) -> Result<DenseTensor> {
    let n = shape.len();
    if k >= n {
        return Err(RgtnError::ModeOutOfRange { mode: k, order: n });
    }
    let numel: usize = shape.iter().product();
    if m.rows != shape[k] || m.rows * m.cols != numel {
        return Err(RgtnError::DimensionMismatch(format!(
            "{}x{} matrix cannot fold into mode {k} of {shape:?}",
            m.rows, m.cols
        )));
    }
    let mut perm_shape = vec![shape[k]];
    perm_shape.extend((0..n).filter(|&j| j != k).map(|j| shape[j]));
    let t = DenseTensor::new(perm_shape, m.data.clone())?;
    // mode k currently sits at position 0; move it back.
    let mut inverse = Vec::with_capacity(n);
    for j in 0..n {
        inverse.push(match j.cmp(&k) {
            std::cmp::Ordering::Less => j + 1,
            std::cmp::Ordering::Equal => 0,
            std::cmp::Ordering::Greater => j,
        });
    }
    t.permute(&inverse)
}

/// Contracts `a` and `b` over paired modes. The result carries the free
/// modes of `a` (ascending) followed by the free modes of `b` (ascending).
/// Empty mode lists give the outer product. A contraction over every mode
/// yields a one-element tensor of shape `[1]`.
pub fn contract(
    a: &DenseTensor,
    modes_a: &[usize],
    b: &DenseTensor,
    modes_b: &[usize],
) -> Result<DenseTensor> {
    if modes_a.len() != modes_b.len() {
        return Err(RgtnError::DimensionMismatch(format!(
            "mode lists differ in length: {modes_a:?} vs {modes_b:?}"
        )));
    }
    for (&ma, &mb) in modes_a.iter().zip(modes_b) {
        if ma >= a.order() {
            return Err(RgtnError::ModeOutOfRange { mode: ma, order: a.order() });
        }
        if mb >= b.order() {
            return Err(RgtnError::ModeOutOfRange { mode: mb, order: b.order() });
        }
        if a.shape()[ma] != b.shape()[mb] {
            return Err(RgtnError::DimensionMismatch(format!(
                "mode {ma} of size {} paired with mode {mb} of size {}",
                a.shape()[ma],
                b.shape()[mb]
            )));
        }
    }
    if has_duplicates(modes_a) || has_duplicates(modes_b) {
        return Err(RgtnError::InvalidArgument("repeated contraction mode".into()));
    }
    let out = contract_unchecked(a, modes_a, b, modes_b);
    if out.order() == 0 {
        return Ok(DenseTensor::from_parts_unchecked(vec![1], out.into_data()));
    }
    Ok(out)
}

fn has_duplicates(modes: &[usize]) -> bool {
    modes.iter().enumerate().any(|(i, m)| modes[..i].contains(m))
}

/// Same as [`contract`] without validation; may return an order-0 tensor.
pub(crate) fn contract_unchecked(
    a: &DenseTensor,
    modes_a: &[usize],
    b: &DenseTensor,
    modes_b: &[usize],
) -> DenseTensor {
    let free_a: Vec<usize> = (0..a.order()).filter(|k| !modes_a.contains(k)).collect();
    let free_b: Vec<usize> = (0..b.order()).filter(|k| !modes_b.contains(k)).collect();
    let mut perm_a = free_a.clone();
    perm_a.extend_from_slice(modes_a);
    let mut perm_b = modes_b.to_vec();
    perm_b.extend_from_slice(&free_b);
    let k: usize = modes_a.iter().map(|&m| a.shape()[m]).product();
    let m = a.numel() / k;
    let n = b.numel() / k;
    let ap = if a.order() == 0 { a.clone() } else { a.permute_unchecked(&perm_a) };
    let bp = if b.order() == 0 { b.clone() } else { b.permute_unchecked(&perm_b) };
    let prod = matmul_raw(ap.data(), bp.data(), m, k, n).0;
    let mut shape: Vec<usize> = free_a.iter().map(|&i| a.shape()[i]).collect();
    shape.extend(free_b.iter().map(|&i| b.shape()[i]));
    DenseTensor::from_parts_unchecked(shape, prod)
}

/// Applies `mat` to mode `k`: `out[.., j, ..] = sum_i t[.., i, ..] * mat[i, j]`.
pub(crate) fn mode_apply(t: &DenseTensor, k: usize, mat: &Matrix) -> DenseTensor {
    debug_assert_eq!(t.shape()[k], mat.rows);
    let shape = t.shape();
    let outer: usize = shape[..k].iter().product();
    let inner: usize = shape[k + 1..].iter().product();
    let (ri, ro) = (mat.rows, mat.cols);
    let mut out = vec![0.0; outer * ro * inner];
    let src = t.data();
    for o in 0..outer {
        for i in 0..ri {
            let s = &src[(o * ri + i) * inner..(o * ri + i + 1) * inner];
            for j in 0..ro {
                let w = mat.data[i * ro + j];
                if w == 0.0 {
                    continue;
                }
                let d = &mut out[(o * ro + j) * inner..(o * ro + j + 1) * inner];
                for (dv, sv) in d.iter_mut().zip(s) {
                    *dv += w * sv;
                }
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[k] = ro;
    DenseTensor::from_parts_unchecked(new_shape, out)
}

/// Multiplies every slice `j` along mode `k` by `w[j]`.
pub(crate) fn scale_mode(t: &mut DenseTensor, k: usize, w: &[f64]) {
    let shape = t.shape().to_vec();
    let outer: usize = shape[..k].iter().product();
    let inner: usize = shape[k + 1..].iter().product();
    let r = shape[k];
    let data = t.data_mut();
    for o in 0..outer {
        for (j, &wj) in w.iter().enumerate().take(r) {
            for v in &mut data[(o * r + j) * inner..(o * r + j + 1) * inner] {
                *v *= wj;
            }
        }
    }
}
