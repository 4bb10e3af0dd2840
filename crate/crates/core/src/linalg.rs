//! Dense decompositions: one-sided Jacobi SVD, truncated SVD, nuclear norm
//! and a Cholesky solver for the least-squares sweeps.

use crate::error::{Result, RgtnError};
use crate::tensor::{dot, Matrix};

/// Thin SVD `m = left * diag(singular) * right`, with `singular`
/// non-increasing and strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    /// `m x rank`, orthonormal columns.
    pub left: Matrix,
    pub singular: Vec<f64>,
    /// `rank x n`, orthonormal rows.
    pub right: Matrix,
    pub rank: usize,
    /// Singular values that were dropped by the cutoff or the rank cap.
    pub discarded: Vec<f64>,
}

impl TruncatedSvd {
    /// True for the canonical rank-1 result of a zero matrix.
    pub fn is_degenerate(&self) -> bool {
        self.rank == 1 && self.singular[0] == 0.0
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.left.clone();
        for i in 0..us.rows {
            for j in 0..self.rank {
                us.data[i * self.rank + j] *= self.singular[j];
            }
        }
        us.matmul(&self.right).expect("shapes agree by construction")
    }
}

/// Full thin SVD with every singular value kept (zeros included), sorted
/// non-increasing. Columns of `u` that belong to zero singular values are
/// zero vectors.
pub(crate) struct ThinSvd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

const JACOBI_TOL: f64 = 1e-15;
const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided Jacobi on the columns of `m` (requires `cols <= rows` for
/// efficiency; callers transpose otherwise).
fn jacobi_columns(m: &Matrix, want_vectors: bool) -> ThinSvd {
    let (rows, cols) = (m.rows, m.cols);
    // column-major working copy
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| m.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = if want_vectors {
        (0..cols).map(|j| (0..cols).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect()
    } else {
        Vec::new()
    };
    let mut norms: Vec<f64> = a.iter().map(|c| dot(c, c)).collect();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&a[p], &a[q]);
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = a.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                if want_vectors {
                    let (lo, hi) = v.split_at_mut(q);
                    rotate(&mut lo[p], &mut hi[0], c, s);
                }
                norms[p] = dot(&a[p], &a[p]);
                norms[q] = dot(&a[q], &a[q]);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..cols).collect();
    let sig: Vec<f64> = norms.iter().map(|x| x.sqrt()).collect();
    order.sort_by(|&i, &j| sig[j].partial_cmp(&sig[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
    let s: Vec<f64> = order.iter().map(|&j| sig[j]).collect();
    let (u, vt) = if want_vectors {
        let mut u = Matrix::zeros(rows, cols);
        let mut vt = Matrix::zeros(cols, cols);
        for (k, &j) in order.iter().enumerate() {
            if sig[j] > 0.0 {
                for i in 0..rows {
                    u.data[i * cols + k] = a[j][i] / sig[j];
                }
            }
            for i in 0..cols {
                vt.data[k * cols + i] = v[j][i];
            }
        }
        (u, vt)
    } else {
        (Matrix::zeros(0, 0), Matrix::zeros(0, 0))
    };
    ThinSvd { u, s, vt }
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let a = *xi;
        let b = *yi;
        *xi = c * a - s * b;
        *yi = s * a + c * b;
    }
}

/// Tall matrices are first reduced to their triangular QR factor, which
/// has the same singular values and far shorter columns.
fn svd_tall(m: &Matrix, want_vectors: bool) -> ThinSvd {
    let (rows, cols) = (m.rows, m.cols);
    if rows < 2 * cols {
        return jacobi_columns(m, want_vectors);
    }
    // Householder QR on a column-major copy
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| m.get(i, j)).collect()).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for k in 0..cols {
        let x = &a[k][k..];
        let norm = dot(x, x).sqrt();
        let mut v = x.to_vec();
        v[0] += if x[0] < 0.0 { -norm } else { norm };
        let vn = dot(&v, &v).sqrt();
        // a zero column needs no reflection; v stays zero
        if vn > 0.0 {
            v.iter_mut().for_each(|vi| *vi /= vn);
        }
        for col in &mut a[k..] {
            reflect(&v, &mut col[k..]);
        }
        reflectors.push(v);
    }
    let mut r = Matrix::zeros(cols, cols);
    for (j, col) in a.iter().enumerate() {
        for i in 0..=j {
            r.data[i * cols + j] = col[i];
        }
    }
    let t = jacobi_columns(&r, want_vectors);
    if !want_vectors {
        return t;
    }
    let mut u = Matrix::zeros(rows, cols);
    let mut y = vec![0.0; rows];
    for q in 0..cols {
        y.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..cols {
            y[i] = t.u.data[i * cols + q];
        }
        for (k, v) in reflectors.iter().enumerate().rev() {
            reflect(v, &mut y[k..]);
        }
        for i in 0..rows {
            u.data[i * cols + q] = y[i];
        }
    }
    ThinSvd { u, s: t.s, vt: t.vt }
}

/// `y -= 2 v (v . y)` for a unit or zero `v`.
#[inline]
fn reflect(v: &[f64], y: &mut [f64]) {
    let d = 2.0 * dot(v, y);
    if d != 0.0 {
        for (yi, vi) in y.iter_mut().zip(v) {
            *yi -= d * vi;
        }
    }
}

pub(crate) fn thin_svd(m: &Matrix) -> ThinSvd {
    if m.cols <= m.rows {
        svd_tall(m, true)
    } else {
        let t = svd_tall(&m.transpose(), true);
        // m^T = U S V^T  =>  m = V S U^T
        ThinSvd { u: t.vt.transpose(), s: t.s, vt: t.u.transpose() }
    }
}

/// All `min(rows, cols)` singular values, non-increasing.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.rows == 0 || m.cols == 0 {
        return Vec::new();
    }
    if m.cols <= m.rows {
        svd_tall(m, false).s
    } else {
        svd_tall(&m.transpose(), false).s
    }
}

/// Truncated SVD keeping singular values above `threshold * sigma_1`,
/// capped at `max_rank`, and always at least one. Values at the level of
/// floating-point noise (`max(rows, cols) * eps * sigma_1`) are dropped
/// even when `threshold` is 0. A zero matrix yields the canonical
/// degenerate result (rank 1, sigma 0, first canonical vectors).
pub fn svd_truncated(m: &Matrix, threshold: f64, max_rank: Option<usize>) -> Result<TruncatedSvd> {
    if !(threshold >= 0.0) {
        return Err(RgtnError::InvalidArgument(format!("negative threshold {threshold}")));
    }
    if m.rows == 0 || m.cols == 0 {
        return Err(RgtnError::InvalidShape("empty matrix".into()));
    }
    if m.data.iter().any(|x| !x.is_finite()) {
        return Err(RgtnError::NonFinite("svd input".into()));
    }
    let full = thin_svd(m);
    let sigma1 = full.s[0];
    if sigma1 == 0.0 {
        let mut left = Matrix::zeros(m.rows, 1);
        left.data[0] = 1.0;
        let mut right = Matrix::zeros(1, m.cols);
        right.data[0] = 1.0;
        return Ok(TruncatedSvd { left, singular: vec![0.0], right, rank: 1, discarded: Vec::new() });
    }
    let floor = (m.rows.max(m.cols) as f64) * f64::EPSILON;
    let cutoff = threshold.max(floor) * sigma1;
    let mut rank = full.s.iter().take_while(|&&s| s > cutoff).count().max(1);
    if let Some(cap) = max_rank {
        rank = rank.min(cap.max(1));
    }
    let r_full = full.s.len();
    let mut left = Matrix::zeros(m.rows, rank);
    for i in 0..m.rows {
        for j in 0..rank {
            left.data[i * rank + j] = full.u.data[i * r_full + j];
        }
    }
    let right = Matrix { rows: rank, cols: m.cols, data: full.vt.data[..rank * m.cols].to_vec() };
    Ok(TruncatedSvd {
        left,
        singular: full.s[..rank].to_vec(),
        right,
        rank,
        discarded: full.s[rank..].to_vec(),
    })
}

/// Sum of singular values.
pub fn nuclear_norm(m: &Matrix) -> f64 {
    singular_values(m).iter().sum()
}

/// Cholesky factor `L` of a symmetric positive definite matrix, or `None`.
pub(crate) fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l.set(j, j, d);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` in place.
pub(crate) fn cholesky_solve(l: &Matrix, b: &mut [f64]) {
    let n = l.rows;
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * b[k];
        }
        b[i] = s / l.get(i, i);
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l.get(k, i) * b[k];
        }
        b[i] = s / l.get(i, i);
    }
}

/// Factorizes `gram + ridge * mean_diag * I`, growing the ridge until the
/// factorization succeeds.
pub(crate) fn regularized_cholesky(gram: &Matrix, ridge: f64) -> Matrix {
    let n = gram.rows;
    let mean_diag = (0..n).map(|i| gram.get(i, i)).sum::<f64>() / n.max(1) as f64;
    let scale = if mean_diag > 0.0 && mean_diag.is_finite() { mean_diag } else { 1.0 };
    let mut lambda = ridge * scale;
    loop {
        let mut a = gram.clone();
        for i in 0..n {
            a.data[i * n + i] += lambda;
        }
        if let Some(l) = cholesky(&a) {
            return l;
        }
        lambda = if lambda == 0.0 { 1e-14 * scale } else { lambda * 10.0 };
    }
}
