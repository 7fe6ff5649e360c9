//! Dense linear algebra for small symmetric problems.
//!
//! Everything here works on plain row-major `f64` storage. The eigensolver is
//! a cyclic Jacobi method: slow for large matrices but accurate and fully
//! deterministic, which is what concept-set sized problems (tens to a few
//! hundred dimensions) need.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
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
        if rows * cols != data.len() {
            return Err(Error::Dimension {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Dimension {
                expected: self.cols,
                found: v.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `self + factor * other`.
    pub fn add_scaled(&self, other: &Matrix, factor: f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                expected: self.rows * self.cols,
                found: other.rows * other.cols,
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + factor * b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Largest absolute difference between `self[i][j]` and `self[j][i]`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::invalid("softmax of an empty score list"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("softmax scores must be finite"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Sums `(u - w)(u - w)ᵀ` over all pairs, in order.
///
/// An empty pair list has no dimension to infer from, so the caller passes it.
pub fn outer_diff_accumulate<V: AsRef<[f64]>>(pairs: &[(V, V)], dim: usize) -> Result<Matrix> {
    let mut acc = Matrix::zeros(dim, dim);
    let mut diff = vec![0.0; dim];
    for (u, w) in pairs {
        let (u, w) = (u.as_ref(), w.as_ref());
        for v in [u, w] {
            if v.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: v.len(),
                });
            }
        }
        for (d, (a, b)) in diff.iter_mut().zip(u.iter().zip(w)) {
            *d = a - b;
        }
        for i in 0..dim {
            let di = diff[i];
            if di == 0.0 {
                continue;
            }
            for (cell, dj) in acc.data[i * dim..(i + 1) * dim].iter_mut().zip(&diff) {
                *cell += di * dj;
            }
        }
    }
    Ok(acc)
}

/// Solver knobs for [`sym_eigen_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenConfig {
    /// Stop once the off-diagonal Frobenius norm falls below `rel_tol * ‖C‖_F`.
    pub rel_tol: f64,
    pub max_sweeps: usize,
    /// Largest tolerated `|c_ij - c_ji|`, relative to `max(1, max |c|)`.
    pub symmetry_tol: f64,
}

impl Default for EigenConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            max_sweeps: 100,
            symmetry_tol: 1e-9,
        }
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
///
/// Column `i` of `eigenvectors` belongs to `eigenvalues[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
    pub sweeps: usize,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector(&self, i: usize) -> Vec<f64> {
        self.eigenvectors.column(i)
    }

    /// Φ Λ Φᵀ.
    pub fn reconstruct(&self) -> Matrix {
        let phi = &self.eigenvectors;
        let scaled = phi
            .matmul(&Matrix::from_diagonal(&self.eigenvalues))
            .expect("square factors");
        scaled.matmul(&phi.transpose()).expect("square factors")
    }

    /// ‖ΦᵀΦ − I‖_F.
    pub fn orthonormality_residual(&self) -> f64 {
        let phi = &self.eigenvectors;
        let gram = phi.transpose().matmul(phi).expect("square factors");
        let eye = Matrix::identity(self.dim());
        frobenius_norm(&gram.add_scaled(&eye, -1.0).expect("same shape"))
    }

    /// ‖ΦΛΦᵀ − C‖_F / max(1, ‖C‖_F).
    pub fn reconstruction_residual(&self, c: &Matrix) -> f64 {
        let diff = self.reconstruct().add_scaled(c, -1.0).expect("same shape");
        frobenius_norm(&diff) / frobenius_norm(c).max(1.0)
    }
}

pub fn sym_eigen(c: &Matrix) -> Result<EigenDecomposition> {
    sym_eigen_with(c, &EigenConfig::default())
}

/// Cyclic Jacobi eigendecomposition.
///
/// The input is symmetrized as `(C + Cᵀ)/2` after the asymmetry check.
/// Output ordering: ascending eigenvalue, ties kept in Jacobi column order.
/// Each eigenvector has its largest-magnitude entry positive; among entries
/// tied in magnitude the earliest index wins.
pub fn sym_eigen_with(c: &Matrix, cfg: &EigenConfig) -> Result<EigenDecomposition> {
    if !c.is_square() {
        return Err(Error::NotSquare {
            rows: c.rows,
            cols: c.cols,
        });
    }
    if !c.is_finite() {
        return Err(Error::invalid("matrix contains NaN or infinite entries"));
    }
    let n = c.rows;
    let scale = c.max_abs().max(1.0);
    if c.max_asymmetry() > cfg.symmetry_tol * scale {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max asymmetry {:e})",
            c.max_asymmetry()
        )));
    }

    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a.set(i, j, 0.5 * (c.get(i, j) + c.get(j, i)));
        }
    }
    let mut v = Matrix::identity(n);
    let threshold = cfg.rel_tol * frobenius_norm(&a);

    let mut sweeps = 0;
    loop {
        if off_diagonal_norm(&a) <= threshold {
            break;
        }
        if sweeps == cfg.max_sweeps {
            return Err(Error::Numerical(format!(
                "Jacobi eigensolver did not converge in {} sweeps",
                cfg.max_sweeps
            )));
        }
        sweeps += 1;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep their Jacobi column order
    order.sort_by(|&i, &j| a.get(i, i).total_cmp(&a.get(j, j)));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src);
        canonicalize_sign(&mut col);
        for (i, x) in col.into_iter().enumerate() {
            eigenvectors.set(i, dst, x);
        }
    }

    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
        sweeps,
    })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.get(i, j) * a.get(i, j);
            }
        }
    }
    s.sqrt()
}

/// Applies the plane rotation that annihilates `a[p][q]`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let n = a.rows;
    let apq = a.get(p, q);
    if apq == 0.0 {
        return;
    }
    let app = a.get(p, p);
    let aqq = a.get(q, q);
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
        sign / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let cs = 1.0 / (t * t + 1.0).sqrt();
    let sn = t * cs;

    for k in 0..n {
        let akp = a.get(k, p);
        let akq = a.get(k, q);
        a.set(k, p, cs * akp - sn * akq);
        a.set(k, q, sn * akp + cs * akq);
    }
    for k in 0..n {
        let apk = a.get(p, k);
        let aqk = a.get(q, k);
        a.set(p, k, cs * apk - sn * aqk);
        a.set(q, k, sn * apk + cs * aqk);
    }
    a.set(p, p, app - t * apq);
    a.set(q, q, aqq + t * apq);
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);

    for k in 0..n {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, cs * vkp - sn * vkq);
        v.set(k, q, sn * vkp + cs * vkq);
    }
}

/// Magnitudes within this relative distance of the maximum count as tied.
const SIGN_TIE_TOL: f64 = 1e-12;

fn canonicalize_sign(col: &mut [f64]) {
    let max = col.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    let pivot = col
        .iter()
        .position(|x| x.abs() >= max * (1.0 - SIGN_TIE_TOL))
        .expect("maximum is attained");
    if col[pivot] < 0.0 {
        col.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Orthonormalizes the rows of `m` in place (modified Gram-Schmidt).
///
/// Fails if the rows are numerically dependent.
pub fn orthonormalize_rows(m: &mut Matrix) -> Result<()> {
    let (rows, cols) = m.shape();
    for i in 0..rows {
        for j in 0..i {
            let proj = dot(m.row(i), m.row(j));
            for k in 0..cols {
                let val = m.get(i, k) - proj * m.get(j, k);
                m.set(i, k, val);
            }
        }
        let nrm = norm(m.row(i));
        if nrm < 1e-12 {
            return Err(Error::Numerical("rows are linearly dependent".into()));
        }
        for k in 0..cols {
            let val = m.get(i, k) / nrm;
            m.set(i, k, val);
        }
    }
    Ok(())
}
