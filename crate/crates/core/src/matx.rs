//! Dense linear algebra for small symmetric matrices.
//!
//! Everything the estimator touches (covariances, dual iterates, precision
//! estimates) is a [`SymMatrix`]: a full row-major `p × p` buffer whose two
//! triangles are always written together, so `get(i, j) == get(j, i)` holds
//! bit-for-bit. Routines that can introduce floating-point asymmetry (the
//! inverse) average the two triangles before returning.
//!
//! [`Matrix`] is a plain rectangular buffer used for the nonsymmetric
//! consensus matrices.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

/// Sweep cap for cyclic Jacobi.
const JACOBI_MAX_SWEEPS: usize = 100;
const POWER_MAX_ITERS: usize = 10_000;
const POWER_TOL: f64 = 1e-12;

#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * m.dim + i] = d;
        }
        m
    }

    /// Builds a matrix from the upper triangle of `f`; `f(i, j)` is only
    /// called with `i <= j`.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds a matrix from rows, rejecting ragged or asymmetric input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        for i in 0..dim {
            for j in 0..i {
                if data[i * dim + j] != data[j * dim + i] {
                    return Err(Error::Validation(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(SymMatrix { dim, data })
    }

    /// Averages the two triangles of a square matrix.
    pub fn symmetrize(m: &Matrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::DimensionMismatch {
                expected: m.rows,
                found: m.cols,
            });
        }
        Ok(Self::from_fn(m.rows, |i, j| {
            if i == j {
                m.get(i, i)
            } else {
                0.5 * (m.get(i, j) + m.get(j, i))
            }
        }))
    }

    /// `x xᵀ`
    pub fn outer(x: &[f64]) -> Self {
        Self::from_fn(x.len(), |i, j| x[i] * x[j])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Writes both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Applies `f` to every entry. Symmetry is preserved because `f` sees
    /// identical inputs on both triangles.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|x| a * x)
    }

    /// Adds `shift` to the diagonal.
    pub fn shift_diag(&self, shift: f64) -> Self {
        let mut m = self.clone();
        for i in 0..self.dim {
            m.data[i * self.dim + i] += shift;
        }
        m
    }

    pub fn zip_with(&self, other: &SymMatrix, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_dims(self.dim, other.dim)?;
        Ok(SymMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// General product; the result is not symmetric in general.
    pub fn matmul(&self, other: &SymMatrix) -> Result<Matrix> {
        check_dims(self.dim, other.dim)?;
        let n = self.dim;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    /// Largest `|m(i,j) - m(j,i)|`; zero for every matrix built through this API.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.dim,
            cols: self.dim,
            data: self.data.clone(),
        }
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "SymMatrix({}x{})", self.dim, self.dim)?;
        for row in self.rows() {
            writeln!(f, "  {row:?}")?;
        }
        Ok(())
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;

    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        self.zip_with(rhs, |a, b| a + b)
            .expect("matrix dimensions must agree")
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;

    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        self.zip_with(rhs, |a, b| a - b)
            .expect("matrix dimensions must agree")
    }
}

impl Mul<&SymMatrix> for f64 {
    type Output = SymMatrix;

    fn mul(self, rhs: &SymMatrix) -> SymMatrix {
        rhs.scale(self)
    }
}

/// Rectangular row-major matrix.
#[derive(Clone, Debug, PartialEq)]
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

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = m`.
pub fn cholesky(m: &SymMatrix) -> Result<Matrix> {
    let n = m.dim();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
pub fn inverse_spd(m: &SymMatrix) -> Result<SymMatrix> {
    let n = m.dim();
    let l = cholesky(m)?;
    // Columns of L⁻¹ by forward substitution.
    let mut linv = Matrix::zeros(n, n);
    for c in 0..n {
        for i in c..n {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in c..i {
                s -= l.get(i, k) * linv.get(k, c);
            }
            linv.set(i, c, s / l.get(i, i));
        }
    }
    // M⁻¹ = L⁻ᵀ L⁻¹
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let start = i.max(j);
            let s = (start..n).map(|k| linv.get(k, i) * linv.get(k, j)).sum();
            out.set(i, j, s);
        }
    }
    SymMatrix::symmetrize(&out)
}

/// Eigenvalues and eigenvectors of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `k` of this matrix is the eigenvector for `values[k]`.
    pub vectors: Matrix,
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::NAN)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NAN)
    }

    /// `V diag(values) Vᵀ`
    pub fn reconstruct(&self) -> Matrix {
        let n = self.values.len();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let s = (0..n)
                    .map(|k| self.vectors.get(i, k) * self.values[k] * self.vectors.get(j, k))
                    .sum();
                out.set(i, j, s);
            }
        }
        out
    }
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn eig_sym(m: &SymMatrix) -> Result<Vec<f64>> {
    Ok(eig_sym_decompose(m)?.values)
}

/// Cyclic Jacobi eigendecomposition.
pub fn eig_sym_decompose(m: &SymMatrix) -> Result<SymEigen> {
    let n = m.dim();
    let mut a = m.to_matrix();
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let scale = frob_norm(m);
    let mut converged = n < 2 || scale == 0.0;
    let mut sweep = 0;
    while !converged {
        if sweep == JACOBI_MAX_SWEEPS {
            return Err(Error::NonConvergence {
                routine: "jacobi eigensolver",
                iterations: JACOBI_MAX_SWEEPS,
            });
        }
        sweep += 1;
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j) * a.get(i, j))
            .sum::<f64>()
            .sqrt();
        converged = off <= 1e-15 * scale;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a.get(x, x).total_cmp(&a.get(y, y)));
    let values = order.iter().map(|&k| a.get(k, k)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors.set(i, dst, v.get(i, src));
        }
    }
    Ok(SymEigen { values, vectors })
}

/// Spectral radius of a square (possibly nonsymmetric) matrix by power
/// iteration from the all-ones vector. Intended for nonnegative matrices,
/// whose dominant eigenvalue is real.
pub fn eig_general_spectral_radius(m: &Matrix) -> Result<f64> {
    check_dims(m.rows(), m.cols())?;
    let n = m.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut estimate = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERS {
        let y = m.mul_vec(&x);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        if (norm - estimate).abs() <= POWER_TOL {
            return Ok(norm);
        }
        estimate = norm;
        x = y.into_iter().map(|v| v / norm).collect();
    }
    Err(Error::NonConvergence {
        routine: "power iteration",
        iterations: POWER_MAX_ITERS,
    })
}

/// `sign(x) max(|x| − λ, 0)`, computed as `x − C_λ(x)` so the pair
/// recombines to `x` whenever `x ∓ λ` is representable.
#[inline]
pub fn soft_threshold_scalar(x: f64, lambda: f64) -> f64 {
    x - clip_scalar(x, lambda)
}

#[inline]
pub fn clip_scalar(x: f64, lambda: f64) -> f64 {
    x.max(-lambda).min(lambda)
}

/// Elementwise `sign(x) max(|x| - λ, 0)`.
pub fn soft_threshold(m: &SymMatrix, lambda: f64) -> SymMatrix {
    m.map(|x| soft_threshold_scalar(x, lambda))
}

/// Elementwise `min(max(x, -λ), λ)`.
pub fn clip(m: &SymMatrix, lambda: f64) -> SymMatrix {
    m.map(|x| clip_scalar(x, lambda))
}

pub fn frob_norm(m: &SymMatrix) -> f64 {
    m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn frob_dist(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(rows: &[&[f64]]) -> SymMatrix {
        SymMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn cholesky_examples() {
        let l = cholesky(&SymMatrix::identity(2)).unwrap();
        assert_eq!(l, Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());

        let l = cholesky(&SymMatrix::diagonal(&[4.0, 9.0])).unwrap();
        assert_eq!(l, Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap());

        // det = 0.5 - 0.999^2 < 0
        let bad = sym(&[&[1.0, 0.999], &[0.999, 0.5]]);
        assert!(matches!(
            cholesky(&bad),
            Err(Error::NotPositiveDefinite { index: 1, .. })
        ));
    }

    #[test]
    fn inverse_examples() {
        let inv = inverse_spd(&SymMatrix::identity(3).scale(2.0)).unwrap();
        assert!(frob_dist(&inv, &SymMatrix::identity(3).scale(0.5)).unwrap() < 1e-15);

        let inv = inverse_spd(&sym(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        let expected = sym(&[&[2.0 / 3.0, -1.0 / 3.0], &[-1.0 / 3.0, 2.0 / 3.0]]);
        assert!(frob_dist(&inv, &expected).unwrap() < 1e-15);

        assert_eq!(inverse_spd(&SymMatrix::identity(5)).unwrap(), SymMatrix::identity(5));
    }

    #[test]
    fn inverse_residual_contract() {
        let m = sym(&[
            &[4.0, 1.0, 0.5, 0.0],
            &[1.0, 3.0, 0.2, 0.1],
            &[0.5, 0.2, 2.0, -0.3],
            &[0.0, 0.1, -0.3, 1.5],
        ]);
        let inv = inverse_spd(&m).unwrap();
        let prod = m.matmul(&inv).unwrap();
        let mut res: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let target = if i == j { 1.0 } else { 0.0 };
                res += (prod.get(i, j) - target).powi(2);
            }
        }
        assert!(res.sqrt() <= 1e-10 * 4.0);
        assert_eq!(inv.asymmetry(), 0.0);
    }

    #[test]
    fn eig_sym_examples() {
        assert_eq!(eig_sym(&SymMatrix::diagonal(&[3.0, 1.0, 2.0])).unwrap(), vec![1.0, 2.0, 3.0]);

        let ev = eig_sym(&sym(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert_close(ev[0], -1.0, 1e-14);
        assert_close(ev[1], 1.0, 1e-14);

        let ev = eig_sym(&sym(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert_close(ev[0], 1.0, 1e-14);
        assert_close(ev[1], 3.0, 1e-14);
    }

    #[test]
    fn eig_reconstruction() {
        let m = sym(&[
            &[2.0, -0.7, 0.3, 0.0, 0.1],
            &[-0.7, 1.5, 0.0, 0.4, 0.0],
            &[0.3, 0.0, 1.0, -0.2, 0.6],
            &[0.0, 0.4, -0.2, 3.0, 0.0],
            &[0.1, 0.0, 0.6, 0.0, 0.8],
        ]);
        let e = eig_sym_decompose(&m).unwrap();
        let r = SymMatrix::symmetrize(&e.reconstruct()).unwrap();
        assert!(frob_dist(&r, &m).unwrap() <= 1e-8 * frob_norm(&m));
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn spectral_radius_examples() {
        let one = Matrix::from_rows(&[vec![0.5]]).unwrap();
        assert_close(eig_general_spectral_radius(&one).unwrap(), 0.5, 1e-15);

        // trace 5/6, det 0
        let p = Matrix::from_rows(&[vec![1.0 / 3.0, 1.0 / 3.0], vec![0.5, 0.5]]).unwrap();
        assert_close(eig_general_spectral_radius(&p).unwrap(), 5.0 / 6.0, 1e-12);

        assert_eq!(eig_general_spectral_radius(&Matrix::zeros(3, 3)).unwrap(), 0.0);
        assert_eq!(eig_general_spectral_radius(&Matrix::zeros(0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn threshold_and_clip_examples() {
        let m = sym(&[&[0.5, -0.1], &[-0.1, 2.0]]);
        assert_eq!(soft_threshold(&m, 0.0), m);
        assert_close(soft_threshold_scalar(0.5, 0.15), 0.35, 1e-15);
        assert_eq!(soft_threshold_scalar(-0.1, 0.15), 0.0);

        assert_eq!(clip_scalar(0.5, 0.15), 0.15);
        assert_eq!(clip_scalar(-0.5, 0.15), -0.15);
        assert_eq!(clip_scalar(0.1, 0.15), 0.1);
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frob_norm(&SymMatrix::identity(4)), 2.0);
        assert_eq!(frob_norm(&SymMatrix::zeros(3)), 0.0);
        assert_eq!(frob_norm(&SymMatrix::diagonal(&[3.0, 4.0])), 5.0);
        assert!(matches!(
            frob_dist(&SymMatrix::zeros(2), &SymMatrix::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn from_rows_rejects_asymmetry() {
        assert!(SymMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]).is_err());
        assert!(SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0]]).is_err());
    }
}
