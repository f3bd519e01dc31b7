//! Dense linear algebra for the small matrices used throughout the crate.
//!
//! `Mat` is a general row-major matrix, `SymMatrix` a symmetric one. The
//! symmetric eigensolver is cyclic Jacobi, which is accurate to machine
//! precision for the dimensions we care about (a few hundred at most).

use crate::error::{domain, input, Error, Result};
use serde::{Deserialize, Serialize};
use std::ops::{Index, IndexMut};

const ASYM_TOL: f64 = 1e-8;
const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const PD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Mat::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn scalar(v: f64) -> Self {
        Mat { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return input(format!(
                "matrix data has {} entries, expected {}x{}",
                data.len(),
                rows,
                cols
            ));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return input("ragged rows");
        }
        Ok(Mat { rows: r, cols: c, data: rows.concat() })
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self[(i, l)];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[l * other.cols..(l + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `self' x` without forming the transpose.
    pub fn tmatvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "tmatvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            for (o, &a) in out.iter_mut().zip(&self.data[i * self.cols..(i + 1) * self.cols]) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a * s).collect() }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.rows).all(|i| (0..self.cols).all(|j| i == j || self[(i, j)] == 0.0))
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    /// `M'M` as a symmetric matrix.
    pub fn gram(&self) -> SymMatrix {
        SymMatrix::from_mat_unchecked(self.transpose().matmul(self))
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Symmetric square matrix. Construction symmetrizes `(A + A')/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    m: Mat,
}

#[derive(Debug, Clone)]
pub struct Eigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Eigenvectors stored as columns.
    pub vectors: Mat,
}

impl SymMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        SymMatrix::from_mat(Mat::from_vec(dim, dim, entries)?)
    }

    pub fn from_mat(m: Mat) -> Result<Self> {
        if !m.is_square() {
            return input(format!("expected square matrix, got {}x{}", m.rows, m.cols));
        }
        if !m.is_finite() {
            return input("non-finite matrix entry");
        }
        let scale = m.data.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let n = m.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                if (m[(i, j)] - m[(j, i)]).abs() > ASYM_TOL * scale.max(f64::MIN_POSITIVE) {
                    return input(format!("matrix is not symmetric at ({i},{j})"));
                }
            }
        }
        Ok(SymMatrix::from_mat_unchecked(m))
    }

    pub(crate) fn from_mat_unchecked(mut m: Mat) -> Self {
        let n = m.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix { m }
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix { m: Mat::identity(n) }
    }

    pub fn scalar_identity(n: usize, s: f64) -> Self {
        SymMatrix { m: Mat::identity(n).scale(s) }
    }

    pub fn from_diag(d: &[f64]) -> Self {
        SymMatrix { m: Mat::from_diag(d) }
    }

    pub fn dim(&self) -> usize {
        self.m.rows
    }

    pub fn as_mat(&self) -> &Mat {
        &self.m
    }

    pub fn into_mat(self) -> Mat {
        self.m
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix { m: self.m.add(&other.m) }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix { m: self.m.sub(&other.m) }
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix { m: self.m.scale(s) }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.m.matvec(x)
    }

    /// `x' S x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.m.matvec(x))
    }

    /// `B' S B` for a general `B`.
    pub fn congruence(&self, b: &Mat) -> SymMatrix {
        SymMatrix::from_mat_unchecked(b.transpose().matmul(&self.m).matmul(b))
    }

    pub fn eig(&self) -> Eigen {
        jacobi(&self.m)
    }

    pub fn lambda_min(&self) -> f64 {
        self.eig().values[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eig().values.last().expect("non-empty matrix")
    }

    pub fn is_positive_definite(&self) -> bool {
        let v = self.eig().values;
        let max = *v.last().unwrap();
        v[0] > PD_TOL * max.max(1.0)
    }

    /// Applies `f` to the eigenvalues: `V f(D) V'`.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let e = self.eig();
        let n = self.dim();
        let mut out = Mat::zeros(n, n);
        for (k, &lam) in e.values.iter().enumerate() {
            let fl = f(lam);
            for i in 0..n {
                let vik = e.vectors[(i, k)] * fl;
                for j in 0..n {
                    out[(i, j)] += vik * e.vectors[(j, k)];
                }
            }
        }
        SymMatrix::from_mat_unchecked(out)
    }

    pub fn sqrt(&self) -> Result<SymMatrix> {
        if self.lambda_min() < -PD_TOL * self.lambda_max().abs().max(1.0) {
            return domain("square root of an indefinite matrix");
        }
        Ok(self.map_eigenvalues(|l| l.max(0.0).sqrt()))
    }

    pub fn inverse(&self) -> Result<SymMatrix> {
        if !self.is_positive_definite() {
            return domain("matrix is not positive definite");
        }
        Ok(self.map_eigenvalues(|l| 1.0 / l))
    }

    /// Lower Cholesky factor.
    pub fn cholesky(&self) -> Result<Cholesky> {
        let n = self.dim();
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = self.m[(j, j)];
            for p in 0..j {
                d -= l[(j, p)] * l[(j, p)];
            }
            if d <= 0.0 || !d.is_finite() {
                return domain("matrix is not positive definite");
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = self.m[(i, j)];
                for p in 0..j {
                    s -= l[(i, p)] * l[(j, p)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Cholesky { l })
    }
}

impl Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.m[idx]
    }
}

#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Mat,
}

impl Cholesky {
    pub fn factor(&self) -> &Mat {
        &self.l
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows;
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for p in 0..i {
                s -= self.l[(i, p)] * z[p];
            }
            z[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for p in (i + 1)..n {
                s -= self.l[(p, i)] * z[p];
            }
            z[i] = s / self.l[(i, i)];
        }
        z
    }
}

fn jacobi(a: &Mat) -> Eigen {
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Mat::identity(n);
    let norm = a.frobenius();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * norm || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new)] = v[(k, old)];
        }
    }
    Eigen { values, vectors }
}

/// Eigendecomposition of a symmetric matrix, ascending eigenvalues.
pub fn eig_sym(m: &SymMatrix) -> (Vec<f64>, Mat) {
    let e = m.eig();
    (e.values, e.vectors)
}

/// `λ_min(P − Φ'PΦ)`.
pub fn gamma_coeff(p: &SymMatrix, phi: &Mat) -> Result<f64> {
    if phi.rows() != p.dim() || phi.cols() != p.dim() {
        return input("gamma_coeff: dimension mismatch");
    }
    if !p.is_positive_definite() {
        return domain("gamma_coeff: P is not positive definite");
    }
    Ok(p.sub(&p.congruence(phi)).lambda_min())
}

/// Spectral norm `‖A‖₂`.
pub fn spectral_norm(a: &Mat) -> f64 {
    a.gram().lambda_max().max(0.0).sqrt()
}

/// Induced norm `‖P^{1/2} A P^{-1/2}‖₂`.
pub fn weighted_matrix_norm(a: &Mat, p: &SymMatrix) -> Result<f64> {
    WeightedNorm::new(p.clone())?.matrix_norm(a)
}

/// Norms weighted by a positive definite matrix, with cached square roots.
#[derive(Debug, Clone)]
pub struct WeightedNorm {
    weight: SymMatrix,
    sqrt: SymMatrix,
    inv_sqrt: SymMatrix,
}

impl WeightedNorm {
    pub fn new(weight: SymMatrix) -> Result<Self> {
        if !weight.is_positive_definite() {
            return domain("weight matrix is not positive definite");
        }
        let sqrt = weight.map_eigenvalues(f64::sqrt);
        let inv_sqrt = weight.map_eigenvalues(|l| 1.0 / l.sqrt());
        Ok(WeightedNorm { weight, sqrt, inv_sqrt })
    }

    pub fn weight(&self) -> &SymMatrix {
        &self.weight
    }

    pub fn vector_norm_sq(&self, x: &[f64]) -> f64 {
        self.weight.quad_form(x).max(0.0)
    }

    pub fn matrix_norm(&self, a: &Mat) -> Result<f64> {
        let k = self.weight.dim();
        if a.rows() != k || a.cols() != k {
            return input("weighted norm: dimension mismatch");
        }
        let c = self.sqrt.as_mat().matmul(a).matmul(self.inv_sqrt.as_mat());
        Ok(spectral_norm(&c))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| alpha * a + b).collect()
}

pub fn sub_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

impl From<SymMatrix> for Mat {
    fn from(s: SymMatrix) -> Mat {
        s.m
    }
}

impl TryFrom<Mat> for SymMatrix {
    type Error = Error;
    fn try_from(m: Mat) -> Result<SymMatrix> {
        SymMatrix::from_mat(m)
    }
}
