//! Small dense linear algebra used by the integrators.
//!
//! Everything here is sized for the problems in the catalog (dimension up to a
//! few hundred), so the implementations favour determinism and clarity over
//! blocking or SIMD.

mod eig;
mod expm;
mod funcs;
mod rotation;

use std::fmt;
use std::ops::{Index, IndexMut, Mul};

use crate::error::{Error, Result};

pub use eig::{sym_eig, SpectralDecomp};
pub use expm::{dense_exp, dense_phi};
pub use funcs::{even_matrix_function, scalar, EvenFunction};
pub(crate) use funcs::psd_decomposition;
pub use rotation::{cross, dot3, hat, mat3_mul, mat3_vec, rodrigues_exp, rodrigues_rotate, Mat3, Vec3};

/// Dense row-major real matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row slices. All rows must have the same length and
    /// every entry must be finite.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(Error::dim("ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Self::from_row_major(nrows, ncols, data)
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| a * x).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Self {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Self {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "matrix shape mismatch"
        );
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `y += alpha * self * x`
    pub fn matvec_acc(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(self.cols, x.len(), "matvec shape mismatch");
        assert_eq!(self.rows, y.len(), "matvec shape mismatch");
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += alpha * dot(self.row(i), x);
        }
    }

    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest |a_ij - a_ji| divided by max(1, max |a_ij|).
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / self.max_abs().max(1.0)
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Matrix) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// Solves `self * X = rhs` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        if !self.is_square() || rhs.rows != self.rows {
            return Err(Error::dim("solve requires a square system"));
        }
        let n = self.rows;
        let m = rhs.cols;
        let mut a = self.data.clone();
        let mut b = rhs.data.clone();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
                .unwrap_or(col);
            let pv = a[pivot * n + col];
            if pv == 0.0 || !pv.is_finite() {
                return Err(Error::InvalidArgument("singular matrix in solve".into()));
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(col * n + k, pivot * n + k);
                }
                for k in 0..m {
                    b.swap(col * m + k, pivot * m + k);
                }
            }
            for i in col + 1..n {
                let f = a[i * n + col] / pv;
                if f == 0.0 {
                    continue;
                }
                for k in col..n {
                    a[i * n + k] -= f * a[col * n + k];
                }
                for k in 0..m {
                    b[i * m + k] -= f * b[col * m + k];
                }
            }
        }
        for col in (0..n).rev() {
            let pv = a[col * n + col];
            for k in 0..m {
                let mut acc = b[col * m + k];
                for j in col + 1..n {
                    acc -= a[col * n + j] * b[j * m + k];
                }
                b[col * m + k] = acc / pv;
            }
        }
        Ok(Matrix {
            rows: n,
            cols: m,
            data: b,
        })
    }

    pub fn solve_vec(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let b = Matrix::from_row_major(rhs.len(), 1, rhs.to_vec())?;
        Ok(self.solve(&b)?.data)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a - b`
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Solves `(I + gamma f^T) q = l` through the scalar reduction
/// `f^T q = f^T l / (1 + f^T gamma)`.
pub fn rank1_solve(gamma: &[f64], f: &[f64], l: &[f64]) -> Result<Vec<f64>> {
    if gamma.len() != f.len() || f.len() != l.len() {
        return Err(Error::dim("rank1_solve operands differ in length"));
    }
    let denominator = 1.0 + dot(f, gamma);
    if denominator <= 1e-14 {
        return Err(Error::SingularDenominator { denominator });
    }
    let fq = dot(f, l) / denominator;
    Ok(l.iter().zip(gamma).map(|(li, gi)| li - gi * fq).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solve_recovers_known_solution() {
        let a = Matrix::from_rows(&[[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]]).unwrap();
        let x = [1.0, -2.0, 0.5];
        let b = a.matvec(&x);
        let got = a.solve_vec(&b).unwrap();
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn solve_rejects_singular() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        assert!(a.solve_vec(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn from_rows_rejects_nan() {
        assert!(Matrix::from_rows(&[[1.0, f64::NAN]]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn rank1_trivial_cases() {
        let l = [1.0, 2.0, 3.0];
        assert_eq!(rank1_solve(&[0.0; 3], &[1.0, 1.0, 1.0], &l).unwrap(), l.to_vec());
        assert_eq!(rank1_solve(&[1.0, 5.0, 2.0], &[0.0; 3], &l).unwrap(), l.to_vec());
    }

    #[test]
    fn rank1_singular_denominator() {
        let err = rank1_solve(&[-1.0, 0.0], &[1.0, 0.0], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::SingularDenominator { .. }));
    }

    #[test]
    fn rank1_matches_dense_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let d = 6;
            let gamma: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
            let f: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
            let l: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dense = Matrix::from_fn(d, d, |i, j| (i == j) as u8 as f64 + gamma[i] * f[j]);
            let want = dense.solve_vec(&l).unwrap();
            let got = rank1_solve(&gamma, &f, &l).unwrap();
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12, "{g} vs {w}");
            }
            let resid = sub(&dense.matvec(&got), &l);
            assert!(norm(&resid) <= 1e-12 * norm(&l));
        }
    }
}
