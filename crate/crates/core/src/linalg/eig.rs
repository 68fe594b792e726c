use super::Matrix;
use crate::error::{Error, Result};

const OFF_DIAGONAL_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-12;

/// Eigendecomposition `A = basis * diag(eigenvalues) * basis^T` of a real
/// symmetric matrix, with eigenvalues sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomp {
    pub eigenvalues: Vec<f64>,
    /// Orthogonal matrix whose columns are the eigenvectors.
    pub basis: Matrix,
}

impl SpectralDecomp {
    /// `basis * diag(f(lambda_i)) * basis^T`
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.eigenvalues.len();
        let vals: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let v = &self.basis;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += v[(i, k)] * vals[k] * v[(j, k)];
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.apply(|l| l)
    }
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
pub fn sym_eig(a: &Matrix) -> Result<SpectralDecomp> {
    if !a.is_square() {
        return Err(Error::dim(format!(
            "sym_eig needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let n = a.rows();
    // symmetrize so the rotations act on an exactly symmetric working copy
    let mut w = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = Matrix::identity(n);
    let scale = w.norm_fro();

    for _ in 0..MAX_SWEEPS {
        let off = off_diagonal_norm(&w);
        if off <= OFF_DIAGONAL_TOL * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = w[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut w, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(i, i)].total_cmp(&w[(j, j)]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| w[(i, i)]).collect();
    let mut basis = Matrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    // accumulated rotations drift from orthogonality by O(n eps); matrix
    // functions built on the basis inherit that as a per-step energy bias
    reorthonormalize(&mut basis);
    reorthonormalize(&mut basis);
    Ok(SpectralDecomp { eigenvalues, basis })
}

/// Modified Gram-Schmidt on the columns, in place.
fn reorthonormalize(v: &mut Matrix) {
    let n = v.rows();
    for k in 0..v.cols() {
        for j in 0..k {
            let proj: f64 = (0..n).map(|i| v[(i, j)] * v[(i, k)]).sum();
            for i in 0..n {
                v[(i, k)] -= proj * v[(i, j)];
            }
        }
        let len = (0..n).map(|i| v[(i, k)] * v[(i, k)]).sum::<f64>().sqrt();
        for i in 0..n {
            v[(i, k)] /= len;
        }
    }
}

fn off_diagonal_norm(w: &Matrix) -> f64 {
    let n = w.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += w[(i, j)] * w[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// `W <- J^T W J`, `V <- V J` for the plane rotation in (p, q).
fn rotate(w: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = w.rows();
    for k in 0..n {
        let (wkp, wkq) = (w[(k, p)], w[(k, q)]);
        w[(k, p)] = c * wkp - s * wkq;
        w[(k, q)] = s * wkp + c * wkq;
    }
    for k in 0..n {
        let (wpk, wqk) = (w[(p, k)], w[(q, k)]);
        w[(p, k)] = c * wpk - s * wqk;
        w[(q, k)] = s * wpk + c * wqk;
    }
    w[(p, q)] = 0.0;
    w[(q, p)] = 0.0;
    for k in 0..n {
        let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}
