use super::{sym_eig, Matrix, SpectralDecomp};
use crate::error::{Error, Result};

/// Below this |z| the even functions switch to their Taylor polynomials.
pub const SMALL_ARGUMENT: f64 = 1e-4;

/// Negative eigenvalues above `-PSD_TOL * max(1, ||A||)` are treated as zero.
pub(crate) const PSD_TOL: f64 = 1e-10;

/// Scalar kernels shared by the matrix functions and the rotation exponential.
pub mod scalar {
    use super::SMALL_ARGUMENT;

    pub fn cos(z: f64) -> f64 {
        z.cos()
    }

    /// `sin(z) / z`
    pub fn sinc(z: f64) -> f64 {
        if z.abs() < SMALL_ARGUMENT {
            let z2 = z * z;
            1.0 - z2 / 6.0 * (1.0 - z2 / 20.0 * (1.0 - z2 / 42.0))
        } else {
            z.sin() / z
        }
    }

    /// `(1 - cos z) / z^2`, evaluated as `sinc(z/2)^2 / 2` to avoid cancellation.
    pub fn g1(z: f64) -> f64 {
        if z.abs() < SMALL_ARGUMENT {
            let z2 = z * z;
            0.5 - z2 / 24.0 * (1.0 - z2 / 30.0 * (1.0 - z2 / 56.0))
        } else {
            let s = sinc(0.5 * z);
            0.5 * s * s
        }
    }

    /// `cos z - 1`, evaluated as `-2 sin^2(z/2)`.
    pub fn cos_minus_one(z: f64) -> f64 {
        if z.abs() < SMALL_ARGUMENT {
            let z2 = z * z;
            -z2 / 2.0 * (1.0 - z2 / 12.0 * (1.0 - z2 / 30.0))
        } else {
            let s = (0.5 * z).sin();
            -2.0 * s * s
        }
    }
}

/// Even analytic functions of `z = h * sqrt(lambda) / eps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvenFunction {
    Cos,
    Sinc,
    G1,
    /// `cos z - 1`
    G2m,
}

impl EvenFunction {
    pub fn eval(self, z: f64) -> f64 {
        match self {
            EvenFunction::Cos => scalar::cos(z),
            EvenFunction::Sinc => scalar::sinc(z),
            EvenFunction::G1 => scalar::g1(z),
            EvenFunction::G2m => scalar::cos_minus_one(z),
        }
    }
}

pub(crate) fn psd_decomposition(a: &Matrix) -> Result<SpectralDecomp> {
    let mut d = sym_eig(a)?;
    let floor = -PSD_TOL * a.max_abs().max(1.0);
    if let Some(&lowest) = d.eigenvalues.first() {
        if lowest < floor {
            return Err(Error::NotPositiveSemidefinite { eigenvalue: lowest });
        }
    }
    for l in &mut d.eigenvalues {
        *l = l.max(0.0);
    }
    Ok(d)
}

/// `f(h * Omega)` with `Omega = sqrt(A) / eps` for a symmetric PSD `A`.
pub fn even_matrix_function(a: &Matrix, h: f64, eps: f64, which: EvenFunction) -> Result<Matrix> {
    if !(h > 0.0 && eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "h and eps must be positive (h = {h}, eps = {eps})"
        )));
    }
    let d = psd_decomposition(a)?;
    Ok(d.apply(|l| which.eval(h * l.sqrt() / eps)))
}
