use super::Matrix;
use crate::error::{Error, Result};

// Diagonal Pade(13) numerator coefficients.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const SCALED_NORM: f64 = 0.5;

/// Matrix exponential by scaling and squaring with a (13,13) Pade approximant.
pub fn dense_exp(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::dim("dense_exp needs a square matrix"));
    }
    if m.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite matrix entry".into()));
    }
    let n = m.rows();
    let norm = m.norm_one();
    let squarings = if norm > SCALED_NORM {
        (norm / SCALED_NORM).log2().ceil() as i32
    } else {
        0
    };
    let a = m.scale(0.5f64.powi(squarings));

    let b = &PADE13;
    let id = Matrix::identity(n);
    let a2 = a.matmul(&a);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);
    let u_inner = a6
        .matmul(&a6.scale(b[13]).add(&a4.scale(b[11])).add(&a2.scale(b[9])))
        .add(&a6.scale(b[7]))
        .add(&a4.scale(b[5]))
        .add(&a2.scale(b[3]))
        .add(&id.scale(b[1]));
    let u = a.matmul(&u_inner);
    let v = a6
        .matmul(&a6.scale(b[12]).add(&a4.scale(b[10])).add(&a2.scale(b[8])))
        .add(&a6.scale(b[6]))
        .add(&a4.scale(b[4]))
        .add(&a2.scale(b[2]))
        .add(&id.scale(b[0]));

    let mut r = v.sub(&u).solve(&v.add(&u))?;
    for _ in 0..squarings {
        r = r.matmul(&r);
    }
    Ok(r)
}

/// `phi(M) = (exp(M) - I) M^{-1}`, read off the top-right block of
/// `exp([[M, I], [0, 0]])`; well defined for singular `M`.
pub fn dense_phi(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::dim("dense_phi needs a square matrix"));
    }
    let n = m.rows();
    let mut big = Matrix::zeros(2 * n, 2 * n);
    big.set_block(0, 0, m);
    big.set_block(0, n, &Matrix::identity(n));
    Ok(dense_exp(&big)?.block(0, n, n, n))
}
