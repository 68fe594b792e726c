use super::funcs::scalar;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// The skew matrix with `hat(b) * v = v x b`.
pub fn hat(b: &Vec3) -> Mat3 {
    [
        [0.0, b[2], -b[1]],
        [-b[2], 0.0, b[0]],
        [b[1], -b[0], 0.0],
    ]
}

pub fn mat3_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, o) in row.iter_mut().enumerate() {
            *o = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `exp(t * hat(b))` by the Rodrigues formula
/// `I + t sinc(theta) B + t^2 g1(theta) B^2`, `theta = t |b|`.
pub fn rodrigues_exp(b: &Vec3, t: f64) -> Mat3 {
    let theta = t * dot3(b, b).sqrt();
    let c1 = t * scalar::sinc(theta);
    let c2 = t * t * scalar::g1(theta);
    let bh = hat(b);
    let bh2 = mat3_mul(&bh, &bh);
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = c1 * bh[i][j] + c2 * bh2[i][j];
        }
        out[i][i] += 1.0;
    }
    out
}

/// `exp(t * hat(b)) v` without forming the matrix. Adding the rotation to
/// `v` directly keeps the near-identity part out of rounding, which would
/// otherwise bias `|v|` the same way on every step of a constant field.
pub fn rodrigues_rotate(b: &Vec3, t: f64, v: &Vec3) -> Vec3 {
    let theta = t * dot3(b, b).sqrt();
    let c1 = t * scalar::sinc(theta);
    let c2 = t * t * scalar::g1(theta);
    let w = cross(v, b);
    let w2 = cross(&w, b);
    [
        v[0] + (c1 * w[0] + c2 * w2[0]),
        v[1] + (c1 * w[1] + c2 * w2[1]),
        v[2] + (c1 * w[2] + c2 * w2[2]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn taylor_exp3(b: &Vec3, t: f64) -> Mat3 {
        let bh = hat(b);
        let mut out = [[0.0; 3]; 3];
        let mut term = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for k in 0..30 {
            if k > 0 {
                term = mat3_mul(&term, &bh);
                for row in term.iter_mut() {
                    for x in row.iter_mut() {
                        *x *= t / k as f64;
                    }
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    out[i][j] += term[i][j];
                }
            }
        }
        out
    }

    fn det3(m: &Mat3) -> f64 {
        dot3(&m[0], &cross(&m[1], &m[2]))
    }

    #[test]
    fn hat_sign_convention() {
        let b = [0.3, -1.2, 2.5];
        let v = [1.0, 2.0, -0.5];
        assert_eq!(hat(&b)[1][0], -b[2]);
        let hv = mat3_vec(&hat(&b), &v);
        let vxb = cross(&v, &b);
        for i in 0..3 {
            assert!((hv[i] - vxb[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_field_is_identity() {
        let r = rodrigues_exp(&[0.0; 3], 3.0);
        assert_eq!(r, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }

    #[test]
    fn quarter_turn_about_z() {
        let b = [0.0, 0.0, 1.0];
        let v = mat3_vec(&rodrigues_exp(&b, PI / 2.0), &[1.0, 0.0, 0.0]);
        let oracle = mat3_vec(&taylor_exp3(&b, PI / 2.0), &[1.0, 0.0, 0.0]);
        let want = [0.0, -1.0, 0.0];
        for i in 0..3 {
            assert!((oracle[i] - want[i]).abs() < 1e-13);
            assert!((v[i] - want[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_taylor_for_moderate_angles() {
        for (b, t) in [([0.1, 0.7, -0.3], 1.3), ([2.0, 0.0, 1.0], -0.4), ([1e-8, 2e-8, 0.0], 1.0)] {
            let r = rodrigues_exp(&b, t);
            let o = taylor_exp3(&b, t);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((r[i][j] - o[i][j]).abs() < 1e-13);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn orthogonal_axis_preserving(
            b in prop::array::uniform3(-5.0f64..5.0),
            v in prop::array::uniform3(-3.0f64..3.0),
            t in -4.0f64..4.0,
        ) {
            let r = rodrigues_exp(&b, t);
            let rtr = mat3_mul(&[[r[0][0], r[1][0], r[2][0]], [r[0][1], r[1][1], r[2][1]], [r[0][2], r[1][2], r[2][2]]], &r);
            for i in 0..3 {
                for j in 0..3 {
                    let id = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((rtr[i][j] - id).abs() <= 1e-12);
                }
            }
            prop_assert!((det3(&r) - 1.0).abs() <= 1e-12);
            let rb = mat3_vec(&r, &b);
            for i in 0..3 {
                prop_assert!((rb[i] - b[i]).abs() <= 1e-12 * (1.0 + b[i].abs()));
            }
            let rv = mat3_vec(&r, &v);
            let n0 = dot3(&v, &v).sqrt();
            prop_assert!((dot3(&rv, &rv).sqrt() - n0).abs() <= 1e-13 * n0.max(1.0));
        }
    }
}
