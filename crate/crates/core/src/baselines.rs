//! Comparison integrators: average vector field, implicit trapezoidal and
//! the Boris pusher.

use crate::error::{Error, Result};
use crate::linalg::{cross, Vec3};
use crate::sav_cpd::CpdProblem;
use crate::sav_osde::OsdeProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1000,
        }
    }
}

/// Gauss-Legendre rule on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        gauss_legendre(3).expect("3 is a valid order")
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

pub fn gauss_legendre(n: usize) -> Result<QuadratureRule> {
    if !(1..=10).contains(&n) {
        return Err(Error::QuadratureOrder(n));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        // roots come out decreasing, so 1 - x maps them to increasing nodes
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    // nodes are symmetric about 1/2
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
        nodes[j] = 1.0 - nodes[i];
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.5;
    }
    Ok(QuadratureRule { nodes, weights })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates `x <- map(x)` until successive iterates differ by at most `tol`
/// in the max norm. Running out of iterations is reported through
/// `converged`, not as an error.
pub fn fixed_point_solve(
    mut map: impl FnMut(&[f64]) -> Vec<f64>,
    guess: Vec<f64>,
    cfg: &FixedPointConfig,
) -> Result<FixedPointResult> {
    let mut x = guess;
    for k in 1..=cfg.max_iter {
        let next = map(&x);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: k });
        }
        let diff = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        if diff <= cfg.tol {
            return Ok(FixedPointResult {
                x,
                iterations: k,
                converged: true,
            });
        }
    }
    Ok(FixedPointResult {
        x,
        iterations: cfg.max_iter,
        converged: false,
    })
}

fn euler_guess(y: &[f64], f: &[f64], h: f64) -> Vec<f64> {
    y.iter().zip(f).map(|(a, b)| a + h * b).collect()
}

/// `y+ = y + h sum_j w_j f((1 - xi_j) y + xi_j y+)`
pub fn avf_step(
    rhs: impl Fn(&[f64]) -> Vec<f64>,
    y: &[f64],
    h: f64,
    quad: &QuadratureRule,
    cfg: &FixedPointConfig,
) -> Result<FixedPointResult> {
    let guess = euler_guess(y, &rhs(y), h);
    let n = y.len();
    let mut point = vec![0.0; n];
    fixed_point_solve(
        |z| {
            let mut out = y.to_vec();
            for (&xi, &w) in quad.nodes.iter().zip(&quad.weights) {
                for i in 0..n {
                    point[i] = (1.0 - xi) * y[i] + xi * z[i];
                }
                let f = rhs(&point);
                for i in 0..n {
                    out[i] += h * w * f[i];
                }
            }
            out
        },
        guess,
        cfg,
    )
}

/// `y+ = y + h/2 (f(y) + f(y+))`
pub fn ito2_step(
    rhs: impl Fn(&[f64]) -> Vec<f64>,
    y: &[f64],
    h: f64,
    cfg: &FixedPointConfig,
) -> Result<FixedPointResult> {
    let f0 = rhs(y);
    let guess = euler_guess(y, &f0, h);
    fixed_point_solve(
        |z| {
            let f1 = rhs(z);
            (0..y.len())
                .map(|i| y[i] + 0.5 * h * (f0[i] + f1[i]))
                .collect()
        },
        guess,
        cfg,
    )
}

/// `(q, p)' = (p, -A q / eps^2 + F(q))`, with `y = [q; p]`.
pub fn osde_rhs(prob: &OsdeProblem) -> impl Fn(&[f64]) -> Vec<f64> + '_ {
    let d = prob.dim();
    let scale = -1.0 / (prob.eps * prob.eps);
    move |y| {
        let (q, p) = y.split_at(d);
        let mut out = Vec::with_capacity(2 * d);
        out.extend_from_slice(p);
        let mut acc = prob.force(q);
        prob.stiffness.matvec_acc(scale, q, &mut acc);
        out.extend(acc);
        out
    }
}

/// `(x, v)' = (v, v x B(x) + E(x))`, with `y = [x; v]`.
pub fn cpd_rhs(prob: &CpdProblem) -> impl Fn(&[f64]) -> Vec<f64> + '_ {
    move |y| {
        let x = [y[0], y[1], y[2]];
        let v = [y[3], y[4], y[5]];
        let vb = cross(&v, &prob.fields.magnetic(&x));
        let e = prob.fields.electric(&x);
        vec![v[0], v[1], v[2], vb[0] + e[0], vb[1] + e[1], vb[2] + e[2]]
    }
}

/// Velocity-synchronized Boris step: half kick, rotation, half kick, drift.
pub fn boris_step(x: &Vec3, v: &Vec3, t: f64, prob: &CpdProblem, h: f64) -> (Vec3, Vec3, f64) {
    let e = prob.fields.electric(x);
    let b = prob.fields.magnetic(x);
    let vm = [v[0] + 0.5 * h * e[0], v[1] + 0.5 * h * e[1], v[2] + 0.5 * h * e[2]];
    let tv = [0.5 * h * b[0], 0.5 * h * b[1], 0.5 * h * b[2]];
    let f = 2.0 / (1.0 + tv[0] * tv[0] + tv[1] * tv[1] + tv[2] * tv[2]);
    let sv = [f * tv[0], f * tv[1], f * tv[2]];
    let c1 = cross(&vm, &tv);
    let vp = [vm[0] + c1[0], vm[1] + c1[1], vm[2] + c1[2]];
    let c2 = cross(&vp, &sv);
    let vn = [
        vm[0] + c2[0] + 0.5 * h * e[0],
        vm[1] + c2[1] + 0.5 * h * e[1],
        vm[2] + c2[2] + 0.5 * h * e[2],
    ];
    let xn = [x[0] + h * vn[0], x[1] + h * vn[1], x[2] + h * vn[2]];
    (xn, vn, t + h)
}
