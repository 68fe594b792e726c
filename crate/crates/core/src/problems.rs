//! Benchmark problems with their parameters and initial data.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vec3};
use crate::sav_cpd::{CpdFields, CpdProblem};
use crate::sav_osde::{GeneralSavSystem, OsdeProblem, Potential};

pub const PROBLEM_TAGS: [&str; 5] = ["henon", "duffing", "sine-gordon", "cpd-constant", "cpd-general"];

#[derive(Debug, Clone)]
pub enum System {
    Osde {
        prob: OsdeProblem,
        q0: Vec<f64>,
        p0: Vec<f64>,
    },
    General {
        sys: GeneralSavSystem,
        u0: Vec<f64>,
    },
    Cpd {
        prob: CpdProblem,
        x0: Vec3,
        v0: Vec3,
    },
}

/// Exact Duffing solution `q = sn(omega t; k/omega)`, `p = omega cn dn`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuffingExact {
    pub omega: f64,
    pub k: f64,
}

impl DuffingExact {
    pub fn state(&self, t: f64) -> Result<(f64, f64)> {
        let (sn, cn, dn) = jacobi_elliptic(self.omega * t, self.k / self.omega)?;
        Ok((sn, self.omega * cn * dn))
    }
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub tag: &'static str,
    /// The swept parameter reported in result tables, e.g. `("eps", 0.1)`.
    pub param: (&'static str, f64),
    pub system: System,
    pub exact: Option<DuffingExact>,
}

impl ProblemInstance {
    pub fn is_cpd(&self) -> bool {
        matches!(self.system, System::Cpd { .. })
    }

    /// Initial data flattened to `(position, velocity)`.
    pub fn initial_split(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.system {
            System::Osde { q0, p0, .. } => (q0.clone(), p0.clone()),
            System::General { u0, .. } => {
                let h = u0.len() / 2;
                (u0[..h].to_vec(), u0[h..].to_vec())
            }
            System::Cpd { x0, v0, .. } => (x0.to_vec(), v0.to_vec()),
        }
    }
}

/// Free parameters of the catalog; each problem reads the ones it needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemParams {
    pub eps: f64,
    pub omega: f64,
    pub k: f64,
    pub n: usize,
    /// Overrides the problem's default `C0`.
    pub shift: Option<f64>,
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self {
            eps: 1.0,
            omega: 5.0,
            k: 0.07,
            n: 16,
            shift: None,
        }
    }
}

pub fn build(tag: &str, params: &ProblemParams) -> Result<ProblemInstance> {
    let mut inst = match tag {
        "henon" => henon_heiles_with(params.eps, params.shift.unwrap_or(100.0)),
        "duffing" => duffing_with(params.omega, params.k, params.shift.unwrap_or(100.0)),
        "sine-gordon" => sine_gordon_with(params.n, params.shift.unwrap_or(100.0)),
        "cpd-constant" => cpd_constant(params.eps),
        "cpd-general" => cpd_general(params.eps),
        _ => Err(Error::InvalidArgument(format!(
            "unknown problem '{tag}' (valid: {})",
            PROBLEM_TAGS.join(", ")
        ))),
    }?;
    if let (Some(c0), System::Cpd { prob, .. }) = (params.shift, &mut inst.system) {
        *prob = CpdProblem::new(prob.fields.clone(), c0, prob.lower_bound)?;
    }
    Ok(inst)
}

// ---------------------------------------------------------------- Henon-Heiles

/// `V(q, p) = (p2^2 + q2^2)/2 + q1^2 q2 - q2^3/3` on `u = (q1, q2, p1, p2)`.
#[derive(Debug, Clone, Copy)]
pub struct HenonHeilesPotential;

impl Potential for HenonHeilesPotential {
    fn dim(&self) -> usize {
        4
    }
    fn value(&self, u: &[f64]) -> f64 {
        let (q1, q2, p2) = (u[0], u[1], u[3]);
        0.5 * (p2 * p2 + q2 * q2) + q1 * q1 * q2 - q2 * q2 * q2 / 3.0
    }
    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let (q1, q2, p2) = (u[0], u[1], u[3]);
        vec![2.0 * q1 * q2, q2 + q1 * q1 - q2 * q2, 0.0, p2]
    }
}

pub fn canonical_structure(d: usize) -> Matrix {
    Matrix::from_fn(2 * d, 2 * d, |i, j| {
        if j == i + d {
            1.0
        } else if i == j + d {
            -1.0
        } else {
            0.0
        }
    })
}

pub fn henon_heiles(eps: f64) -> Result<ProblemInstance> {
    henon_heiles_with(eps, 100.0)
}

fn henon_heiles_with(eps: f64, shift: f64) -> Result<ProblemInstance> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
    }
    let quadratic = Matrix::from_diag(&[1.0 / eps, 0.0, 1.0 / eps, 0.0]);
    let sys = GeneralSavSystem::new(canonical_structure(2), quadratic, Arc::new(HenonHeilesPotential), shift)?;
    Ok(ProblemInstance {
        tag: "henon",
        param: ("eps", eps),
        system: System::General {
            sys,
            u0: vec![0.12; 4],
        },
        exact: None,
    })
}

// --------------------------------------------------------------------- Duffing

/// `V(q) = -k^2 q^4 / 2`
#[derive(Debug, Clone, Copy)]
pub struct QuarticPotential {
    pub k: f64,
}

impl Potential for QuarticPotential {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, q: &[f64]) -> f64 {
        -0.5 * self.k * self.k * q[0].powi(4)
    }
    fn gradient(&self, q: &[f64]) -> Vec<f64> {
        vec![-2.0 * self.k * self.k * q[0].powi(3)]
    }
}

pub fn duffing(omega: f64, k: f64) -> Result<ProblemInstance> {
    duffing_with(omega, k, 100.0)
}

fn duffing_with(omega: f64, k: f64, shift: f64) -> Result<ProblemInstance> {
    if !(k > 0.0 && k < omega) {
        return Err(Error::ModulusOutOfRange(k / omega));
    }
    // |q| <= 1 along the exact orbit, so V >= -k^2/2 there
    let prob = OsdeProblem::new(
        Matrix::from_diag(&[omega * omega + k * k]),
        1.0,
        Arc::new(QuarticPotential { k }),
        shift,
        0.5 * k * k,
    )?;
    Ok(ProblemInstance {
        tag: "duffing",
        param: ("omega", omega),
        system: System::Osde {
            prob,
            q0: vec![0.0],
            p0: vec![omega],
        },
        exact: Some(DuffingExact { omega, k }),
    })
}

/// `(sn, cn, dn)(u; kappa)` with `kappa` the modulus (not the parameter
/// `m = kappa^2`), by the descending Landen transformation.
pub fn jacobi_elliptic(u: f64, modulus: f64) -> Result<(f64, f64, f64)> {
    if !(0.0..=1.0).contains(&modulus) {
        return Err(Error::ModulusOutOfRange(modulus));
    }
    let m = modulus * modulus;
    if m == 0.0 {
        return Ok((u.sin(), u.cos(), 1.0));
    }
    if m == 1.0 {
        let sech = 1.0 / u.cosh();
        return Ok((u.tanh(), sech, sech));
    }
    let mut a = vec![1.0];
    let mut c = vec![modulus];
    let mut b = (1.0 - m).sqrt();
    while c.last().unwrap().abs() > 1e-15 && a.len() < 64 {
        let an = *a.last().unwrap();
        a.push(0.5 * (an + b));
        c.push(0.5 * (an - b));
        b = (an * b).sqrt();
    }
    let steps = a.len() - 1;
    let mut phi = 2f64.powi(steps as i32) * a[steps] * u;
    for n in (1..=steps).rev() {
        phi = 0.5 * (phi + (c[n] / a[n] * phi.sin()).asin());
    }
    let (sn, cn) = (phi.sin(), phi.cos());
    // dn >= sqrt(1 - m) > 0, so the square root is well conditioned
    Ok((sn, cn, (1.0 - m * sn * sn).sqrt()))
}

pub fn jacobi_sn(u: f64, modulus: f64) -> Result<f64> {
    jacobi_elliptic(u, modulus).map(|t| t.0)
}

// ----------------------------------------------------------------- sine-Gordon

/// `V(U) = -sum cos(u_i)`
#[derive(Debug, Clone, Copy)]
pub struct CosinePotential {
    pub n: usize,
}

impl Potential for CosinePotential {
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, q: &[f64]) -> f64 {
        -q.iter().map(|x| x.cos()).sum::<f64>()
    }
    fn gradient(&self, q: &[f64]) -> Vec<f64> {
        q.iter().map(|x| x.sin()).collect()
    }
}

/// Periodic second-difference matrix on `[-1, 1]` with `N` nodes.
pub fn periodic_laplacian(n: usize) -> Matrix {
    let dx = 2.0 / n as f64;
    let c = 1.0 / (dx * dx);
    Matrix::from_fn(n, n, |i, j| {
        let d = (i + n - j) % n;
        if d == 0 {
            2.0 * c
        } else if d == 1 || d == n - 1 {
            -c
        } else {
            0.0
        }
    })
}

pub fn sine_gordon(n: usize) -> Result<ProblemInstance> {
    sine_gordon_with(n, 100.0)
}

fn sine_gordon_with(n: usize, shift: f64) -> Result<ProblemInstance> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!("N = {n} must be even and at least 4")));
    }
    let prob = OsdeProblem::new(periodic_laplacian(n), 1.0, Arc::new(CosinePotential { n }), shift, n as f64)?;
    let root = (n as f64).sqrt();
    let p0 = (1..=n)
        .map(|i| root * (0.01 + (2.0 * PI * i as f64 / n as f64).sin()))
        .collect();
    Ok(ProblemInstance {
        tag: "sine-gordon",
        param: ("N", n as f64),
        system: System::Osde {
            prob,
            q0: vec![PI; n],
            p0,
        },
        exact: None,
    })
}

// ------------------------------------------------------------------------- CPD

pub const CPD_X0: Vec3 = [0.7, 1.0, 0.1];
pub const CPD_V0: Vec3 = [0.9, 0.5, 0.4];

/// `U = 1/(100 rho)`, `rho = sqrt(x1^2 + x2^2)`, with either `B = (0, 0, 1/eps)`
/// or `B = (0, 0, rho/eps)`.
#[derive(Debug, Clone, Copy)]
pub struct AxialField {
    pub eps: f64,
    pub radial_b: bool,
}

impl CpdFields for AxialField {
    fn magnetic(&self, x: &Vec3) -> Vec3 {
        let bz = if self.radial_b { x[0].hypot(x[1]) } else { 1.0 };
        [0.0, 0.0, bz / self.eps]
    }
    fn potential(&self, x: &Vec3) -> f64 {
        1.0 / (100.0 * x[0].hypot(x[1]))
    }
    fn electric(&self, x: &Vec3) -> Vec3 {
        let rho2 = x[0] * x[0] + x[1] * x[1];
        let d = 100.0 * rho2 * rho2.sqrt();
        [x[0] / d, x[1] / d, 0.0]
    }
}

fn cpd(eps: f64, radial_b: bool, tag: &'static str) -> Result<ProblemInstance> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
    }
    let prob = CpdProblem::new(Arc::new(AxialField { eps, radial_b }), 1.0, 0.0)?;
    Ok(ProblemInstance {
        tag,
        param: ("eps", eps),
        system: System::Cpd {
            prob,
            x0: CPD_X0,
            v0: CPD_V0,
        },
        exact: None,
    })
}

pub fn cpd_constant(eps: f64) -> Result<ProblemInstance> {
    cpd(eps, false, "cpd-constant")
}

pub fn cpd_general(eps: f64) -> Result<ProblemInstance> {
    cpd(eps, true, "cpd-general")
}

/// Largest relative deviation between `grad` and central differences of `f`
/// at `x`.
pub fn gradient_check(f: impl Fn(&[f64]) -> f64, grad: &[f64], x: &[f64], step: f64) -> f64 {
    let scale = grad.iter().fold(1.0f64, |m, g| m.max(g.abs()));
    let mut y = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        y[i] = x[i] + step;
        let fp = f(&y);
        y[i] = x[i] - step;
        let fm = f(&y);
        y[i] = x[i];
        let fd = (fp - fm) / (2.0 * step);
        worst = worst.max((fd - grad[i]).abs() / scale);
    }
    worst
}
