//! E2-SAV: the linearly implicit exponential SAV integrator for oscillatory
//! second-order systems `q'' + A q / eps^2 = F(q)` with `F = -grad V`.
//!
//! The potential is replaced by the auxiliary scalar `s = sqrt(V(q) + C0)`.
//! One step costs one force and one potential evaluation, a handful of
//! mat-vecs against the precomputed [`OscillatorKernel`], and a rank-1 solve.
//! The discrete modified energy
//! `1/2 p^T p + 1/(2 eps^2) q^T A q + s^2 - C0` is conserved up to rounding,
//! whatever midpoint predictor is used.
//!
//! The same construction for a general constant linear part `R = J M`
//! (used by the Henon-Heiles model) lives in [`GeneralSavSystem`].

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{
    axpy, dense_exp, dense_phi, dot, rank1_solve, scalar, sub, EvenFunction, Matrix,
};

/// A smooth scalar potential together with its gradient.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, q: &[f64]) -> f64;
    fn gradient(&self, q: &[f64]) -> Vec<f64>;
}

/// Potential identically equal to a constant.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPotential {
    pub dim: usize,
    pub value: f64,
}

impl Potential for ConstantPotential {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _q: &[f64]) -> f64 {
        self.value
    }
    fn gradient(&self, _q: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }
}

/// How the midpoint `q~^{n+1/2}` is predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Predictor {
    /// First block of `(I + exp(hR)) z^n / 2`.
    #[default]
    Linear,
    /// Adds the `(h/2) phi(hR) J g(z^n, s^n)` correction.
    Corrected,
}

impl std::str::FromStr for Predictor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Predictor::Linear),
            "corrected" => Ok(Predictor::Corrected),
            _ => Err(Error::InvalidArgument(format!(
                "unknown predictor '{s}' (expected linear or corrected)"
            ))),
        }
    }
}

#[derive(Clone)]
pub struct OsdeProblem {
    /// Symmetric positive semi-definite stiffness `A`.
    pub stiffness: Matrix,
    pub eps: f64,
    pub potential: Arc<dyn Potential>,
    /// `C0`
    pub shift: f64,
    /// `c0` with `V >= -c0` on the region of interest.
    pub lower_bound: f64,
}

impl fmt::Debug for OsdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OsdeProblem")
            .field("dim", &self.dim())
            .field("eps", &self.eps)
            .field("shift", &self.shift)
            .field("lower_bound", &self.lower_bound)
            .finish_non_exhaustive()
    }
}

impl OsdeProblem {
    pub fn new(
        stiffness: Matrix,
        eps: f64,
        potential: Arc<dyn Potential>,
        shift: f64,
        lower_bound: f64,
    ) -> Result<Self> {
        if !stiffness.is_square() || stiffness.rows() != potential.dim() {
            return Err(Error::dim(format!(
                "stiffness is {}x{} but the potential has dimension {}",
                stiffness.rows(),
                stiffness.cols(),
                potential.dim()
            )));
        }
        let asym = stiffness.asymmetry();
        if asym > 1e-12 {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::InvalidArgument(format!("eps = {eps} must lie in (0, 1]")));
        }
        if shift <= lower_bound {
            return Err(Error::InvalidShift {
                radicand: shift - lower_bound,
            });
        }
        Ok(Self {
            stiffness,
            eps,
            potential,
            shift,
            lower_bound,
        })
    }

    pub fn dim(&self) -> usize {
        self.stiffness.rows()
    }

    /// `F(q) = -grad V(q)`
    pub fn force(&self, q: &[f64]) -> Vec<f64> {
        let mut g = self.potential.gradient(q);
        g.iter_mut().for_each(|x| *x = -*x);
        g
    }

    /// `sqrt(V(q) + C0)`, or an error when the radicand is not positive.
    fn shifted_root(&self, q: &[f64]) -> Result<f64> {
        let radicand = self.potential.value(q) + self.shift;
        if radicand > 0.0 && radicand.is_finite() {
            Ok(radicand.sqrt())
        } else {
            Err(Error::InvalidShift { radicand })
        }
    }

    fn quadratic_energy(&self, q: &[f64], p: &[f64]) -> f64 {
        let aq = self.stiffness.matvec(q);
        0.5 * dot(p, p) + 0.5 / (self.eps * self.eps) * dot(q, &aq)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OsdeState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub s: f64,
    pub t: f64,
}

/// Initial augmented state with `s = sqrt(V(q0) + C0)`.
pub fn lift_state(q0: &[f64], p0: &[f64], prob: &OsdeProblem) -> Result<OsdeState> {
    if q0.len() != prob.dim() || p0.len() != prob.dim() {
        return Err(Error::dim("initial data does not match the problem dimension"));
    }
    if q0.iter().chain(p0).any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite initial data".into()));
    }
    Ok(OsdeState {
        q: q0.to_vec(),
        p: p0.to_vec(),
        s: prob.shifted_root(q0)?,
        t: 0.0,
    })
}

/// Blocks of `exp(hR)` and `phi(hR)` for `R = [[0, I], [-A/eps^2, 0]]`.
///
/// `exp(hR) = [[cos, h sinc], [-omega_sin, cos]]` and
/// `phi(hR) = [[sinc, h g1], [g2m / h, sinc]]`. The `(2,1)` block of `phi`
/// only ever multiplies the zero upper half of `J g`, so it is not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorKernel {
    pub h: f64,
    pub cos: Matrix,
    pub sinc: Matrix,
    pub g1: Matrix,
    pub g2m: Matrix,
    /// `Omega sin(h Omega) = h Omega^2 sinc(h Omega)`
    pub omega_sin: Matrix,
    /// Orthonormal basis of `ker A`, where every kernel function is constant.
    null_space: Vec<Vec<f64>>,
}

impl OscillatorKernel {
    pub fn new(prob: &OsdeProblem, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size {h} must be positive")));
        }
        let d = crate::linalg::psd_decomposition(&prob.stiffness)?;
        let eps = prob.eps;
        let z = |l: f64| h * l.sqrt() / eps;
        let top = d.eigenvalues.last().copied().unwrap_or(0.0).max(1.0);
        let null_space = (0..d.eigenvalues.len())
            .filter(|&k| d.eigenvalues[k] <= 1e-12 * top)
            .map(|k| (0..d.eigenvalues.len()).map(|i| d.basis[(i, k)]).collect())
            .collect();
        Ok(Self {
            h,
            cos: d.apply(|l| EvenFunction::Cos.eval(z(l))),
            sinc: d.apply(|l| EvenFunction::Sinc.eval(z(l))),
            g1: d.apply(|l| EvenFunction::G1.eval(z(l))),
            g2m: d.apply(|l| EvenFunction::G2m.eval(z(l))),
            omega_sin: d.apply(|l| h * l / (eps * eps) * scalar::sinc(z(l))),
            null_space,
        })
    }

    /// `m q` for a kernel function `m` equal to `f0` on `ker A`. The `ker A`
    /// part of `q` is split off first: positions drifting along a free mode
    /// would otherwise feed rounding proportional to `|q|` into every step.
    fn apply_q(&self, m: &Matrix, f0: f64, q: &[f64]) -> Vec<f64> {
        if self.null_space.is_empty() {
            return m.matvec(q);
        }
        let mut free = vec![0.0; q.len()];
        for z in &self.null_space {
            axpy(dot(z, q), z, &mut free);
        }
        let range = sub(q, &free);
        let mut out = m.matvec(&range);
        axpy(f0, &free, &mut out);
        out
    }

    pub fn dim(&self) -> usize {
        self.cos.rows()
    }

    fn check(&self, prob: &OsdeProblem) -> Result<()> {
        if self.dim() != prob.dim() {
            return Err(Error::dim("kernel and problem dimensions differ"));
        }
        Ok(())
    }
}

/// Same as [`OscillatorKernel::new`].
pub fn build_kernel(prob: &OsdeProblem, h: f64) -> Result<OscillatorKernel> {
    OscillatorKernel::new(prob, h)
}

/// Midpoint predictor used to freeze the nonlinearity over a step.
pub fn predict_midpoint(
    state: &OsdeState,
    kernel: &OscillatorKernel,
    mode: Predictor,
    prob: &OsdeProblem,
) -> Result<Vec<f64>> {
    kernel.check(prob)?;
    let h = kernel.h;
    let mut mid = kernel.apply_q(&kernel.cos, 1.0, &state.q);
    kernel.sinc.matvec_acc(h, &state.p, &mut mid);
    axpy(1.0, &state.q, &mut mid);
    mid.iter_mut().for_each(|x| *x *= 0.5);
    if mode == Predictor::Corrected {
        let root = prob.shifted_root(&state.q)?;
        let f = prob.force(&state.q);
        kernel.g1.matvec_acc(0.5 * h * h * state.s / root, &f, &mut mid);
    }
    Ok(mid)
}

/// One E2-SAV step with the linear predictor.
pub fn e2sav_step(state: &OsdeState, prob: &OsdeProblem, kernel: &OscillatorKernel) -> Result<OsdeState> {
    e2sav_step_with(state, prob, kernel, Predictor::Linear)
}

pub fn e2sav_step_with(
    state: &OsdeState,
    prob: &OsdeProblem,
    kernel: &OscillatorKernel,
    mode: Predictor,
) -> Result<OsdeState> {
    let mid = predict_midpoint(state, kernel, mode, prob)?;
    e2sav_step_from_midpoint(state, prob, kernel, &mid)
}

/// E2-SAV step with a caller-supplied midpoint approximation.
///
/// The modified energy identity holds for any `mid`; only accuracy depends
/// on it.
pub fn e2sav_step_from_midpoint(
    state: &OsdeState,
    prob: &OsdeProblem,
    kernel: &OscillatorKernel,
    mid: &[f64],
) -> Result<OsdeState> {
    kernel.check(prob)?;
    let h = kernel.h;
    let force = prob.force(mid);
    let root = prob.shifted_root(mid)?;
    let radicand = root * root;

    // gamma = h^2 g1 F / (4 (V + C0))
    let g1f = kernel.g1.matvec(&force);
    let gamma: Vec<f64> = g1f.iter().map(|x| h * h * x / (4.0 * radicand)).collect();

    // l = cos q + h sinc p + h^2 g1 F s / root + gamma (F^T q)
    let mut l = kernel.apply_q(&kernel.cos, 1.0, &state.q);
    kernel.sinc.matvec_acc(h, &state.p, &mut l);
    axpy(h * h * state.s / root, &g1f, &mut l);
    axpy(dot(&force, &state.q), &gamma, &mut l);

    let q_next = rank1_solve(&gamma, &force, &l)?;
    let dq = sub(&q_next, &state.q);
    let s_next = state.s - dot(&dq, &force) / (2.0 * root);
    let s_mid = 0.5 * (state.s + s_next);

    let mut p_next = kernel.cos.matvec(&state.p);
    axpy(-1.0, &kernel.apply_q(&kernel.omega_sin, 0.0, &state.q), &mut p_next);
    kernel.sinc.matvec_acc(h * s_mid / root, &force, &mut p_next);

    Ok(OsdeState {
        q: q_next,
        p: p_next,
        s: s_next,
        t: state.t + h,
    })
}

/// `1/2 p^T p + 1/(2 eps^2) q^T A q + s^2 - C0`
pub fn modified_energy(state: &OsdeState, prob: &OsdeProblem) -> f64 {
    prob.quadratic_energy(&state.q, &state.p) + state.s * state.s - prob.shift
}

/// `1/2 p^T p + 1/(2 eps^2) q^T A q + V(q)`
pub fn original_energy(q: &[f64], p: &[f64], prob: &OsdeProblem) -> f64 {
    prob.quadratic_energy(q, p) + prob.potential.value(q)
}

/// First-order system `u' = J M u + J grad V(u)` treated with the same SAV
/// exponential construction; `R = J M` need not have OSDE block structure.
#[derive(Clone)]
pub struct GeneralSavSystem {
    /// Skew-symmetric structure matrix `J`.
    pub structure: Matrix,
    /// Symmetric matrix `M` of the quadratic energy `1/2 u^T M u`.
    pub quadratic: Matrix,
    pub potential: Arc<dyn Potential>,
    pub shift: f64,
}

impl fmt::Debug for GeneralSavSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralSavSystem")
            .field("dim", &self.dim())
            .field("shift", &self.shift)
            .finish_non_exhaustive()
    }
}

impl GeneralSavSystem {
    pub fn new(
        structure: Matrix,
        quadratic: Matrix,
        potential: Arc<dyn Potential>,
        shift: f64,
    ) -> Result<Self> {
        let n = potential.dim();
        if structure.rows() != n || !structure.is_square() || quadratic.rows() != n || !quadratic.is_square() {
            return Err(Error::dim("structure/quadratic matrices do not match the potential"));
        }
        let skew = structure.add(&structure.transpose()).max_abs();
        if skew > 1e-12 * structure.max_abs().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "structure matrix is not skew-symmetric (defect {skew:e})"
            )));
        }
        let asym = quadratic.asymmetry();
        if asym > 1e-12 {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(Self {
            structure,
            quadratic,
            potential,
            shift,
        })
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    /// `R = J M`
    pub fn linear_part(&self) -> Matrix {
        self.structure.matmul(&self.quadratic)
    }

    /// `g(u, s) = grad V(u) s / sqrt(V(u) + C0)`
    pub fn sav_nonlinearity(&self, u: &[f64], s: f64) -> Result<Vec<f64>> {
        let root = self.shifted_root(u)?;
        let mut g = self.potential.gradient(u);
        g.iter_mut().for_each(|x| *x *= s / root);
        Ok(g)
    }

    fn shifted_root(&self, u: &[f64]) -> Result<f64> {
        let radicand = self.potential.value(u) + self.shift;
        if radicand > 0.0 && radicand.is_finite() {
            Ok(radicand.sqrt())
        } else {
            Err(Error::InvalidShift { radicand })
        }
    }

    /// `R u + J grad V(u)`
    pub fn vector_field(&self, u: &[f64]) -> Vec<f64> {
        let mut out = self.linear_part().matvec(u);
        self.structure.matvec_acc(1.0, &self.potential.gradient(u), &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralState {
    pub u: Vec<f64>,
    pub s: f64,
    pub t: f64,
}

pub fn lift_general(u0: &[f64], sys: &GeneralSavSystem) -> Result<GeneralState> {
    if u0.len() != sys.dim() {
        return Err(Error::dim("initial data does not match the system dimension"));
    }
    Ok(GeneralState {
        u: u0.to_vec(),
        s: sys.shifted_root(u0)?,
        t: 0.0,
    })
}

/// `exp(hR)` and `h phi(hR) J`, computed once per `(system, h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralKernel {
    pub h: f64,
    pub exp: Matrix,
    pub phi_j: Matrix,
}

impl GeneralKernel {
    pub fn new(sys: &GeneralSavSystem, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size {h} must be positive")));
        }
        let hr = sys.linear_part().scale(h);
        Ok(Self {
            h,
            exp: dense_exp(&hr)?,
            phi_j: dense_phi(&hr)?.matmul(&sys.structure).scale(h),
        })
    }
}

pub fn predict_midpoint_general(
    state: &GeneralState,
    sys: &GeneralSavSystem,
    kernel: &GeneralKernel,
    mode: Predictor,
) -> Result<Vec<f64>> {
    let mut mid = kernel.exp.matvec(&state.u);
    axpy(1.0, &state.u, &mut mid);
    mid.iter_mut().for_each(|x| *x *= 0.5);
    if mode == Predictor::Corrected {
        let g = sys.sav_nonlinearity(&state.u, state.s)?;
        kernel.phi_j.matvec_acc(0.5, &g, &mut mid);
    }
    Ok(mid)
}

/// One E2-SAV step for a general system; the default predictor here is
/// [`Predictor::Corrected`].
pub fn e2sav_step_general(
    state: &GeneralState,
    sys: &GeneralSavSystem,
    kernel: &GeneralKernel,
    mode: Predictor,
) -> Result<GeneralState> {
    let mid = predict_midpoint_general(state, sys, kernel, mode)?;
    e2sav_step_general_from_midpoint(state, sys, kernel, &mid)
}

pub fn e2sav_step_general_from_midpoint(
    state: &GeneralState,
    sys: &GeneralSavSystem,
    kernel: &GeneralKernel,
    mid: &[f64],
) -> Result<GeneralState> {
    let root = sys.shifted_root(mid)?;
    let a: Vec<f64> = sys.potential.gradient(mid).iter().map(|x| x / root).collect();
    // u+ = E u + w s_mid, s_mid = s + a^T (u+ - u) / 4, w = h phi(hR) J a
    let w = kernel.phi_j.matvec(&a);
    let gamma: Vec<f64> = w.iter().map(|x| -0.25 * x).collect();
    let mut l = kernel.exp.matvec(&state.u);
    axpy(state.s - 0.25 * dot(&a, &state.u), &w, &mut l);
    let u_next = rank1_solve(&gamma, &a, &l)?;
    let s_next = state.s + 0.5 * dot(&a, &sub(&u_next, &state.u));
    Ok(GeneralState {
        u: u_next,
        s: s_next,
        t: state.t + kernel.h,
    })
}

/// `1/2 u^T M u + s^2 - C0`
pub fn modified_energy_general(state: &GeneralState, sys: &GeneralSavSystem) -> f64 {
    0.5 * dot(&state.u, &sys.quadratic.matvec(&state.u)) + state.s * state.s - sys.shift
}

/// `1/2 u^T M u + V(u)`
pub fn original_energy_general(u: &[f64], sys: &GeneralSavSystem) -> f64 {
    0.5 * dot(u, &sys.quadratic.matvec(u)) + sys.potential.value(u)
}
