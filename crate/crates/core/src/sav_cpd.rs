//! Splitting SAV schemes for charged-particle dynamics
//! `x'' = x' x B(x) + E(x)`, `E = -grad U`.
//!
//! The augmented system in `(x, v, r)` with `r = sqrt(U(x) + C0)` is split
//! into the magnetic rotation `v' = hat(B(x)) v`, solved exactly, and the
//! electric part, advanced by a linearly implicit SAV propagator written in
//! closed form. Both pieces conserve `1/2 |v|^2 + r^2 - C0`, hence so does
//! every composition built from them.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{dot3, mat3_vec, rodrigues_rotate, Mat3, Vec3};

/// Electromagnetic data of a charged-particle problem.
pub trait CpdFields: Send + Sync {
    fn magnetic(&self, x: &Vec3) -> Vec3;
    fn potential(&self, x: &Vec3) -> f64;
    /// `-grad U(x)`
    fn electric(&self, x: &Vec3) -> Vec3;
}

#[derive(Clone)]
pub struct CpdProblem {
    pub fields: Arc<dyn CpdFields>,
    /// `C0`
    pub shift: f64,
    /// `c0` with `U >= -c0`.
    pub lower_bound: f64,
}

impl fmt::Debug for CpdProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CpdProblem")
            .field("shift", &self.shift)
            .field("lower_bound", &self.lower_bound)
            .finish_non_exhaustive()
    }
}

impl CpdProblem {
    pub fn new(fields: Arc<dyn CpdFields>, shift: f64, lower_bound: f64) -> Result<Self> {
        if shift <= lower_bound {
            return Err(Error::InvalidShift {
                radicand: shift - lower_bound,
            });
        }
        Ok(Self {
            fields,
            shift,
            lower_bound,
        })
    }

    fn radicand(&self, x: &Vec3) -> f64 {
        self.fields.potential(x) + self.shift
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpdState {
    pub x: Vec3,
    pub v: Vec3,
    pub r: f64,
    pub t: f64,
}

pub fn lift_cpd(x0: Vec3, v0: Vec3, prob: &CpdProblem) -> Result<CpdState> {
    let radicand = prob.radicand(&x0);
    if !(radicand > 0.0 && radicand.is_finite()) {
        return Err(Error::InvalidShift { radicand });
    }
    Ok(CpdState {
        x: x0,
        v: v0,
        r: radicand.sqrt(),
        t: 0.0,
    })
}

/// Exact flow of `v' = hat(B(x)) v` over time `t`; `x`, `r` and the clock are
/// untouched.
pub fn phi_l(state: &CpdState, prob: &CpdProblem, t: f64) -> CpdState {
    let b = prob.fields.magnetic(&state.x);
    CpdState {
        v: rodrigues_rotate(&b, t, &state.v),
        ..*state
    }
}

/// Closed-form coefficients of the electric SAV propagator for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiNLCoefficients {
    /// `I - h^2/(8a) e e^T`
    pub a_mat: Mat3,
    /// `I - h^2/4 e e^T A`
    pub b_mat: Mat3,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// `E(x^) / sqrt(U(x^) + C0)`
    pub scaled_e: Vec3,
    // deviations from the identity, kept unrounded: for weak fields
    // `1 + delta` drops most bits of `delta` and biases every step
    a_dev: Mat3,
    b_mat_dev: Mat3,
    b_dev: f64,
}

impl PhiNLCoefficients {
    pub fn new(scaled_e: Vec3, h: f64) -> Self {
        let e = scaled_e;
        let h2 = h * h;
        let a = 1.0 + h2 / 8.0 * dot3(&e, &e);
        let k = h2 / (8.0 * a);
        let mut a_dev = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in i..3 {
                a_dev[i][j] = -k * (e[i] * e[j]);
                a_dev[j][i] = a_dev[i][j];
            }
        }
        let ae = mat3_vec(&a_dev, &e);
        let ae = [e[0] + ae[0], e[1] + ae[1], e[2] + ae[2]];
        let b_dev = -h2 / 4.0 * dot3(&e, &ae);
        // e^T A is the transpose of A e (A symmetric)
        let mut b_mat_dev = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                b_mat_dev[i][j] = -h2 / 4.0 * e[i] * ae[j];
            }
        }
        let plus_identity = |m: &Mat3| {
            let mut out = *m;
            for (i, row) in out.iter_mut().enumerate() {
                row[i] += 1.0;
            }
            out
        };
        Self {
            a_mat: plus_identity(&a_dev),
            b_mat: plus_identity(&b_mat_dev),
            a,
            b: 1.0 + b_dev,
            c: 1.0 + 0.5 * b_dev,
            scaled_e,
            a_dev,
            b_mat_dev,
            b_dev,
        }
    }

    /// Applies the propagator to `(x, v, r)`.
    pub fn apply(&self, x: &Vec3, v: &Vec3, r: f64, h: f64) -> (Vec3, Vec3, f64) {
        let e = &self.scaled_e;
        let drive = [
            h * v[0] + 0.5 * h * h * e[0] * r,
            h * v[1] + 0.5 * h * h * e[1] * r,
            h * v[2] + 0.5 * h * h * e[2] * r,
        ];
        let ad = mat3_vec(&self.a_dev, &drive);
        let bv = mat3_vec(&self.b_mat_dev, v);
        let av = mat3_vec(&self.a_dev, v);
        let av = [v[0] + av[0], v[1] + av[1], v[2] + av[2]];
        let x_next = [
            x[0] + (drive[0] + ad[0]),
            x[1] + (drive[1] + ad[1]),
            x[2] + (drive[2] + ad[2]),
        ];
        let v_next = [
            v[0] + (bv[0] + self.c * h * e[0] * r),
            v[1] + (bv[1] + self.c * h * e[1] * r),
            v[2] + (bv[2] + self.c * h * e[2] * r),
        ];
        let r_next = r + (self.b_dev * r - 0.5 * h * dot3(e, &av));
        (x_next, v_next, r_next)
    }
}

/// Linearly implicit SAV propagator for `x' = v, v' = E(x) r / sqrt(U + C0)`,
/// with the nonlinearity frozen at `x^ = x + (h/2) v`. Advances the clock by
/// `h`; negative `h` is allowed.
pub fn phi_nl(state: &CpdState, prob: &CpdProblem, h: f64) -> Result<CpdState> {
    let xh = [
        state.x[0] + 0.5 * h * state.v[0],
        state.x[1] + 0.5 * h * state.v[1],
        state.x[2] + 0.5 * h * state.v[2],
    ];
    let radicand = prob.radicand(&xh);
    if !(radicand > 0.0 && radicand.is_finite()) {
        return Err(Error::SingularPotential {
            t: state.t,
            x: xh,
            radicand,
        });
    }
    let root = radicand.sqrt();
    let ef = prob.fields.electric(&xh);
    let coeffs = PhiNLCoefficients::new([ef[0] / root, ef[1] / root, ef[2] / root], h);
    let (x, v, r) = coeffs.apply(&state.x, &state.v, state.r, h);
    Ok(CpdState {
        x,
        v,
        r,
        t: state.t + h,
    })
}

/// `|| phi_nl(-h) o phi_nl(h) (y) - y ||` in `(x, v, r)`; vanishes up to
/// rounding when the propagator is self-adjoint.
pub fn phi_nl_symmetry_defect(state: &CpdState, prob: &CpdProblem, h: f64) -> Result<f64> {
    let back = phi_nl(&phi_nl(state, prob, h)?, prob, -h)?;
    let mut acc = (back.r - state.r).powi(2);
    for i in 0..3 {
        acc += (back.x[i] - state.x[i]).powi(2) + (back.v[i] - state.v[i]).powi(2);
    }
    Ok(acc.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subflow {
    /// Magnetic rotation, exact.
    L,
    /// Electric SAV propagator.
    NL,
}

/// Composition recipe: stages applied in order, each a subflow run for
/// `fraction * h`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitScheme {
    pub stages: Vec<(Subflow, f64)>,
    pub order: u32,
}

/// Triple-jump fractions raising a symmetric method of order `p` to `p + 2`.
pub fn triple_jump(p: u32) -> [f64; 3] {
    let root = 2f64.powf(1.0 / (p as f64 + 1.0));
    let outer = 1.0 / (2.0 - root);
    [outer, -root / (2.0 - root), outer]
}

impl SplitScheme {
    /// `phi_NL(h) o phi_L(h)`
    pub fn s1() -> Self {
        Self {
            stages: vec![(Subflow::L, 1.0), (Subflow::NL, 1.0)],
            order: 1,
        }
    }

    /// Strang: `phi_L(h/2) o phi_NL(h) o phi_L(h/2)`
    pub fn s2() -> Self {
        Self {
            stages: vec![(Subflow::L, 0.5), (Subflow::NL, 1.0), (Subflow::L, 0.5)],
            order: 2,
        }
    }

    pub fn s4() -> Self {
        Self::s2().triple_jumped()
    }

    pub fn s6() -> Self {
        Self::s4().triple_jumped()
    }

    pub fn of_order(order: u32) -> Result<Self> {
        match order {
            1 => Ok(Self::s1()),
            2 => Ok(Self::s2()),
            4 => Ok(Self::s4()),
            6 => Ok(Self::s6()),
            _ => Err(Error::InvalidArgument(format!(
                "no splitting scheme of order {order} (expected 1, 2, 4 or 6)"
            ))),
        }
    }

    fn triple_jumped(&self) -> Self {
        let taus = triple_jump(self.order);
        // the rightmost factor acts first
        let stages = taus
            .iter()
            .rev()
            .flat_map(|&tau| self.stages.iter().map(move |&(s, f)| (s, f * tau)))
            .collect();
        Self {
            stages,
            order: self.order + 2,
        }
    }

    /// Merges consecutive magnetic stages, which commute exactly since the
    /// rotation leaves `x` fixed.
    pub fn fused(&self) -> Self {
        let mut stages: Vec<(Subflow, f64)> = Vec::with_capacity(self.stages.len());
        for &(s, f) in &self.stages {
            match stages.last_mut() {
                Some((Subflow::L, g)) if s == Subflow::L => *g += f,
                _ => stages.push((s, f)),
            }
        }
        Self {
            stages,
            order: self.order,
        }
    }

    pub fn fraction_sum(&self, which: Subflow) -> f64 {
        self.stages
            .iter()
            .filter(|(s, _)| *s == which)
            .map(|(_, f)| f)
            .sum()
    }

    pub fn nl_stages(&self) -> usize {
        self.stages.iter().filter(|(s, _)| *s == Subflow::NL).count()
    }

    pub fn validate(&self) -> Result<()> {
        for which in [Subflow::L, Subflow::NL] {
            let sum = self.fraction_sum(which);
            if (sum - 1.0).abs() > 1e-14 {
                return Err(Error::InvalidArgument(format!(
                    "{which:?} fractions sum to {sum}, not 1"
                )));
            }
        }
        Ok(())
    }
}

/// One full step of `scheme`; the clock advances by exactly `h`.
pub fn compose_step(state: &CpdState, prob: &CpdProblem, scheme: &SplitScheme, h: f64) -> Result<CpdState> {
    let mut cur = *state;
    for (index, &(sub, frac)) in scheme.stages.iter().enumerate() {
        cur = apply_stage(&cur, prob, sub, frac * h).map_err(|e| Error::Stage {
            index,
            source: Box::new(e),
        })?;
    }
    cur.t = state.t + h;
    Ok(cur)
}

fn apply_stage(state: &CpdState, prob: &CpdProblem, sub: Subflow, dt: f64) -> Result<CpdState> {
    match sub {
        Subflow::L => Ok(phi_l(state, prob, dt)),
        Subflow::NL => phi_nl(state, prob, dt),
    }
}

/// Runs `steps` steps of `scheme` and reports the state after each step.
///
/// With `fuse`, the trailing magnetic stage of one step is merged with the
/// leading magnetic stage of the next; reported states then sit between the
/// two halves (the final state is always completed).
pub fn split_trajectory(
    state: &CpdState,
    prob: &CpdProblem,
    scheme: &SplitScheme,
    h: f64,
    steps: usize,
    fuse: bool,
    mut observe: impl FnMut(&CpdState),
) -> Result<CpdState> {
    if !fuse {
        let mut cur = *state;
        for n in 0..steps {
            let t_next = state.t + (n + 1) as f64 * h;
            cur = compose_step(&cur, prob, scheme, h)?;
            cur.t = t_next;
            observe(&cur);
        }
        return Ok(cur);
    }
    let stages = scheme.fused().stages;
    let trailing = match stages.last() {
        Some(&(Subflow::L, f)) if stages.len() > 1 => f,
        _ => 0.0,
    };
    let body = if trailing != 0.0 {
        &stages[..stages.len() - 1]
    } else {
        &stages[..]
    };
    let mut cur = *state;
    let mut pending = 0.0;
    for n in 0..steps {
        for (index, &(sub, frac)) in body.iter().enumerate() {
            let mut dt = frac * h;
            if index == 0 && sub == Subflow::L {
                dt += pending;
                pending = 0.0;
            } else if index == 0 && pending != 0.0 {
                cur = phi_l(&cur, prob, pending);
                pending = 0.0;
            }
            cur = apply_stage(&cur, prob, sub, dt).map_err(|e| Error::Stage {
                index,
                source: Box::new(e),
            })?;
        }
        pending = trailing * h;
        if n + 1 == steps && pending != 0.0 {
            cur = phi_l(&cur, prob, pending);
        }
        cur.t = state.t + (n + 1) as f64 * h;
        observe(&cur);
    }
    Ok(cur)
}

/// `1/2 |v|^2 + r^2 - C0`
pub fn modified_energy_cpd(state: &CpdState, prob: &CpdProblem) -> f64 {
    0.5 * dot3(&state.v, &state.v) + state.r * state.r - prob.shift
}

/// `1/2 |v|^2 + U(x)`
pub fn original_energy_cpd(x: &Vec3, v: &Vec3, prob: &CpdProblem) -> f64 {
    0.5 * dot3(v, v) + prob.fields.potential(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cross, rodrigues_exp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Constant B, radial potential `U = 1/(100 rho)`.
    struct TestField {
        b: Vec3,
        with_potential: bool,
    }

    impl CpdFields for TestField {
        fn magnetic(&self, _x: &Vec3) -> Vec3 {
            self.b
        }
        fn potential(&self, x: &Vec3) -> f64 {
            if self.with_potential {
                1.0 / (100.0 * x[0].hypot(x[1]))
            } else {
                0.0
            }
        }
        fn electric(&self, x: &Vec3) -> Vec3 {
            if self.with_potential {
                let rho2 = x[0] * x[0] + x[1] * x[1];
                let d = 100.0 * rho2 * rho2.sqrt();
                [x[0] / d, x[1] / d, 0.0]
            } else {
                [0.0; 3]
            }
        }
    }

    fn problem(b: Vec3, with_potential: bool) -> CpdProblem {
        CpdProblem::new(Arc::new(TestField { b, with_potential }), 1.0, 0.0).unwrap()
    }

    const X0: Vec3 = [0.7, 1.0, 0.1];
    const V0: Vec3 = [0.9, 0.5, 0.4];

    fn close(a: &Vec3, b: &Vec3, tol: f64) -> bool {
        (0..3).all(|i| (a[i] - b[i]).abs() <= tol)
    }

    /// Fixed-point solution of the implicit electric propagator.
    fn implicit_phi_nl(st: &CpdState, prob: &CpdProblem, h: f64, xh: Vec3) -> CpdState {
        let root = (prob.fields.potential(&xh) + prob.shift).sqrt();
        let ef = prob.fields.electric(&xh);
        let e = [ef[0] / root, ef[1] / root, ef[2] / root];
        let mut r_next = st.r;
        let (mut x, mut v) = (st.x, st.v);
        for _ in 0..200 {
            let rm = 0.5 * (st.r + r_next);
            for i in 0..3 {
                x[i] = st.x[i] + h * st.v[i] + 0.5 * h * h * e[i] * rm;
                v[i] = st.v[i] + h * e[i] * rm;
            }
            let dx = [x[0] - st.x[0], x[1] - st.x[1], x[2] - st.x[2]];
            let new_r = st.r - 0.5 * dot3(&dx, &e);
            let done = (new_r - r_next).abs() <= 1e-15;
            r_next = new_r;
            if done {
                break;
            }
        }
        CpdState { x, v, r: r_next, t: st.t + h }
    }

    #[test]
    fn lift_problem4_data() {
        let prob = problem([0.0, 0.0, 1.0], true);
        let st = lift_cpd(X0, V0, &prob).unwrap();
        let want = (1.0 + 1.0 / (100.0 * 1.49f64.sqrt())).sqrt();
        assert!((st.r - want).abs() < 1e-15);
        assert!((st.r * st.r - 1.0 - prob.fields.potential(&X0)).abs() < 1e-15);
        let free = problem([0.0; 3], false);
        assert_eq!(lift_cpd(X0, V0, &free).unwrap().r, 1.0);
    }

    #[test]
    fn phi_l_properties() {
        let free = problem([0.0; 3], false);
        let st = lift_cpd(X0, V0, &free).unwrap();
        assert_eq!(phi_l(&st, &free, 0.3), st);

        let eps = 0.1;
        let prob = problem([0.0, 0.0, 1.0 / eps], true);
        let st = lift_cpd(X0, V0, &prob).unwrap();
        let full = phi_l(&st, &prob, 2.0 * std::f64::consts::PI * eps);
        assert!(close(&full.v, &st.v, 1e-12));

        let fwd = phi_l(&st, &prob, 0.37);
        let back = phi_l(&fwd, &prob, -0.37);
        assert!(close(&back.v, &st.v, 1e-12));
        assert_eq!(fwd.x, st.x);
        assert_eq!(fwd.r, st.r);
        assert!((dot3(&fwd.v, &fwd.v) - dot3(&st.v, &st.v)).abs() < 1e-13);
    }

    #[test]
    fn phi_l_matches_rk4_reference() {
        let prob = problem([0.0, 0.0, 1.0], true);
        let st = lift_cpd(X0, V0, &prob).unwrap();
        let got = phi_l(&st, &prob, 0.1);
        // classical RK4 with tiny steps on v' = v x b
        let b = [0.0, 0.0, 1.0];
        let f = |v: &Vec3| cross(v, &b);
        let mut v = st.v;
        let n = 2000;
        let dt = 0.1 / n as f64;
        for _ in 0..n {
            let k1 = f(&v);
            let k2 = f(&[v[0] + 0.5 * dt * k1[0], v[1] + 0.5 * dt * k1[1], v[2] + 0.5 * dt * k1[2]]);
            let k3 = f(&[v[0] + 0.5 * dt * k2[0], v[1] + 0.5 * dt * k2[1], v[2] + 0.5 * dt * k2[2]]);
            let k4 = f(&[v[0] + dt * k3[0], v[1] + dt * k3[1], v[2] + dt * k3[2]]);
            for i in 0..3 {
                v[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        assert!(close(&got.v, &v, 1e-12));
    }

    #[test]
    fn phi_nl_pure_drift_without_field() {
        let free = problem([0.0; 3], false);
        let st = lift_cpd(X0, V0, &free).unwrap();
        let next = phi_nl(&st, &free, 0.25).unwrap();
        let want = [X0[0] + 0.25 * V0[0], X0[1] + 0.25 * V0[1], X0[2] + 0.25 * V0[2]];
        assert!(close(&next.x, &want, 1e-16));
        assert_eq!(next.v, st.v);
        assert_eq!(next.r, st.r);
    }

    #[test]
    fn phi_nl_conserves_modified_energy() {
        let prob = problem([0.0, 0.0, 1.0], true);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let st = CpdState {
                x: [rng.gen_range(0.3..1.5), rng.gen_range(0.3..1.5), rng.gen_range(-1.0..1.0)],
                v: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                r: rng.gen_range(0.9..1.1),
                t: 0.0,
            };
            let h = rng.gen_range(-0.2..0.2);
            let e0 = 0.5 * dot3(&st.v, &st.v) + st.r * st.r;
            let n = phi_nl(&st, &prob, h).unwrap();
            let e1 = 0.5 * dot3(&n.v, &n.v) + n.r * n.r;
            assert!((e1 - e0).abs() <= 1e-13);
        }
    }

    #[test]
    fn phi_nl_matches_implicit_definition() {
        let prob = problem([0.0, 0.0, 1.0], true);
        let st = lift_cpd(X0, V0, &prob).unwrap();
        let h = 0.1;
        let got = phi_nl(&st, &prob, h).unwrap();
        let xh = [X0[0] + 0.05 * V0[0], X0[1] + 0.05 * V0[1], X0[2] + 0.05 * V0[2]];
        let want = implicit_phi_nl(&st, &prob, h, xh);
        assert!(close(&got.x, &want.x, 1e-12));
        assert!(close(&got.v, &want.v, 1e-12));
        assert!((got.r - want.r).abs() <= 1e-12);
    }

    #[test]
    fn phi_nl_is_self_adjoint() {
        let prob = problem([0.0, 0.0, 1.0], true);
        let st = lift_cpd(X0, V0, &prob).unwrap();
        for h in [0.01, 0.1, 0.5] {
            assert!(phi_nl_symmetry_defect(&st, &prob, h).unwrap() < 1e-14);
        }
    }

    #[test]
    fn phi_nl_reports_singularity() {
        let prob = problem([0.0, 0.0, 1.0], true);
        let st = CpdState { x: [0.05, 0.0, 0.0], v: [-1.0, 0.0, 0.0], r: 1.0, t: 2.5 };
        match phi_nl(&st, &prob, 0.1) {
            Err(Error::SingularPotential { t, x, .. }) => {
                assert_eq!(t, 2.5);
                assert!(x[0].abs() < 1e-15);
            }
            other => panic!("expected singular potential, got {other:?}"),
        }
    }

    #[test]
    fn coefficient_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let e = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let h = rng.gen_range(0.0..1.0);
            let c = PhiNLCoefficients::new(e, h);
            assert!(c.a >= 1.0);
            // b = (1 - z)/(1 + z) with z = h^2 |e|^2 / 8
            let z = h * h * dot3(&e, &e) / 8.0;
            assert!((c.b - (1.0 - z) / (1.0 + z)).abs() < 1e-13);
            assert!(c.b > -1.0 && c.b <= 1.0);
            assert!((c.c - 0.5 * (c.b + 1.0)).abs() <= f64::EPSILON);
            // A e = e / a, so the smallest eigenvalue of A is 1/a > 0
            let ae = mat3_vec(&c.a_mat, &e);
            for i in 0..3 {
                assert!((ae[i] - e[i] / c.a).abs() <= 1e-13 * (1.0 + e[i].abs()));
                for j in 0..3 {
                    assert_eq!(c.a_mat[i][j], c.a_mat[j][i]);
                }
            }
            // b = 1 - h^2/4 e^T A e = 1 - (h^2/4)|e|^2 / a
            let e2 = dot3(&e, &e);
            assert!((c.b - (1.0 - h * h / 4.0 * e2 / c.a)).abs() < 1e-13);
        }
    }

    #[test]
    fn fraction_identities() {
        let t = triple_jump(2);
        assert!((t.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
        assert!(t.iter().map(|x| x.powi(3)).sum::<f64>().abs() <= 1e-14);
        assert!((t[0] - 1.35120719195966).abs() < 1e-12);
        assert!((t[1] + 1.70241438391932).abs() < 1e-12);
        let th = triple_jump(4);
        assert!((th.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
        assert!(th.iter().map(|x| x.powi(5)).sum::<f64>().abs() <= 1e-14);
        for s in [SplitScheme::s1(), SplitScheme::s2(), SplitScheme::s4(), SplitScheme::s6()] {
            s.validate().unwrap();
            s.fused().validate().unwrap();
        }
        assert_eq!(SplitScheme::s4().nl_stages(), 3);
        assert_eq!(SplitScheme::s6().nl_stages(), 9);
        assert_eq!(SplitScheme::s6().fused().stages.len(), 19);
        assert!(SplitScheme::of_order(3).is_err());
    }

    #[test]
    fn s1_rotates_and_drifts_in_pure_magnetic_field() {
        let prob = problem([0.0, 0.0, 2.0], false);
        let st = lift_cpd(X0, V0, &prob).unwrap();
        let h = 0.1;
        let next = compose_step(&st, &prob, &SplitScheme::s1(), h).unwrap();
        let rotated = phi_l(&st, &prob, h).v;
        let want = [X0[0] + h * rotated[0], X0[1] + h * rotated[1], X0[2] + h * rotated[2]];
        assert!(close(&next.x, &want, 1e-15));
        assert!((dot3(&next.v, &next.v) - dot3(&V0, &V0)).abs() < 1e-14);
        assert_eq!(next.t, h);
    }

    #[test]
    fn s1_matches_explicit_closed_form() {
        let prob = problem([0.0, 0.0, 1.0], true);
        let st = lift_cpd(X0, V0, &prob).unwrap();
        let h = 0.1;
        let got = compose_step(&st, &prob, &SplitScheme::s1(), h).unwrap();

        let rot = rodrigues_exp(&prob.fields.magnetic(&st.x), h);
        let w = mat3_vec(&rot, &st.v);
        let xt = [st.x[0] + 0.5 * h * w[0], st.x[1] + 0.5 * h * w[1], st.x[2] + 0.5 * h * w[2]];
        let root = (prob.fields.potential(&xt) + 1.0).sqrt();
        let ef = prob.fields.electric(&xt);
        let e = [ef[0] / root, ef[1] / root, ef[2] / root];
        let e2 = dot3(&e, &e);
        let a = 1.0 + h * h / 8.0 * e2;
        let at = |u: &Vec3| {
            let k = h * h / (8.0 * a) * dot3(&e, u);
            [u[0] - k * e[0], u[1] - k * e[1], u[2] - k * e[2]]
        };
        let b = 1.0 - h * h / 4.0 * dot3(&e, &at(&e));
        let c = 0.5 * (b + 1.0);
        let drive = [
            h * w[0] + 0.5 * h * h * e[0] * st.r,
            h * w[1] + 0.5 * h * h * e[1] * st.r,
            h * w[2] + 0.5 * h * h * e[2] * st.r,
        ];
        let dx = at(&drive);
        let x_want = [st.x[0] + dx[0], st.x[1] + dx[1], st.x[2] + dx[2]];
        let aw = at(&w);
        let k = h * h / 4.0 * dot3(&e, &aw);
        let v_want = [
            w[0] - k * e[0] + c * h * e[0] * st.r,
            w[1] - k * e[1] + c * h * e[1] * st.r,
            w[2] - k * e[2] + c * h * e[2] * st.r,
        ];
        let r_want = b * st.r - 0.5 * h * dot3(&e, &aw);
        assert!(close(&got.x, &x_want, 1e-13));
        assert!(close(&got.v, &v_want, 1e-13));
        assert!((got.r - r_want).abs() < 1e-13);
    }

    #[test]
    fn compose_tags_failing_stage() {
        // field along the velocity so the leading rotation leaves v alone
        let prob = problem([1.0, 0.0, 0.0], true);
        let st = CpdState { x: [0.05, 0.0, 0.0], v: [-1.0, 0.0, 0.0], r: 1.0, t: 0.0 };
        let err = compose_step(&st, &prob, &SplitScheme::s2(), 0.1).unwrap_err();
        assert!(matches!(err, Error::Stage { index: 1, .. }), "{err:?}");
    }

    #[test]
    fn fused_trajectory_matches_unfused_at_the_end() {
        let prob = problem([0.0, 0.0, 3.0], true);
        let st = lift_cpd(X0, V0, &prob).unwrap();
        for scheme in [SplitScheme::s2(), SplitScheme::s4()] {
            let a = split_trajectory(&st, &prob, &scheme, 0.01, 50, false, |_| {}).unwrap();
            let b = split_trajectory(&st, &prob, &scheme, 0.01, 50, true, |_| {}).unwrap();
            assert!(close(&a.x, &b.x, 1e-12));
            assert!(close(&a.v, &b.v, 1e-12));
            assert!((a.r - b.r).abs() < 1e-12);
            assert_eq!(a.t, b.t);
        }
    }

    #[test]
    fn compositions_conserve_modified_energy() {
        let prob = problem([0.0, 0.0, 10.0], true);
        let st = lift_cpd(X0, V0, &prob).unwrap();
        let e0 = modified_energy_cpd(&st, &prob);
        assert!((e0 - original_energy_cpd(&X0, &V0, &prob)).abs() < 1e-15);
        for scheme in [SplitScheme::s1(), SplitScheme::s2(), SplitScheme::s4(), SplitScheme::s6()] {
            let mut cur = st;
            for _ in 0..200 {
                let next = compose_step(&cur, &prob, &scheme, 0.1).unwrap();
                let (a, b) = (modified_energy_cpd(&cur, &prob), modified_energy_cpd(&next, &prob));
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                cur = next;
            }
        }
    }

    #[test]
    fn energy_examples() {
        let prob = problem([0.0, 0.0, 1.0], true);
        let rest = CpdState { x: X0, v: [0.0; 3], r: 1.0, t: 0.0 };
        assert_eq!(modified_energy_cpd(&rest, &prob), 0.0);
        let st = lift_cpd(X0, V0, &prob).unwrap();
        let want = 0.5 * (0.81 + 0.25 + 0.16) + 1.0 / (100.0 * 1.49f64.sqrt());
        assert!((modified_energy_cpd(&st, &prob) - want).abs() < 1e-15);
        assert!((original_energy_cpd(&X0, &V0, &prob) - want).abs() < 1e-15);
        assert_eq!(original_energy_cpd(&X0, &[0.0; 3], &problem([0.0; 3], false)), 0.0);
    }
}
