//! Adaptive Dormand-Prince 5(4) reference integrator.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::cross;
use crate::problems::{ProblemInstance, System};

type Rhs = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

/// `y' = f(t, y)`
#[derive(Clone)]
pub struct FirstOrderSystem {
    pub dim: usize,
    rhs: Arc<Rhs>,
}

impl fmt::Debug for FirstOrderSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FirstOrderSystem").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl FirstOrderSystem {
    pub fn new(dim: usize, rhs: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self {
            dim,
            rhs: Arc::new(rhs),
        }
    }

    pub fn eval(&self, t: f64, y: &[f64]) -> Vec<f64> {
        (self.rhs)(t, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceConfig {
    pub atol: f64,
    pub rtol: f64,
    /// First trial step; chosen automatically when `None`.
    pub initial_step: Option<f64>,
    /// Multiplies the automatically chosen first step.
    pub initial_step_scale: f64,
    pub max_steps: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            atol: 1e-12,
            rtol: 1e-12,
            initial_step: None,
            initial_step_scale: 1.0,
            max_steps: 50_000_000,
        }
    }
}

impl ReferenceConfig {
    /// Tighter settings used for the highly oscillatory regime.
    pub fn oscillatory() -> Self {
        Self {
            atol: 1e-13,
            rtol: 1e-13,
            initial_step_scale: 0.5,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub atol: f64,
    pub rtol: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl ReferenceTrajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory holds the initial state")
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights; identical to the last row of `A` (first same as last).
#[cfg(test)]
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
/// Difference between the fifth- and embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Stepper<'a> {
    sys: &'a FirstOrderSystem,
    k: Vec<Vec<f64>>,
    scratch: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(sys: &'a FirstOrderSystem) -> Self {
        Self {
            sys,
            k: vec![vec![0.0; sys.dim]; 7],
            scratch: vec![0.0; sys.dim],
        }
    }

    fn checked(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let f = self.sys.eval(t, y);
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain { t });
        }
        Ok(f)
    }

    /// One trial step from `(t, y)` with `k[0] = f(t, y)` already set. Returns
    /// the fifth-order solution and the error estimate; `k[6]` then holds
    /// `f(t + h, y+)`.
    fn attempt(&mut self, t: f64, y: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = y.len();
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * self.k[j][i];
                }
                self.scratch[i] = y[i] + h * acc;
            }
            self.k[s] = self.checked(t + C[s] * h, &self.scratch)?;
        }
        // stage 6 was evaluated at the fifth-order solution
        let y_new = self.scratch.clone();
        let err = (0..n)
            .map(|i| h * (0..7).map(|s| E[s] * self.k[s][i]).sum::<f64>())
            .collect();
        Ok((y_new, err))
    }
}

fn error_norm(err: &[f64], y: &[f64], y_new: &[f64], atol: f64, rtol: f64) -> f64 {
    let n = err.len() as f64;
    let sum: f64 = err
        .iter()
        .zip(y.iter().zip(y_new))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step(stepper: &Stepper, t0: f64, y0: &[f64], f0: &[f64], cfg: &ReferenceConfig) -> Result<f64> {
    let sc: Vec<f64> = y0.iter().map(|y| cfg.atol + cfg.rtol * y.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    let (d0, d1) = (rms(y0), rms(f0));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let f1 = stepper.checked(t0 + h0, &y1)?;
    let df: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| (a - b) / h0).collect();
    let d2 = rms(&df);
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1))
}

/// Integrates from `t = 0` and records the state at each sample time; steps
/// are clipped so that every sample time is hit exactly.
pub fn adapt_integrate(
    sys: &FirstOrderSystem,
    y0: &[f64],
    sample_times: &[f64],
    cfg: &ReferenceConfig,
) -> Result<ReferenceTrajectory> {
    if !(cfg.atol > 0.0 && cfg.rtol > 0.0) {
        return Err(Error::InvalidArgument("tolerances must be positive".into()));
    }
    if y0.len() != sys.dim {
        return Err(Error::dim("initial state does not match the system dimension"));
    }
    if sample_times.windows(2).any(|w| w[1] <= w[0]) || sample_times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidArgument("sample times must be ascending and non-negative".into()));
    }
    let mut stepper = Stepper::new(sys);
    let mut t = 0.0;
    let mut y = y0.to_vec();
    stepper.k[0] = stepper.checked(t, &y)?;
    let mut h = match cfg.initial_step {
        Some(h) => h,
        None => initial_step(&stepper, t, &y, &stepper.k[0].clone(), cfg)? * cfg.initial_step_scale,
    };
    let mut out = ReferenceTrajectory {
        times: vec![0.0],
        states: vec![y.clone()],
        atol: cfg.atol,
        rtol: cfg.rtol,
        accepted: 0,
        rejected: 0,
    };
    let mut err_old: f64 = 1e-4;
    let (safety, beta) = (0.9, 0.04);
    let alpha = 0.2 - 0.75 * beta;
    for &target in sample_times {
        if target == 0.0 {
            continue;
        }
        while t < target {
            if out.accepted + out.rejected >= cfg.max_steps {
                return Err(Error::StepSizeUnderflow { t, h });
            }
            let remaining = target - t;
            let clipped = remaining <= h * (1.0 + 1e-12);
            let step = if clipped { remaining } else { h };
            if step < 1e-14 && !clipped {
                return Err(Error::StepSizeUnderflow { t, h: step });
            }
            let (y_new, err) = stepper.attempt(t, &y, step)?;
            let en = error_norm(&err, &y, &y_new, cfg.atol, cfg.rtol);
            if en <= 1.0 {
                let fac = if en == 0.0 {
                    5.0
                } else {
                    (safety * en.powf(-alpha) * err_old.powf(beta)).clamp(0.2, 5.0)
                };
                err_old = en.max(1e-4);
                t = if clipped { target } else { t + step };
                y = y_new;
                stepper.k[0] = stepper.k[6].clone();
                out.accepted += 1;
                // a clipped step says nothing about the natural step size
                h = if clipped { h.max(step * fac) } else { step * fac };
            } else {
                out.rejected += 1;
                h = step * (safety * en.powf(-alpha)).max(0.2);
            }
        }
        out.times.push(target);
        out.states.push(y.clone());
    }
    Ok(out)
}

/// Classical fixed-step Dormand-Prince (fifth-order solution, no control),
/// used to check the order of the tableau.
pub fn fixed_step_integrate(sys: &FirstOrderSystem, y0: &[f64], t_end: f64, steps: usize) -> Result<Vec<f64>> {
    let mut stepper = Stepper::new(sys);
    let h = t_end / steps as f64;
    let mut y = y0.to_vec();
    for n in 0..steps {
        let t = n as f64 * h;
        stepper.k[0] = stepper.checked(t, &y)?;
        let (y_new, _) = stepper.attempt(t, &y, h)?;
        y = y_new;
    }
    Ok(y)
}

/// The underlying second-order dynamics as a first-order system: `(q, p)` for
/// oscillatory problems, `u` for general ones and `(x, v)` for charged
/// particles. The auxiliary variable is not part of the state.
pub fn as_first_order(inst: &ProblemInstance) -> (FirstOrderSystem, Vec<f64>) {
    match &inst.system {
        System::Osde { prob, q0, p0 } => {
            let prob = prob.clone();
            let d = prob.dim();
            let scale = -1.0 / (prob.eps * prob.eps);
            let sys = FirstOrderSystem::new(2 * d, move |_, y| {
                let (q, p) = y.split_at(d);
                let mut out = p.to_vec();
                let mut acc = prob.force(q);
                prob.stiffness.matvec_acc(scale, q, &mut acc);
                out.extend(acc);
                out
            });
            (sys, [q0.as_slice(), p0.as_slice()].concat())
        }
        System::General { sys, u0 } => {
            let gen = sys.clone();
            let r = gen.linear_part();
            let first = FirstOrderSystem::new(gen.dim(), move |_, u| {
                let mut out = r.matvec(u);
                gen.structure.matvec_acc(1.0, &gen.potential.gradient(u), &mut out);
                out
            });
            (first, u0.clone())
        }
        System::Cpd { prob, x0, v0 } => {
            let fields = prob.fields.clone();
            let sys = FirstOrderSystem::new(6, move |_, y| {
                let x = [y[0], y[1], y[2]];
                let v = [y[3], y[4], y[5]];
                let vb = cross(&v, &fields.magnetic(&x));
                let e = fields.electric(&x);
                vec![v[0], v[1], v[2], vb[0] + e[0], vb[1] + e[1], vb[2] + e[2]]
            });
            (sys, [x0.as_slice(), v0.as_slice()].concat())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{cpd_constant, duffing, jacobi_sn};
    use crate::sav_cpd::original_energy_cpd;

    fn decay() -> FirstOrderSystem {
        FirstOrderSystem::new(1, |_, y| vec![-y[0]])
    }

    #[test]
    fn tableau_consistency() {
        for s in 0..7 {
            let row: f64 = A[s].iter().sum();
            assert!((row - C[s]).abs() < 1e-15, "row {s}");
        }
        assert!((B5.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(E.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn zero_field_is_constant() {
        let sys = FirstOrderSystem::new(2, |_, _| vec![0.0, 0.0]);
        let tr = adapt_integrate(&sys, &[1.0, -2.0], &[0.5, 1.0, 3.0], &ReferenceConfig::default()).unwrap();
        assert_eq!(tr.times, vec![0.0, 0.5, 1.0, 3.0]);
        assert!(tr.states.iter().all(|s| s == &vec![1.0, -2.0]));
    }

    #[test]
    fn exponential_decay() {
        let cfg = ReferenceConfig::default();
        let tr = adapt_integrate(&decay(), &[1.0], &[1.0], &cfg).unwrap();
        assert_eq!(*tr.times.last().unwrap(), 1.0);
        assert!((tr.last()[0] - (-1f64).exp()).abs() <= 10.0 * (cfg.atol + cfg.rtol));
    }

    #[test]
    fn fixed_step_order_is_five() {
        let errs: Vec<f64> = [4usize, 8, 16, 32]
            .iter()
            .map(|&n| (fixed_step_integrate(&decay(), &[1.0], 1.0, n).unwrap()[0] - (-1f64).exp()).abs())
            .collect();
        let xs: Vec<f64> = [4.0f64, 8.0, 16.0, 32.0].iter().map(|n| (1.0 / n).ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope - 5.0).abs() <= 0.3, "slope {slope}");
    }

    #[test]
    fn duffing_matches_elliptic_solution() {
        let inst = duffing(5.0, 0.07).unwrap();
        let (sys, y0) = as_first_order(&inst);
        assert_eq!(sys.dim, 2);
        let f = sys.eval(0.0, &[0.5, 2.0]);
        let a = 25.0 + 0.0049;
        assert_eq!(f[0], 2.0);
        assert!((f[1] - (-a * 0.5 + 2.0 * 0.0049 * 0.125)).abs() < 1e-13);
        let tr = adapt_integrate(&sys, &y0, &[1.0], &ReferenceConfig::default()).unwrap();
        let want = jacobi_sn(5.0, 0.07 / 5.0).unwrap();
        assert!((tr.last()[0] - want).abs() < 1e-9);
    }

    #[test]
    fn cpd_reference_conserves_energy() {
        let inst = cpd_constant(1.0).unwrap();
        let (sys, y0) = as_first_order(&inst);
        assert_eq!(sys.dim, 6);
        let System::Cpd { prob, .. } = &inst.system else { unreachable!() };
        let tr = adapt_integrate(&sys, &y0, &[0.25, 0.5, 0.75, 1.0], &ReferenceConfig::default()).unwrap();
        let h0 = original_energy_cpd(&[y0[0], y0[1], y0[2]], &[y0[3], y0[4], y0[5]], prob);
        for s in &tr.states {
            let h = original_energy_cpd(&[s[0], s[1], s[2]], &[s[3], s[4], s[5]], prob);
            assert!((h - h0).abs() <= 1e-9);
        }
    }

    #[test]
    fn tighter_tolerances_do_not_hurt() {
        let inst = duffing(10.0, 0.07).unwrap();
        let (sys, y0) = as_first_order(&inst);
        let exact = inst.exact.unwrap().state(1.0).unwrap();
        let mut last = f64::INFINITY;
        for tol in [1e-8, 1e-9, 1e-10] {
            let cfg = ReferenceConfig { atol: tol, rtol: tol, ..ReferenceConfig::default() };
            let y = adapt_integrate(&sys, &y0, &[1.0], &cfg).unwrap();
            let err = (y.last()[0] - exact.0).abs() + (y.last()[1] - exact.1).abs() / 10.0;
            assert!(err <= last, "tol {tol}: {err:e} > {last:e}");
            last = err;
        }
    }

    #[test]
    fn error_paths() {
        let nan = FirstOrderSystem::new(1, |t, _| vec![if t > 0.5 { f64::NAN } else { 1.0 }]);
        assert!(matches!(
            adapt_integrate(&nan, &[0.0], &[1.0], &ReferenceConfig::default()),
            Err(Error::Domain { .. })
        ));
        // finite-time blow-up of y' = y^2 at t = 1
        let blow = FirstOrderSystem::new(1, |_, y| vec![y[0] * y[0]]);
        let err = adapt_integrate(&blow, &[1.0], &[2.0], &ReferenceConfig::default()).unwrap_err();
        assert!(matches!(err, Error::StepSizeUnderflow { .. } | Error::Domain { .. }), "{err:?}");
        assert!(adapt_integrate(&decay(), &[1.0], &[1.0, 0.5], &ReferenceConfig::default()).is_err());
    }
}
