//! Experiment runner: trajectories, error metrics, convergence studies,
//! energy-drift series and timing.

pub mod cli;
pub mod svg;

use std::cmp::Ordering;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{avf_step, boris_step, cpd_rhs, ito2_step, osde_rhs, FixedPointConfig, QuadratureRule};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::problems::{ProblemInstance, System};
use crate::reference::{adapt_integrate, as_first_order, ReferenceConfig};
use crate::sav_cpd::{lift_cpd, modified_energy_cpd, original_energy_cpd, split_trajectory, SplitScheme};
use crate::sav_osde::{
    e2sav_step_general, e2sav_step_with, lift_general, lift_state, modified_energy, modified_energy_general,
    original_energy, original_energy_general, GeneralKernel, OscillatorKernel, Predictor,
};

pub const METHOD_TAGS: [&str; 8] = ["e2sav", "s1sav", "s2sav", "s4sav", "s6sav", "avf", "ito2", "boris"];

/// Errors below this are treated as rounding-saturated in slope fits.
pub const SATURATION_FLOOR: f64 = 1e-12;

/// Energy series are thinned so that at most this many points are stored.
pub const MAX_SERIES_POINTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    E2Sav,
    S1Sav,
    S2Sav,
    S4Sav,
    S6Sav,
    Avf,
    Ito2,
    Boris,
}

impl Method {
    pub fn tag(self) -> &'static str {
        METHOD_TAGS[self as usize]
    }

    pub fn splitting(self) -> Option<SplitScheme> {
        match self {
            Method::S1Sav => Some(SplitScheme::s1()),
            Method::S2Sav => Some(SplitScheme::s2()),
            Method::S4Sav => Some(SplitScheme::s4()),
            Method::S6Sav => Some(SplitScheme::s6()),
            _ => None,
        }
    }

    /// Whether the method conserves a modified (SAV) energy rather than being
    /// judged on the original one.
    pub fn is_sav(self) -> bool {
        matches!(self, Method::E2Sav | Method::S1Sav | Method::S2Sav | Method::S4Sav | Method::S6Sav)
    }

    fn supports(self, inst: &ProblemInstance) -> bool {
        match self {
            Method::E2Sav => !inst.is_cpd(),
            Method::Avf | Method::Ito2 => true,
            _ => inst.is_cpd(),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        const ALL: [Method; 8] = [
            Method::E2Sav,
            Method::S1Sav,
            Method::S2Sav,
            Method::S4Sav,
            Method::S6Sav,
            Method::Avf,
            Method::Ito2,
            Method::Boris,
        ];
        ALL.into_iter().find(|m| m.tag() == s).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown method '{s}' (valid: {})", METHOD_TAGS.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorMode {
    /// Error at the final time only.
    #[default]
    Final,
    /// Largest error over all step times.
    Max,
}

impl FromStr for ErrorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(ErrorMode::Final),
            "max" => Ok(ErrorMode::Max),
            _ => Err(Error::InvalidArgument(format!("unknown error mode '{s}' (expected final or max)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// `None` picks linear for oscillatory problems and corrected for general
    /// systems.
    pub predictor: Option<Predictor>,
    pub fuse: bool,
    pub quadrature: QuadratureRule,
    pub fixed_point: FixedPointConfig,
    /// Record the thinned energy-error series.
    pub record_series: bool,
    /// Keep the state after every step (needed for max-over-time errors).
    pub keep_states: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            predictor: None,
            fuse: false,
            quadrature: QuadratureRule::default(),
            fixed_point: FixedPointConfig::default(),
            record_series: false,
            keep_states: false,
        }
    }
}

/// `(position, velocity)` pair in the split used by the error metric.
pub type PhaseState = (Vec<f64>, Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub steps: usize,
    pub final_state: PhaseState,
    /// `(t_n, e_H)`, thinned; empty unless requested.
    pub energy_series: Vec<(f64, f64)>,
    pub max_energy_error: f64,
    /// Set when `|H0|` was too small for a relative error and absolute errors
    /// were reported instead.
    pub absolute_energy_error: bool,
    pub converged: bool,
    pub states: Vec<PhaseState>,
}

pub fn step_count(h: f64, t_end: f64) -> Result<usize> {
    if !(h > 0.0 && t_end >= 0.0 && h.is_finite() && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("need h > 0 and T >= 0 (h = {h}, T = {t_end})")));
    }
    let n = (t_end / h).round();
    if (n * h - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::InvalidArgument(format!("T = {t_end} is not a multiple of h = {h}")));
    }
    Ok(n as usize)
}

pub fn series_stride(steps: usize) -> usize {
    steps.div_ceil(MAX_SERIES_POINTS).max(1)
}

struct Recorder {
    h0: f64,
    absolute: bool,
    max_err: f64,
    stride: usize,
    series: Option<Vec<(f64, f64)>>,
    states: Option<Vec<PhaseState>>,
}

impl Recorder {
    fn new(h0: f64, opts: &SimOptions, steps: usize) -> Self {
        Self {
            h0,
            absolute: h0.abs() < 1e-14,
            max_err: 0.0,
            stride: series_stride(steps),
            series: opts.record_series.then(Vec::new),
            states: opts.keep_states.then(Vec::new),
        }
    }

    fn record(&mut self, n: usize, t: f64, energy: f64, state: impl FnOnce() -> PhaseState) {
        let diff = (energy - self.h0).abs();
        let e = if self.absolute { diff } else { diff / self.h0.abs() };
        // NaN must not hide behind max()
        self.max_err = if e.is_nan() { f64::NAN } else { self.max_err.max(e) };
        if let Some(s) = &mut self.series {
            if n % self.stride == 0 {
                s.push((t, e));
            }
        }
        if let Some(st) = &mut self.states {
            st.push(state());
        }
    }
}

fn split_general(u: &[f64]) -> PhaseState {
    let h = u.len() / 2;
    (u[..h].to_vec(), u[h..].to_vec())
}

/// Runs `method` on `inst` for `round(T/h)` steps.
pub fn simulate(inst: &ProblemInstance, method: Method, h: f64, t_end: f64, opts: &SimOptions) -> Result<Simulation> {
    if !method.supports(inst) {
        return Err(Error::InvalidArgument(format!(
            "method '{}' does not apply to problem '{}'",
            method.tag(),
            inst.tag
        )));
    }
    let steps = step_count(h, t_end)?;
    let mut converged = true;
    let fp = &opts.fixed_point;
    let quad = &opts.quadrature;
    let tn = |n: usize| n as f64 * h;

    let (final_state, rec) = match (&inst.system, method) {
        (System::Osde { prob, q0, p0 }, Method::E2Sav) => {
            let mode = opts.predictor.unwrap_or(Predictor::Linear);
            let kernel = OscillatorKernel::new(prob, h)?;
            let mut st = lift_state(q0, p0, prob)?;
            let mut rec = Recorder::new(modified_energy(&st, prob), opts, steps);
            for n in 1..=steps {
                st = e2sav_step_with(&st, prob, &kernel, mode)?;
                rec.record(n, tn(n), modified_energy(&st, prob), || (st.q.clone(), st.p.clone()));
            }
            ((st.q, st.p), rec)
        }
        (System::General { sys, u0 }, Method::E2Sav) => {
            let mode = opts.predictor.unwrap_or(Predictor::Corrected);
            let kernel = GeneralKernel::new(sys, h)?;
            let mut st = lift_general(u0, sys)?;
            let mut rec = Recorder::new(modified_energy_general(&st, sys), opts, steps);
            for n in 1..=steps {
                st = e2sav_step_general(&st, sys, &kernel, mode)?;
                rec.record(n, tn(n), modified_energy_general(&st, sys), || split_general(&st.u));
            }
            (split_general(&st.u), rec)
        }
        (System::Cpd { prob, x0, v0 }, m) if m.splitting().is_some() => {
            let scheme = m.splitting().expect("guarded");
            let st = lift_cpd(*x0, *v0, prob)?;
            let mut rec = Recorder::new(modified_energy_cpd(&st, prob), opts, steps);
            let mut n = 0;
            let last = split_trajectory(&st, prob, &scheme, h, steps, opts.fuse, |s| {
                n += 1;
                rec.record(n, s.t, modified_energy_cpd(s, prob), || (s.x.to_vec(), s.v.to_vec()));
            })?;
            ((last.x.to_vec(), last.v.to_vec()), rec)
        }
        (System::Cpd { prob, x0, v0 }, Method::Boris) => {
            let (mut x, mut v, mut t) = (*x0, *v0, 0.0);
            let mut rec = Recorder::new(original_energy_cpd(&x, &v, prob), opts, steps);
            for n in 1..=steps {
                (x, v, t) = boris_step(&x, &v, t, prob, h);
                rec.record(n, t, original_energy_cpd(&x, &v, prob), || (x.to_vec(), v.to_vec()));
            }
            ((x.to_vec(), v.to_vec()), rec)
        }
        (system, Method::Avf | Method::Ito2) => {
            let (rhs, energy, split, y0): (
                Box<dyn Fn(&[f64]) -> Vec<f64> + '_>,
                Box<dyn Fn(&[f64]) -> f64 + '_>,
                usize,
                Vec<f64>,
            ) = match system {
                System::Osde { prob, q0, p0 } => {
                    let d = prob.dim();
                    (
                        Box::new(osde_rhs(prob)),
                        Box::new(move |y: &[f64]| original_energy(&y[..d], &y[d..], prob)),
                        d,
                        [q0.as_slice(), p0.as_slice()].concat(),
                    )
                }
                System::General { sys, u0 } => (
                    Box::new(|u: &[f64]| sys.vector_field(u)),
                    Box::new(|u: &[f64]| original_energy_general(u, sys)),
                    u0.len() / 2,
                    u0.clone(),
                ),
                System::Cpd { prob, x0, v0 } => (
                    Box::new(cpd_rhs(prob)),
                    Box::new(|y: &[f64]| original_energy_cpd(&[y[0], y[1], y[2]], &[y[3], y[4], y[5]], prob)),
                    3,
                    [x0.as_slice(), v0.as_slice()].concat(),
                ),
            };
            let mut y = y0;
            let mut rec = Recorder::new(energy(&y), opts, steps);
            for n in 1..=steps {
                let out = if method == Method::Avf {
                    avf_step(&rhs, &y, h, quad, fp)?
                } else {
                    ito2_step(&rhs, &y, h, fp)?
                };
                converged &= out.converged;
                y = out.x;
                rec.record(n, tn(n), energy(&y), || (y[..split].to_vec(), y[split..].to_vec()));
            }
            ((y[..split].to_vec(), y[split..].to_vec()), rec)
        }
        _ => unreachable!("method support checked above"),
    };
    Ok(Simulation {
        steps,
        final_state,
        energy_series: rec.series.unwrap_or_default(),
        max_energy_error: rec.max_err,
        absolute_energy_error: rec.absolute,
        converged,
        states: rec.states.unwrap_or_default(),
    })
}

/// `||xi - xi_ref|| / ||xi_ref|| + ||eta - eta_ref|| / ||eta_ref||`
pub fn global_error(num: (&[f64], &[f64]), reference: (&[f64], &[f64])) -> Result<f64> {
    let (rx, rv) = (norm(reference.0), norm(reference.1));
    if rx == 0.0 || rv == 0.0 {
        return Err(Error::DegenerateReference);
    }
    let dx: Vec<f64> = num.0.iter().zip(reference.0).map(|(a, b)| a - b).collect();
    let dv: Vec<f64> = num.1.iter().zip(reference.1).map(|(a, b)| a - b).collect();
    Ok(norm(&dx) / rx + norm(&dv) / rv)
}

/// Reference configuration for `inst`: tighter for the highly oscillatory
/// regime.
pub fn reference_config(inst: &ProblemInstance) -> ReferenceConfig {
    match inst.param {
        ("eps", eps) if eps <= 0.01 => ReferenceConfig::oscillatory(),
        _ => ReferenceConfig::default(),
    }
}

/// Reference states at the given times in the error-metric split.
pub fn reference_states(inst: &ProblemInstance, times: &[f64]) -> Result<Vec<PhaseState>> {
    let (sys, y0) = as_first_order(inst);
    let half = y0.len() / 2;
    let tr = adapt_integrate(&sys, &y0, times, &reference_config(inst))?;
    Ok(tr
        .states
        .into_iter()
        .skip(1)
        .map(|y| (y[..half].to_vec(), y[half..].to_vec()))
        .collect())
}

/// Exact Duffing state at `t`, when the problem has one.
pub fn exact_state(inst: &ProblemInstance, t: f64) -> Option<Result<PhaseState>> {
    inst.exact.map(|ex| ex.state(t).map(|(q, p)| (vec![q], vec![p])))
}

/// Global error of a finished simulation against the adaptive reference.
pub fn simulation_error(inst: &ProblemInstance, sim: &Simulation, h: f64, mode: ErrorMode) -> Result<f64> {
    let fin = &sim.final_state;
    match mode {
        ErrorMode::Final => {
            let t_end = sim.steps as f64 * h;
            let r = reference_states(inst, &[t_end])?;
            global_error((&fin.0, &fin.1), (&r[0].0, &r[0].1))
        }
        ErrorMode::Max => {
            if sim.states.len() != sim.steps {
                return Err(Error::InvalidArgument("max-over-time error needs stored states".into()));
            }
            let times: Vec<f64> = (1..=sim.steps).map(|n| n as f64 * h).collect();
            let r = reference_states(inst, &times)?;
            sim.states.iter().zip(&r).try_fold(0.0f64, |m, (s, r)| {
                Ok(m.max(global_error((&s.0, &s.1), (&r.0, &r.1))?))
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub problem: String,
    pub method: String,
    pub param_name: String,
    pub param_value: f64,
    pub h: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    /// Empty when not computed (energy runs).
    pub global_error: Option<f64>,
    pub max_energy_error: f64,
    pub cpu_seconds: f64,
    pub converged: bool,
}

impl ResultRow {
    fn new(inst: &ProblemInstance, method: Method, h: f64, t_end: f64) -> Self {
        Self {
            problem: inst.tag.to_string(),
            method: method.tag().to_string(),
            param_name: inst.param.0.to_string(),
            param_value: inst.param.1,
            h,
            t_end,
            global_error: None,
            max_energy_error: 0.0,
            cpu_seconds: 0.0,
            converged: true,
        }
    }
}

fn row_order(a: &ResultRow, b: &ResultRow) -> Ordering {
    a.problem
        .cmp(&b.problem)
        .then_with(|| a.method.cmp(&b.method))
        .then_with(|| a.param_value.total_cmp(&b.param_value))
        .then_with(|| b.h.total_cmp(&a.h))
        .then_with(|| a.t_end.total_cmp(&b.t_end))
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(row_order);
}

pub fn write_rows<W: std::io::Write>(rows: &[ResultRow], out: W) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "problem",
            "method",
            "param_name",
            "param_value",
            "h",
            "T",
            "global_error",
            "max_energy_error",
            "cpu_seconds",
            "converged",
        ])?;
    }
    w.flush()
}

pub fn rows_to_string(rows: &[ResultRow]) -> String {
    let mut buf = Vec::new();
    write_rows(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn parse_rows(text: &str) -> std::result::Result<Vec<ResultRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

/// One `(problem instance, method, h, T)` cell.
#[derive(Debug, Clone)]
pub struct Cell {
    pub instance: ProblemInstance,
    pub method: Method,
    pub h: f64,
    pub t_end: f64,
}

/// Simulates a cell and, if requested, measures its global error.
pub fn run_cell(cell: &Cell, opts: &SimOptions, error: Option<ErrorMode>) -> Result<(ResultRow, Simulation)> {
    let mut local = opts.clone();
    local.keep_states = error == Some(ErrorMode::Max);
    let sim = simulate(&cell.instance, cell.method, cell.h, cell.t_end, &local)?;
    let mut row = ResultRow::new(&cell.instance, cell.method, cell.h, cell.t_end);
    row.max_energy_error = sim.max_energy_error;
    row.converged = sim.converged;
    if let Some(mode) = error {
        row.global_error = Some(simulation_error(&cell.instance, &sim, cell.h, mode)?);
    }
    Ok((row, sim))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub method: String,
    pub param_value: f64,
    /// `None` when fewer than two usable points remain.
    pub slope: Option<f64>,
    pub points: usize,
    /// Points dropped for lying below [`SATURATION_FLOOR`].
    pub saturated: usize,
    /// Cells that failed or produced no finite error.
    pub failed: usize,
}

/// Least-squares slope of `log2(err)` against `log2(h)`.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.log2()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.log2()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub rows: Vec<ResultRow>,
    pub fits: Vec<SlopeFit>,
    /// `(method, param, h, message)` for failed cells.
    pub failures: Vec<(String, f64, f64, String)>,
}

/// Runs every method over `h = 2^-k`, `k in kmin..=kmax`, for each instance,
/// in parallel; failing cells are reported and left out of the fits.
pub fn convergence_study(
    instances: &[ProblemInstance],
    methods: &[Method],
    kmin: u32,
    kmax: u32,
    t_end: f64,
    opts: &SimOptions,
    mode: ErrorMode,
) -> Result<ConvergenceStudy> {
    if kmax < kmin + 2 {
        return Err(Error::InvalidArgument("a convergence study needs at least 3 step sizes".into()));
    }
    let mut cells = Vec::new();
    for inst in instances {
        for &m in methods {
            if !m.supports(inst) {
                return Err(Error::InvalidArgument(format!(
                    "method '{}' does not apply to problem '{}'",
                    m.tag(),
                    inst.tag
                )));
            }
            for k in kmin..=kmax {
                cells.push(Cell {
                    instance: inst.clone(),
                    method: m,
                    h: 2f64.powi(-(k as i32)),
                    t_end,
                });
            }
        }
    }
    let outcomes: Vec<_> = cells.par_iter().map(|c| (c, run_cell(c, opts, Some(mode)))).collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cell, out) in outcomes {
        match out {
            Ok((row, _)) => rows.push(row),
            Err(e) => {
                failures.push((cell.method.tag().to_string(), cell.instance.param.1, cell.h, e.to_string()));
                let mut row = ResultRow::new(&cell.instance, cell.method, cell.h, t_end);
                row.converged = false;
                row.max_energy_error = f64::NAN;
                rows.push(row);
            }
        }
    }
    sort_rows(&mut rows);
    let mut fits = Vec::new();
    for inst in instances {
        for &m in methods {
            let mine: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.method == m.tag() && r.param_value == inst.param.1 && r.problem == inst.tag)
                .collect();
            let mut pts = Vec::new();
            let (mut saturated, mut failed) = (0, 0);
            for r in mine {
                match r.global_error {
                    Some(e) if e.is_finite() && e >= SATURATION_FLOOR => pts.push((r.h, e)),
                    Some(e) if e.is_finite() => saturated += 1,
                    _ => failed += 1,
                }
            }
            fits.push(SlopeFit {
                method: m.tag().to_string(),
                param_value: inst.param.1,
                slope: fit_slope(&pts),
                points: pts.len(),
                saturated,
                failed,
            });
        }
    }
    Ok(ConvergenceStudy { rows, fits, failures })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub problem: String,
    pub method: String,
    pub param_name: String,
    pub param_value: f64,
    pub h: f64,
    pub t: f64,
    pub energy_error: f64,
}

pub fn energy_rows(cell: &Cell, sim: &Simulation) -> Vec<EnergyRow> {
    sim.energy_series
        .iter()
        .map(|&(t, e)| EnergyRow {
            problem: cell.instance.tag.to_string(),
            method: cell.method.tag().to_string(),
            param_name: cell.instance.param.0.to_string(),
            param_value: cell.instance.param.1,
            h: cell.h,
            t,
            energy_error: e,
        })
        .collect()
}

/// Energy-drift runs for every cell, in parallel. Returns one summary row
/// per cell (no global error) and the thinned series.
pub fn energy_study(cells: &[Cell], opts: &SimOptions) -> Result<(Vec<ResultRow>, Vec<EnergyRow>)> {
    let mut local = opts.clone();
    local.record_series = true;
    let outs: Vec<Result<(ResultRow, Vec<EnergyRow>)>> = cells
        .par_iter()
        .map(|c| {
            let (row, sim) = run_cell(c, &local, None)?;
            Ok((row, energy_rows(c, &sim)))
        })
        .collect();
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for o in outs {
        let (r, s) = o?;
        rows.push(r);
        series.extend(s);
    }
    sort_rows(&mut rows);
    Ok((rows, series))
}

pub fn write_energy_rows<W: std::io::Write>(rows: &[EnergyRow], out: W) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}

/// Wall-clock seconds for each cell: median of `repeats` full trajectories,
/// run one after another on the calling thread.
pub fn bench(cells: &[Cell], opts: &SimOptions, repeats: usize) -> Result<Vec<ResultRow>> {
    let repeats = repeats.max(1);
    let mut rows = Vec::with_capacity(cells.len());
    for c in cells {
        let mut times = Vec::with_capacity(repeats);
        let mut last = None;
        for _ in 0..repeats {
            let start = Instant::now();
            let sim = simulate(&c.instance, c.method, c.h, c.t_end, opts)?;
            times.push(start.elapsed().as_secs_f64());
            last = Some(sim);
        }
        times.sort_by(f64::total_cmp);
        let sim = last.expect("repeats >= 1");
        let mut row = ResultRow::new(&c.instance, c.method, c.h, c.t_end);
        row.max_energy_error = sim.max_energy_error;
        row.converged = sim.converged;
        row.cpu_seconds = times[times.len() / 2];
        rows.push(row);
    }
    sort_rows(&mut rows);
    Ok(rows)
}

/// Multiplies every initial coordinate by `1 + 1e-3 u`, `u ~ U(-1, 1)`,
/// drawn from a seeded stream.
pub fn perturb_initial(inst: &mut ProblemInstance, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jiggle = |x: &mut f64| *x *= 1.0 + 1e-3 * rng.gen_range(-1.0..1.0);
    match &mut inst.system {
        System::Osde { q0, p0, .. } => q0.iter_mut().chain(p0.iter_mut()).for_each(&mut jiggle),
        System::General { u0, .. } => u0.iter_mut().for_each(&mut jiggle),
        System::Cpd { x0, v0, .. } => x0.iter_mut().chain(v0.iter_mut()).for_each(&mut jiggle),
    }
    // the elliptic solution only matches the unperturbed data
    inst.exact = None;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{cpd_constant, duffing, henon_heiles, sine_gordon};

    #[test]
    fn global_error_examples() {
        let x = [1.0, 2.0];
        let v = [0.5, -0.5];
        assert_eq!(global_error((&x, &v), (&x, &v)).unwrap(), 0.0);
        assert_eq!(global_error((&[2.0, 4.0], &v), (&x, &v)).unwrap(), 1.0);
        assert_eq!(global_error((&x, &v), (&[0.0, 0.0], &v)), Err(Error::DegenerateReference));
    }

    #[test]
    fn slope_fit_recovers_power() {
        for p in [1.0, 2.0, 4.0, 6.0] {
            let pts: Vec<(f64, f64)> = (3..9).map(|k| {
                let h = 2f64.powi(-k);
                (h, 3.7 * h.powf(p))
            }).collect();
            assert!((fit_slope(&pts).unwrap() - p).abs() < 1e-10);
        }
        assert_eq!(fit_slope(&[(0.1, 1.0)]), None);
    }

    #[test]
    fn step_counts() {
        assert_eq!(step_count(0.01, 1000.0).unwrap(), 100_000);
        assert_eq!(step_count(0.0078125, 1.0).unwrap(), 128);
        assert_eq!(step_count(0.1, 0.0).unwrap(), 0);
        assert!(step_count(0.3, 1.0).is_err());
        assert_eq!(series_stride(100_000), 1);
        assert_eq!(series_stride(100_001), 2);
        assert_eq!(series_stride(1_000_000), 10);
    }

    #[test]
    fn method_tags_round_trip() {
        for tag in METHOD_TAGS {
            assert_eq!(tag.parse::<Method>().unwrap().tag(), tag);
        }
        let err = "rk4".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("boris") && err.contains("e2sav"));
    }

    #[test]
    fn incompatible_methods_are_rejected() {
        let d = duffing(5.0, 0.07).unwrap();
        assert!(matches!(simulate(&d, Method::Boris, 0.01, 0.1, &SimOptions::default()), Err(Error::InvalidArgument(_))));
        let c = cpd_constant(1.0).unwrap();
        assert!(matches!(simulate(&c, Method::E2Sav, 0.01, 0.1, &SimOptions::default()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_steps() {
        let d = duffing(5.0, 0.07).unwrap();
        let sim = simulate(&d, Method::E2Sav, 0.01, 0.0, &SimOptions::default()).unwrap();
        assert_eq!(sim.steps, 0);
        assert_eq!(sim.final_state, (vec![0.0], vec![5.0]));
        assert_eq!(sim.max_energy_error, 0.0);
    }

    #[test]
    fn sav_energy_short_runs() {
        let opts = SimOptions::default();
        let cases: Vec<(ProblemInstance, Method)> = vec![
            (duffing(20.0, 0.07).unwrap(), Method::E2Sav),
            (henon_heiles(0.01).unwrap(), Method::E2Sav),
            (sine_gordon(16).unwrap(), Method::E2Sav),
            (cpd_constant(0.01).unwrap(), Method::S4Sav),
        ];
        for (inst, m) in cases {
            let sim = simulate(&inst, m, 0.01, 10.0, &opts).unwrap();
            assert!(sim.max_energy_error <= 1e-12, "{} {}: {:e}", inst.tag, m.tag(), sim.max_energy_error);
        }
    }

    #[test]
    fn energy_series_is_thinned_and_aligned() {
        let inst = duffing(5.0, 0.07).unwrap();
        let opts = SimOptions { record_series: true, ..SimOptions::default() };
        let sim = simulate(&inst, Method::E2Sav, 0.01, 1.0, &opts).unwrap();
        assert_eq!(sim.energy_series.len(), 100);
        assert!((sim.energy_series[99].0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_and_schema() {
        let mut rows = vec![
            ResultRow {
                problem: "duffing".into(),
                method: "e2sav".into(),
                param_name: "omega".into(),
                param_value: 20.0,
                h: 0.0078125,
                t_end: 1.0,
                global_error: Some(1.2345678901234567e-5),
                max_energy_error: 3.3e-16,
                cpu_seconds: 0.0,
                converged: true,
            },
            ResultRow {
                problem: "cpd-constant".into(),
                method: "avf".into(),
                param_name: "eps".into(),
                param_value: 0.1,
                h: 0.01,
                t_end: 1000.0,
                global_error: None,
                max_energy_error: 0.1 + 0.2,
                cpu_seconds: 1.5,
                converged: false,
            },
        ];
        sort_rows(&mut rows);
        let text = rows_to_string(&rows);
        assert!(text.starts_with(
            "problem,method,param_name,param_value,h,T,global_error,max_energy_error,cpu_seconds,converged\n"
        ));
        assert!(!text.contains('\r'));
        assert!(text.contains("0.30000000000000004"));
        assert_eq!(parse_rows(&text).unwrap(), rows);
        assert_eq!(rows[0].problem, "cpd-constant");
    }

    #[test]
    fn perturbation_is_seeded() {
        let mut a = cpd_constant(1.0).unwrap();
        let mut b = cpd_constant(1.0).unwrap();
        perturb_initial(&mut a, 7);
        perturb_initial(&mut b, 7);
        assert_eq!(a.initial_split(), b.initial_split());
        assert_ne!(a.initial_split(), cpd_constant(1.0).unwrap().initial_split());
    }
}
