//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::svg::{line_chart, Axes, Series};
use super::{
    bench, convergence_study, energy_study, perturb_initial, run_cell, write_energy_rows, write_rows, Cell,
    ErrorMode, Method, ResultRow, SimOptions, METHOD_TAGS,
};
use crate::error::Error;
use crate::problems::{build, ProblemInstance, ProblemParams, PROBLEM_TAGS};
use crate::sav_osde::Predictor;

#[derive(Debug, Parser)]
#[command(name = "linsav", version, about = "Energy-preserving SAV integrators and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate once per parameter value and report one result row each.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.01)]
        h: f64,
        #[arg(long = "error-mode", default_value = "final")]
        error_mode: String,
    },
    /// Global errors over h = 2^-k and fitted orders.
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kmin: Option<u32>,
        #[arg(long)]
        kmax: Option<u32>,
        #[arg(long = "error-mode", default_value = "final")]
        error_mode: String,
    },
    /// Relative energy error as a function of time.
    Energy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.01)]
        h: f64,
        /// Use the long horizons (10000, or 2000 for sine-Gordon).
        #[arg(long)]
        long: bool,
        /// Also write one summary row per run here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Wall-clock time per trajectory, median of repeated serial runs.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.01)]
        h: f64,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Print the problem and method tags.
    List,
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    problem: String,
    /// Comma-separated method tags.
    #[arg(long = "method", visible_alias = "methods", value_delimiter = ',', required = true)]
    methods: Vec<String>,
    #[arg(long = "T")]
    t_end: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    omega: Vec<f64>,
    #[arg(long, default_value_t = 0.07)]
    k: f64,
    #[arg(long = "N", value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long = "C0")]
    c0: Option<f64>,
    #[arg(long)]
    predictor: Option<String>,
    /// Merge adjacent magnetic half steps across splitting steps.
    #[arg(long)]
    fuse: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Perturb the initial data with a seeded relative jitter of 1e-3.
    #[arg(long)]
    seed: Option<u64>,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Numerical(String),
    Io(io::Error),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn numerical(e: Error) -> Failure {
    match e {
        Error::InvalidArgument(m) => Failure::Usage(m),
        other => Failure::Numerical(other.to_string()),
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code: 0 on success, 2 for bad arguments, 3 for numerical
/// failures.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            3
        }
        Err(Failure::Io(e)) => {
            eprintln!("i/o error: {e}");
            1
        }
    }
}

impl Common {
    fn methods(&self) -> Result<Vec<Method>, Failure> {
        self.methods.iter().map(|m| m.parse().map_err(usage)).collect()
    }

    fn predictor(&self) -> Result<Option<Predictor>, Failure> {
        self.predictor.as_deref().map(|p| p.parse().map_err(usage)).transpose()
    }

    fn options(&self) -> Result<SimOptions, Failure> {
        Ok(SimOptions {
            predictor: self.predictor()?,
            fuse: self.fuse,
            ..SimOptions::default()
        })
    }

    /// Instances for every swept parameter value; `single` keeps only the
    /// first default when no value was given.
    fn instances(&self, single: bool) -> Result<Vec<ProblemInstance>, Failure> {
        if !PROBLEM_TAGS.contains(&self.problem.as_str()) {
            return Err(Failure::Usage(format!(
                "unknown problem '{}' (valid: {})",
                self.problem,
                PROBLEM_TAGS.join(", ")
            )));
        }
        let base = ProblemParams {
            k: self.k,
            shift: self.c0,
            ..ProblemParams::default()
        };
        let pick = |given: &[f64], defaults: &[f64]| -> Vec<f64> {
            if !given.is_empty() {
                given.to_vec()
            } else if single {
                defaults[..1].to_vec()
            } else {
                defaults.to_vec()
            }
        };
        let params: Vec<ProblemParams> = match self.problem.as_str() {
            "duffing" => pick(&self.omega, &[5.0, 10.0, 20.0])
                .into_iter()
                .map(|omega| ProblemParams { omega, ..base })
                .collect(),
            "sine-gordon" => {
                let given: Vec<f64> = self.n.iter().map(|&n| n as f64).collect();
                pick(&given, &[16.0, 32.0, 64.0])
                    .into_iter()
                    .map(|n| ProblemParams { n: n as usize, ..base })
                    .collect()
            }
            _ => pick(&self.eps, &[1.0, 0.1, 0.01])
                .into_iter()
                .map(|eps| ProblemParams { eps, ..base })
                .collect(),
        };
        params
            .iter()
            .map(|p| {
                let mut inst = build(&self.problem, p).map_err(usage)?;
                if let Some(seed) = self.seed {
                    perturb_initial(&mut inst, seed);
                }
                Ok(inst)
            })
            .collect()
    }

    fn cells(&self, h: f64, t_end: f64, single: bool) -> Result<Vec<Cell>, Failure> {
        let methods = self.methods()?;
        let mut cells = Vec::new();
        for inst in self.instances(single)? {
            for &method in &methods {
                cells.push(Cell {
                    instance: inst.clone(),
                    method,
                    h,
                    t_end,
                });
            }
        }
        Ok(cells)
    }
}

fn writer(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit_rows(rows: &[ResultRow], path: Option<&Path>) -> Result<(), Failure> {
    let mut w = writer(path)?;
    write_rows(rows, &mut w)?;
    w.flush()?;
    Ok(())
}

fn param_label(name: &str, value: f64) -> String {
    format!("{name}={value}")
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::List => {
            println!("problems: {}", PROBLEM_TAGS.join(", "));
            println!("methods: {}", METHOD_TAGS.join(", "));
            Ok(())
        }
        Command::Run { common, h, error_mode } => {
            let mode: ErrorMode = error_mode.parse().map_err(usage)?;
            let opts = common.options()?;
            let cells = common.cells(h, common.t_end.unwrap_or(1.0), true)?;
            let mut rows = Vec::new();
            for c in &cells {
                let (row, _) = run_cell(c, &opts, Some(mode)).map_err(numerical)?;
                rows.push(row);
            }
            super::sort_rows(&mut rows);
            emit_rows(&rows, common.out.as_deref())
        }
        Command::Converge { common, kmin, kmax, error_mode } => {
            let mode: ErrorMode = error_mode.parse().map_err(usage)?;
            let opts = common.options()?;
            let methods = common.methods()?;
            let instances = common.instances(false)?;
            let cpd = instances.first().is_some_and(|i| i.is_cpd());
            let (dmin, dmax) = if cpd { (3, 8) } else { (6, 12) };
            let study = convergence_study(
                &instances,
                &methods,
                kmin.unwrap_or(dmin),
                kmax.unwrap_or(dmax),
                common.t_end.unwrap_or(1.0),
                &opts,
                mode,
            )
            .map_err(numerical)?;
            for (m, p, h, msg) in &study.failures {
                eprintln!("failed: {m} param={p} h={h}: {msg}");
            }
            for fit in &study.fits {
                match fit.slope {
                    Some(s) => eprintln!(
                        "slope {} param={}: {s:.3} ({} points, {} saturated)",
                        fit.method, fit.param_value, fit.points, fit.saturated
                    ),
                    None => eprintln!(
                        "slope {} param={}: not fitted ({} saturated, {} failed)",
                        fit.method, fit.param_value, fit.saturated, fit.failed
                    ),
                }
            }
            emit_rows(&study.rows, common.out.as_deref())?;
            if let Some(path) = &common.svg {
                let series: Vec<Series> = study
                    .fits
                    .iter()
                    .map(|f| Series {
                        label: format!("{} {}", f.method, param_label(&study.rows[0].param_name, f.param_value)),
                        points: study
                            .rows
                            .iter()
                            .filter(|r| r.method == f.method && r.param_value == f.param_value)
                            .filter_map(|r| Some((r.h, r.global_error?)))
                            .collect(),
                    })
                    .collect();
                let title = format!("{}: global error at T", common.problem);
                std::fs::write(path, line_chart(&title, "h", "global error", &series, Axes { log_x: true, log_y: true }))?;
            }
            if study.failures.is_empty() {
                Ok(())
            } else {
                Err(Failure::Numerical(format!("{} cell(s) failed", study.failures.len())))
            }
        }
        Command::Energy { common, h, long, summary } => {
            let opts = common.options()?;
            let default_t = match (long, common.problem.as_str()) {
                (false, _) => 1000.0,
                (true, "sine-gordon") => 2000.0,
                (true, _) => 10000.0,
            };
            let cells = common.cells(h, common.t_end.unwrap_or(default_t), false)?;
            let (rows, series) = energy_study(&cells, &opts).map_err(numerical)?;
            let mut w = writer(common.out.as_deref())?;
            write_energy_rows(&series, &mut w)?;
            w.flush()?;
            if let Some(p) = summary {
                emit_rows(&rows, Some(&p))?;
            }
            if let Some(path) = &common.svg {
                let plotted: Vec<Series> = cells
                    .iter()
                    .map(|c| Series {
                        label: format!("{} {}", c.method.tag(), param_label(c.instance.param.0, c.instance.param.1)),
                        points: series
                            .iter()
                            .filter(|r| r.method == c.method.tag() && r.param_value == c.instance.param.1)
                            .map(|r| (r.t, r.energy_error))
                            .collect(),
                    })
                    .collect();
                let title = format!("{}: relative energy error", common.problem);
                std::fs::write(path, line_chart(&title, "t", "energy error", &plotted, Axes { log_x: false, log_y: true }))?;
            }
            Ok(())
        }
        Command::Bench { common, h, repeats } => {
            let opts = common.options()?;
            let cells = common.cells(h, common.t_end.unwrap_or(10.0), false)?;
            let rows = bench(&cells, &opts, repeats).map_err(numerical)?;
            emit_rows(&rows, common.out.as_deref())
        }
    }
}
