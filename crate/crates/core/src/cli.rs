//! Experiment runner: builds the problem from command-line flags, runs one
//! configuration or a sweep, and writes CSV diagnostics.
//!
//! Output layout for a single run in `--out DIR`:
//!
//! * `steps.csv`, one row per sampled step: `n,t,tau,matvecs,est,energy,mass_dev,m_used`
//! * `summary.csv`, one row of totals and (optionally) the error against a reference
//! * `config.json`, the resolved configuration
//!
//! A sweep writes each run to `DIR/run_NNN/` plus an aggregate `DIR/sweep.csv`.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diag::relative_error;
use crate::driver::{reference_solve, run, ReferenceMethod, RunOutput, Scheme, SolverConfig, StepRecord};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::problem::{epsilon_m, CahnHilliardProblem, NormMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Number of cells per side of the grid the default epsilon is tied to.
pub const EPS_BASE_CELLS: usize = 64;

/// Uniform random state with entries strictly inside `(-0.01, 0.01)`,
/// drawn in storage order from ChaCha8 seeded with `seed`.
pub fn initial_condition(spec: &GridSpec, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(spec.len(), |_, _| loop {
        let v: f64 = rng.random_range(-0.01..0.01);
        if v != -0.01 {
            break v;
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsMode {
    /// `eps_m` for the spacing `lx / base_cells`, independent of the run's own grid.
    Formula { m: u32, base_cells: usize },
    Explicit { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceChoice {
    None,
    Classical,
    Ee2,
}

impl ReferenceChoice {
    pub fn method(self) -> Option<ReferenceMethod> {
        match self {
            ReferenceChoice::None => None,
            ReferenceChoice::Classical => Some(ReferenceMethod::classical()),
            ReferenceChoice::Ee2 => Some(ReferenceMethod::ee2_tight()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub eps: EpsMode,
    pub t_final: f64,
    pub scheme: Scheme,
    pub adaptive: bool,
    pub eyre: bool,
    pub tol: f64,
    pub tau0: f64,
    pub m_max: usize,
    pub norm_mode: NormMode,
    /// `None` applies the LIM controller without a growth limit.
    pub lim_growth_cap: Option<f64>,
    pub seed: u64,
    pub sample_every: usize,
    pub reference: ReferenceChoice,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            nx: 64,
            ny: 64,
            lx: 64.0,
            ly: 64.0,
            eps: EpsMode::Formula {
                m: 4,
                base_cells: EPS_BASE_CELLS,
            },
            t_final: 1000.0,
            scheme: Scheme::Ee2,
            adaptive: false,
            eyre: false,
            tol: 1e-3,
            tau0: 0.1,
            m_max: 30,
            norm_mode: NormMode::ExactProduct,
            lim_growth_cap: Some(2.0),
            seed: 0,
            sample_every: 1,
            reference: ReferenceChoice::None,
        }
    }
}

impl ExperimentConfig {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.nx, self.ny, self.lx, self.ly)
    }

    pub fn epsilon(&self) -> Result<f64> {
        match self.eps {
            EpsMode::Formula { m, base_cells } => {
                if base_cells == 0 {
                    return Err(Error::InvalidParameter("base_cells must be positive".into()));
                }
                epsilon_m(self.lx / base_cells as f64, m)
            }
            EpsMode::Explicit { value } => {
                if value > 0.0 && value.is_finite() {
                    Ok(value)
                } else {
                    Err(Error::InvalidParameter(format!("epsilon must be positive, got {value}")))
                }
            }
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let mut c = SolverConfig::new(self.scheme, self.adaptive, self.tau0, self.t_final, self.tol)
            .with_m_max(self.m_max)
            .with_eyre(self.eyre);
        c.norm_mode = self.norm_mode;
        c.lim_growth_cap = self.lim_growth_cap;
        c
    }

    pub fn problem(&self) -> Result<CahnHilliardProblem> {
        CahnHilliardProblem::from_grid(self.grid()?, self.epsilon()?, self.eyre)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.epsilon()?;
        self.solver_config().validate()?;
        if self.sample_every == 0 {
            return Err(Error::InvalidParameter("sample_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Apply the fields present in a sweep entry.
    pub fn with_overrides(&self, o: &SweepEntry) -> Self {
        let mut c = self.clone();
        if let Some(v) = o.scheme {
            c.scheme = v;
        }
        if let Some(v) = o.adaptive {
            c.adaptive = v;
        }
        if let Some(v) = o.eyre {
            c.eyre = v;
        }
        if let Some(v) = o.tol {
            c.tol = v;
        }
        if let Some(v) = o.tau0 {
            c.tau0 = v;
        }
        if let Some(v) = o.m_max {
            c.m_max = v;
        }
        if let Some(v) = o.norm_mode {
            c.norm_mode = v;
        }
        c
    }
}

/// One entry of a sweep file. Grid, epsilon, T and seed are shared by the sweep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    pub scheme: Option<Scheme>,
    pub adaptive: Option<bool>,
    pub eyre: Option<bool>,
    pub tol: Option<f64>,
    pub tau0: Option<f64>,
    pub m_max: Option<usize>,
    pub norm_mode: Option<NormMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scheme: Scheme,
    pub adaptive: bool,
    pub eyre: bool,
    pub tau0: f64,
    pub tol: f64,
    pub m_max: usize,
    pub steps: usize,
    pub final_t: f64,
    pub scheme_matvecs: u64,
    pub pc_matvecs: u64,
    pub total_matvecs: u64,
    pub max_mass_dev: f64,
    pub final_energy: Option<f64>,
    pub error: Option<f64>,
    pub wall_time_s: f64,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub const STEPS_HEADER: [&str; 8] = ["n", "t", "tau", "matvecs", "est", "energy", "mass_dev", "m_used"];

/// Write the step table, keeping every `sample_every`-th step and the last one.
/// The `matvecs` column includes the error-estimate cost of the step.
pub fn write_steps_csv<W: Write>(out: W, records: &[StepRecord], sample_every: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STEPS_HEADER)?;
    let every = sample_every.max(1);
    for (k, r) in records.iter().enumerate() {
        if r.n % every != 0 && k + 1 != records.len() {
            continue;
        }
        w.write_record([
            r.n.to_string(),
            fmt_f64(r.t),
            fmt_f64(r.tau),
            (r.matvecs + r.pc_matvecs).to_string(),
            fmt_opt(r.est.map(fmt_f64)),
            fmt_opt(r.energy.map(fmt_f64)),
            fmt_f64(r.mass_dev),
            fmt_opt(r.m_used),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const SUMMARY_HEADER: [&str; 15] = [
    "scheme",
    "adaptive",
    "eyre",
    "tau0",
    "tol",
    "m_max",
    "steps",
    "final_t",
    "scheme_matvecs",
    "pc_matvecs",
    "total_matvecs",
    "max_mass_dev",
    "final_energy",
    "error",
    "wall_time_s",
];

pub fn write_summary_csv<W: Write>(out: W, s: &RunSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    w.write_record([
        s.scheme.to_string(),
        s.adaptive.to_string(),
        s.eyre.to_string(),
        fmt_f64(s.tau0),
        fmt_f64(s.tol),
        s.m_max.to_string(),
        s.steps.to_string(),
        fmt_f64(s.final_t),
        s.scheme_matvecs.to_string(),
        s.pc_matvecs.to_string(),
        s.total_matvecs.to_string(),
        fmt_f64(s.max_mass_dev),
        fmt_opt(s.final_energy.map(fmt_f64)),
        fmt_opt(s.error.map(fmt_f64)),
        format!("{:.6}", s.wall_time_s),
    ])?;
    w.flush()?;
    Ok(())
}

fn summarize(config: &ExperimentConfig, out: &RunOutput, error: Option<f64>, wall: f64) -> RunSummary {
    RunSummary {
        scheme: config.scheme,
        adaptive: config.adaptive,
        eyre: config.eyre,
        tau0: config.tau0,
        tol: config.tol,
        m_max: config.m_max,
        steps: out.records.len(),
        final_t: out.final_time(),
        scheme_matvecs: out.scheme_matvecs(),
        pc_matvecs: out.pc_matvecs(),
        total_matvecs: out.total_matvecs(),
        max_mass_dev: out.records.iter().map(|r| r.mass_dev).fold(0.0, f64::max),
        final_energy: out.records.last().and_then(|r| r.energy),
        error,
        wall_time_s: wall,
    }
}

#[derive(Debug, Serialize)]
struct ResolvedConfig<'a> {
    #[serde(flatten)]
    config: &'a ExperimentConfig,
    epsilon: f64,
    hx: f64,
    hy: f64,
}

fn write_config_json(path: &Path, config: &ExperimentConfig) -> Result<()> {
    let grid = config.grid()?;
    let resolved = ResolvedConfig {
        config,
        epsilon: config.epsilon()?,
        hx: grid.hx(),
        hy: grid.hy(),
    };
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, &resolved)?;
    writeln!(f)?;
    Ok(())
}

/// Result of [`run_experiment`]: the summary and the full run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub summary: RunSummary,
    pub output: RunOutput,
}

/// Run one configuration. `reference` overrides `config.reference` with an
/// already computed solution at `T`. Files are written when `out_dir` is given.
pub fn run_experiment(
    config: &ExperimentConfig,
    reference: Option<&DVector<f64>>,
    out_dir: Option<&Path>,
) -> Result<Experiment> {
    config.validate()?;
    let problem = config.problem()?;
    let y0 = initial_condition(problem.grid().expect("grid problem"), config.seed);
    let start = Instant::now();
    let output = run(&problem, &config.solver_config(), &y0)?;
    let wall = start.elapsed().as_secs_f64();
    let computed;
    let reference = match (reference, config.reference.method()) {
        (Some(r), _) => Some(r),
        (None, Some(method)) => {
            computed = reference_solve(&problem, &y0, config.t_final, method)?;
            Some(&computed)
        }
        (None, None) => None,
    };
    let error = reference
        .map(|r| relative_error(&output.y_final, r))
        .transpose()?;
    let summary = summarize(config, &output, error, wall);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        write_steps_csv(File::create(dir.join("steps.csv"))?, &output.records, config.sample_every)?;
        write_summary_csv(File::create(dir.join("summary.csv"))?, &summary)?;
        write_config_json(&dir.join("config.json"), config)?;
    }
    Ok(Experiment { summary, output })
}

/// Run every entry of a sweep concurrently on a shared grid, epsilon, T and
/// seed. The reference (classical unless `base.reference` says otherwise) is
/// computed once. Summaries are returned in entry order.
pub fn sweep(base: &ExperimentConfig, entries: &[SweepEntry], out_dir: Option<&Path>) -> Result<Vec<RunSummary>> {
    let configs: Vec<ExperimentConfig> = entries.iter().map(|e| base.with_overrides(e)).collect();
    for c in &configs {
        c.validate()?;
    }
    let method = base.reference.method().unwrap_or_else(ReferenceMethod::classical);
    let problem = base.problem()?;
    let y0 = initial_condition(problem.grid().expect("grid problem"), base.seed);
    let reference = reference_solve(&problem, &y0, base.t_final, method)?;
    let summaries = configs
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            let dir = out_dir.map(|d| d.join(format!("run_{k:03}")));
            run_experiment(c, Some(&reference), dir.as_deref()).map(|e| e.summary)
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        write_sweep_csv(File::create(dir.join("sweep.csv"))?, &summaries)?;
    }
    Ok(summaries)
}

/// Aggregate table: one row per run with its step parameter, cost and error.
pub fn write_sweep_csv<W: Write>(out: W, summaries: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "scheme", "adaptive", "eyre", "tau0", "tol", "m_max", "matvecs", "error"])?;
    for (k, s) in summaries.iter().enumerate() {
        w.write_record([
            k.to_string(),
            s.scheme.to_string(),
            s.adaptive.to_string(),
            s.eyre.to_string(),
            fmt_f64(s.tau0),
            fmt_f64(s.tol),
            s.m_max.to_string(),
            s.total_matvecs.to_string(),
            fmt_opt(s.error.map(fmt_f64)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_file(path: &Path) -> Result<Vec<SweepEntry>> {
    let text = fs::read_to_string(path)?;
    let entries: Vec<SweepEntry> = serde_json::from_str(&text)?;
    if entries.is_empty() {
        return Err(Error::InvalidParameter("sweep file has no entries".into()));
    }
    Ok(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Lim,
    Ee2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormModeArg {
    Exact,
    Bound,
}

/// Stabilized explicit time integration of the 2D Cahn-Hilliard equation.
#[derive(Debug, Parser)]
#[command(name = "chstab", version)]
pub struct Args {
    #[arg(long, default_value_t = 64)]
    pub nx: usize,
    #[arg(long, default_value_t = 64)]
    pub ny: usize,
    #[arg(long, default_value_t = 64.0)]
    pub lx: f64,
    #[arg(long, default_value_t = 64.0)]
    pub ly: f64,
    /// Final time.
    #[arg(long = "T", default_value_t = 1000.0)]
    pub t_final: f64,
    #[arg(long, value_enum, default_value_t = SchemeArg::Ee2)]
    pub scheme: SchemeArg,
    #[arg(long)]
    pub adaptive: bool,
    /// Use Eyre convex splitting in the linearization.
    #[arg(long)]
    pub eyre: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Initial (adaptive) or constant step size.
    #[arg(long, default_value_t = 0.1)]
    pub tau0: f64,
    /// Krylov dimension limit for EE2.
    #[arg(long, default_value_t = 30)]
    pub mmax: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Interface width in cells of the 64-cell base grid.
    #[arg(long = "eps-m", default_value_t = 4, conflicts_with = "eps_value")]
    pub eps_m: u32,
    /// Explicit epsilon, overriding --eps-m.
    #[arg(long = "eps-value")]
    pub eps_value: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// JSON list of per-run overrides (scheme, adaptive, eyre, tol, tau0, m_max, norm_mode).
    #[arg(long = "sweep-file")]
    pub sweep_file: Option<PathBuf>,
    #[arg(long = "sample-every", default_value_t = 1)]
    pub sample_every: usize,
    #[arg(long = "norm-mode", value_enum, default_value_t = NormModeArg::Exact)]
    pub norm_mode: NormModeArg,
    /// Reference solver for the final-time error.
    #[arg(long, value_enum, default_value_t = ReferenceChoice::None)]
    pub reference: ReferenceChoice,
    /// Apply the LIM controller without its factor-2 growth limit.
    #[arg(long = "no-growth-cap")]
    pub no_growth_cap: bool,
}

impl Args {
    pub fn to_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            nx: self.nx,
            ny: self.ny,
            lx: self.lx,
            ly: self.ly,
            eps: match self.eps_value {
                Some(value) => EpsMode::Explicit { value },
                None => EpsMode::Formula {
                    m: self.eps_m,
                    base_cells: EPS_BASE_CELLS,
                },
            },
            t_final: self.t_final,
            scheme: match self.scheme {
                SchemeArg::Lim => Scheme::Lim,
                SchemeArg::Ee2 => Scheme::Ee2,
            },
            adaptive: self.adaptive,
            eyre: self.eyre,
            tol: self.tol,
            tau0: self.tau0,
            m_max: self.mmax,
            norm_mode: match self.norm_mode {
                NormModeArg::Exact => NormMode::ExactProduct,
                NormModeArg::Bound => NormMode::UpperBound,
            },
            lim_growth_cap: if self.no_growth_cap { None } else { Some(2.0) },
            seed: self.seed,
            sample_every: self.sample_every,
            reference: self.reference,
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_config_error() || matches!(e, Error::Json(_)) {
        EXIT_CONFIG
    } else if e.is_solver_failure() {
        EXIT_SOLVER
    } else {
        EXIT_IO
    }
}

/// Execute parsed arguments, reporting to stderr; returns the process exit code.
pub fn execute(args: &Args) -> i32 {
    let config = args.to_config();
    let result = match &args.sweep_file {
        Some(path) => read_sweep_file(path).and_then(|entries| {
            let summaries = sweep(&config, &entries, Some(&args.out))?;
            eprintln!("sweep: {} runs written to {}", summaries.len(), args.out.display());
            Ok(())
        }),
        None => run_experiment(&config, None, Some(&args.out)).map(|e| {
            let s = &e.summary;
            eprintln!(
                "{} steps to t = {}, {} matvecs ({} for estimates)",
                s.steps, s.final_t, s.total_matvecs, s.pc_matvecs
            );
        }),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
