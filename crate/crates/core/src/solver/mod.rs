//! EM backends for the rank-constrained model.
//!
//! All three backends compute the same parameter sequence; they differ only in
//! how the inverse of the observation covariance is evaluated:
//!
//! | backend  | per-iteration cost     |
//! |----------|------------------------|
//! | `naive`  | `O(I J M^3)`           |
//! | `accel1` | `O(I M^3 + I J M^2)`   |
//! | `accel2` | `O(I J)`               |

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{map_objective, Hyperparams, RcscmInputs, RcscmParams};
use crate::stft::ComplexSpectrogram;

pub mod accel;
pub mod naive;

pub use accel::{Accel1Backend, Accel2Backend, SolverScratch};
pub use naive::{e_step, m_step, NaiveBackend, SufficientStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Naive,
    Accel1,
    Accel2,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::Naive, Backend::Accel1, Backend::Accel2];

    pub fn name(self) -> &'static str {
        match self {
            Backend::Naive => "naive",
            Backend::Accel1 => "accel1",
            Backend::Accel2 => "accel2",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Backend::Naive),
            "accel1" => Ok(Backend::Accel1),
            "accel2" => Ok(Backend::Accel2),
            other => Err(Error::invalid(format!("unknown backend `{other}` (expected naive, accel1 or accel2)"))),
        }
    }
}

/// Everything a backend reads but never modifies.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub inputs: &'a RcscmInputs,
    pub x: &'a ComplexSpectrogram,
    pub hyper: Hyperparams,
}

impl<'a> Problem<'a> {
    pub fn new(inputs: &'a RcscmInputs, x: &'a ComplexSpectrogram, hyper: Hyperparams) -> Result<Self> {
        inputs.check_shape(x)?;
        Ok(Problem { inputs, x, hyper })
    }

    pub fn bins(&self) -> usize {
        self.x.freq_bins()
    }

    pub fn frames(&self) -> usize {
        self.x.frames()
    }

    pub fn dim(&self) -> usize {
        self.x.channels()
    }

    fn check_params(&self, p: &RcscmParams) -> Result<()> {
        if p.bins != self.bins() || p.frames != self.frames() {
            return Err(Error::invalid(format!(
                "parameters of shape {}x{} do not match observation {}x{}",
                p.bins,
                p.frames,
                self.bins(),
                self.frames()
            )));
        }
        if p.would_floor() {
            return Err(Error::invalid("initial parameters must be at or above the variance floor"));
        }
        Ok(())
    }
}

/// Counters for events the update rules absorb silently.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Number of `lambda_i` updates that hit the variance floor.
    pub lambda_floored: usize,
}

/// One EM iteration engine.
pub trait EmBackend {
    fn kind(&self) -> Backend;
    fn params(&self) -> &RcscmParams;
    fn step(&mut self) -> Result<()>;
    fn diagnostics(&self) -> &Diagnostics;
}

pub fn make_backend<'a>(kind: Backend, problem: Problem<'a>, params0: RcscmParams) -> Result<Box<dyn EmBackend + 'a>> {
    Ok(match kind {
        Backend::Naive => Box::new(NaiveBackend::new(problem, params0)?),
        Backend::Accel1 => Box::new(Accel1Backend::new(problem, params0)?),
        Backend::Accel2 => Box::new(Accel2Backend::new(problem, params0)?),
    })
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub iters: usize,
    /// Evaluate the MAP objective before the first and after every iteration (untimed).
    pub track_objective: bool,
    /// Keep a copy of the parameters after every iteration.
    pub record_trajectory: bool,
    /// Stop early once the relative objective change falls below this value.
    pub rel_tol: Option<f64>,
}

impl RunOptions {
    pub fn iters(iters: usize) -> Self {
        RunOptions { iters, track_objective: true, record_trajectory: false, rel_tol: None }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub backend: Backend,
    pub params: RcscmParams,
    /// Objective before iterating and after each iteration (empty when not tracked).
    pub objective: Vec<f64>,
    /// Wall time of each `step`, in seconds.
    pub iter_seconds: Vec<f64>,
    /// Parameters after each iteration (empty unless recorded).
    pub trajectory: Vec<RcscmParams>,
    pub diagnostics: Diagnostics,
}

impl RunOutput {
    pub fn trace_records(&self) -> Vec<TraceRecord> {
        let n = self.iter_seconds.len();
        (0..=n)
            .map(|k| TraceRecord {
                backend: self.backend,
                iteration: k,
                objective: self.objective.get(k).copied(),
                seconds: if k == 0 { 0.0 } else { self.iter_seconds[k - 1] },
            })
            .collect()
    }
}

/// One line of the line-delimited JSON trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub backend: Backend,
    pub iteration: usize,
    pub objective: Option<f64>,
    pub seconds: f64,
}

pub fn run_backend(backend: &mut dyn EmBackend, problem: &Problem<'_>, opts: &RunOptions) -> Result<RunOutput> {
    let objective_of = |p: &RcscmParams| map_objective(problem.inputs, p, &problem.hyper, problem.x);
    let mut objective = Vec::new();
    if opts.track_objective {
        objective.push(objective_of(backend.params())?);
    }
    let mut iter_seconds = Vec::with_capacity(opts.iters);
    let mut trajectory = Vec::new();
    for _ in 0..opts.iters {
        let start = Instant::now();
        backend.step()?;
        iter_seconds.push(start.elapsed().as_secs_f64());
        if opts.record_trajectory {
            trajectory.push(backend.params().clone());
        }
        if opts.track_objective {
            let value = objective_of(backend.params())?;
            let prev = *objective.last().expect("initial objective");
            objective.push(value);
            if let Some(tol) = opts.rel_tol {
                if (value - prev).abs() <= tol * prev.abs() {
                    break;
                }
            }
        }
    }
    Ok(RunOutput {
        backend: backend.kind(),
        params: backend.params().clone(),
        objective,
        iter_seconds,
        trajectory,
        diagnostics: backend.diagnostics().clone(),
    })
}

pub fn run(kind: Backend, problem: Problem<'_>, params0: RcscmParams, opts: &RunOptions) -> Result<RunOutput> {
    let mut backend = make_backend(kind, problem, params0)?;
    run_backend(backend.as_mut(), &problem, opts)
}

fn run_fixed(
    kind: Backend,
    inputs: &RcscmInputs,
    params0: RcscmParams,
    hyper: Hyperparams,
    x: &ComplexSpectrogram,
    iters: usize,
) -> Result<RunOutput> {
    run(kind, Problem::new(inputs, x, hyper)?, params0, &RunOptions::iters(iters))
}

/// Reference EM with explicit per-slot inversions.
pub fn run_naive(
    inputs: &RcscmInputs,
    params0: RcscmParams,
    hyper: Hyperparams,
    x: &ComplexSpectrogram,
    iters: usize,
) -> Result<RunOutput> {
    run_fixed(Backend::Naive, inputs, params0, hyper, x, iters)
}

/// Sherman-Morrison accelerated EM.
pub fn run_algorithm1(
    inputs: &RcscmInputs,
    params0: RcscmParams,
    hyper: Hyperparams,
    x: &ComplexSpectrogram,
    iters: usize,
) -> Result<RunOutput> {
    run_fixed(Backend::Accel1, inputs, params0, hyper, x, iters)
}

/// Scalar-only EM using the precomputed pseudoinverse of `R'`.
pub fn run_algorithm2(
    inputs: &RcscmInputs,
    params0: RcscmParams,
    hyper: Hyperparams,
    x: &ComplexSpectrogram,
    iters: usize,
) -> Result<RunOutput> {
    run_fixed(Backend::Accel2, inputs, params0, hyper, x, iters)
}
