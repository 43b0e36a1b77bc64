//! Per-iteration timing of the EM backends.
//!
//! Construction (including every precomputation) is excluded; only `step`
//! calls are timed. Steps too fast for the clock are grouped into samples of
//! several iterations. Run inside [`with_threads`]`(1, ..)` for algorithmic
//! comparisons.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::BenchRecord;
use crate::model::{map_objective, Hyperparams, RcscmParams};
use crate::solver::{make_backend, Backend, Problem};
use crate::synth::{random_instance, RandomInstance};

/// Reference problem size: 513 bins, 275 frames, 4 microphones.
pub const REFERENCE_SHAPE: (usize, usize, usize) = (513, 275, 4);
/// Bins and frames of the microphone sweep, `I * J = 65536`.
pub const SWEEP_SHAPE: (usize, usize) = (256, 256);
pub const SWEEP_MICS: [usize; 4] = [2, 4, 8, 16];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub warmup: usize,
    pub samples: usize,
    /// Samples shorter than this are lengthened by repeating iterations.
    pub min_sample_seconds: f64,
    pub track_objective: bool,
    pub seed: u64,
    pub hyper: Hyperparams,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { warmup: 3, samples: 10, min_sample_seconds: 5e-3, track_objective: false, seed: 0, hyper: Hyperparams::default() }
    }
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn bench_backend(kind: Backend, problem: Problem<'_>, params0: RcscmParams, config: &BenchConfig) -> Result<BenchRecord> {
    if config.samples == 0 {
        return Err(Error::invalid("benchmark needs at least one measured sample"));
    }
    let start_total = Instant::now();
    let mut backend = make_backend(kind, problem, params0)?;
    let objective_of = |p: &RcscmParams| map_objective(problem.inputs, p, &problem.hyper, problem.x);
    let t0 = Instant::now();
    backend.step()?;
    let first = t0.elapsed().as_secs_f64().max(1e-9);
    let reps = ((config.min_sample_seconds / first).ceil() as usize).clamp(1, 100_000);
    // the trace starts after the calibration step
    let mut objective = Vec::new();
    if config.track_objective {
        objective.push(objective_of(backend.params())?);
    }
    let mut iter_seconds = Vec::with_capacity(config.warmup + config.samples);
    for _ in 0..config.warmup + config.samples {
        let t = Instant::now();
        for _ in 0..reps {
            backend.step()?;
        }
        iter_seconds.push(t.elapsed().as_secs_f64() / reps as f64);
        if config.track_objective {
            objective.push(objective_of(backend.params())?);
        }
    }
    Ok(BenchRecord {
        backend: kind,
        mics: problem.dim(),
        bins: problem.bins(),
        frames: problem.frames(),
        warmup: config.warmup,
        reps,
        iter_seconds,
        total_seconds: start_total.elapsed().as_secs_f64(),
        objective,
    })
}

pub fn bench_instance(kind: Backend, inst: &RandomInstance, config: &BenchConfig) -> Result<BenchRecord> {
    let problem = Problem::new(&inst.inputs, &inst.x, config.hyper)?;
    bench_backend(kind, problem, inst.params0.clone(), config)
}

/// All backends on the reference shape.
pub fn bench_reference_shape(backends: &[Backend], config: &BenchConfig) -> Result<Vec<BenchRecord>> {
    let (ib, jb, m) = REFERENCE_SHAPE;
    let inst = random_instance(config.seed, ib, jb, m)?;
    backends.iter().map(|&b| bench_instance(b, &inst, config)).collect()
}

/// All backends over a microphone sweep at fixed `I * J`.
pub fn bench_mic_sweep(backends: &[Backend], mics: &[usize], config: &BenchConfig) -> Result<Vec<BenchRecord>> {
    let (ib, jb) = SWEEP_SHAPE;
    let mut out = Vec::new();
    for &m in mics {
        let inst = random_instance(config.seed, ib, jb, m)?;
        for &b in backends {
            out.push(bench_instance(b, &inst, config)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_shape_and_repetition() {
        let inst = random_instance(0, 4, 8, 2).unwrap();
        let config = BenchConfig { warmup: 1, samples: 3, track_objective: true, ..BenchConfig::default() };
        let r = bench_instance(Backend::Accel2, &inst, &config).unwrap();
        assert_eq!(r.iter_seconds.len(), 4);
        assert_eq!(r.objective.len(), 5);
        assert!(r.reps > 1, "a tiny problem should be repeated");
        r.validate().unwrap();
    }

    #[test]
    fn thread_pool_is_applied() {
        assert_eq!(with_threads(1, rayon::current_num_threads).unwrap(), 1);
        assert_eq!(with_threads(3, rayon::current_num_threads).unwrap(), 3);
    }
}
