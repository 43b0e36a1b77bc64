//! Backend equivalence suite.
//!
//! Every instance is a seeded [`random_instance`]; the three backends are
//! stepped in lockstep and each accelerated trajectory is compared with the
//! naive one after every iteration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Hyperparams, RcscmParams};
use crate::numeric::rel_diff;
use crate::solver::{make_backend, Accel2Backend, Backend, EmBackend, Problem};
use crate::synth::random_instance;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub bins: Vec<usize>,
    pub frames: Vec<usize>,
    pub mics: Vec<usize>,
    pub seeds: u64,
    pub iters: usize,
    pub tol: f64,
    pub hyper: Hyperparams,
    /// Multiplies the second-stage gain; any value other than 1 must be caught.
    pub gamma_fault: Option<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            bins: vec![8, 64],
            frames: vec![16, 128],
            mics: vec![2, 3, 4, 8],
            seeds: 5,
            iters: 50,
            tol: 1e-8,
            hyper: Hyperparams::default(),
            gamma_fault: None,
        }
    }
}

impl VerifyConfig {
    /// Two-microphone grid for smoke runs.
    pub fn minimal() -> Self {
        VerifyConfig { mics: vec![2], ..Self::default() }
    }

    fn instances(&self) -> Vec<(u64, usize, usize, usize)> {
        let mut out = Vec::new();
        for &ib in &self.bins {
            for &jb in &self.frames {
                for &m in &self.mics {
                    for s in 0..self.seeds {
                        out.push((s, ib, jb, m));
                    }
                }
            }
        }
        out
    }
}

/// Location of the largest disagreement with the naive trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub backend: Backend,
    pub iteration: usize,
    pub parameter: String,
    pub bin: usize,
    /// `None` for the per-bin `lambda`.
    pub frame: Option<usize>,
    pub value: f64,
    pub reference: f64,
    pub rel: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub seed: u64,
    pub bins: usize,
    pub frames: usize,
    pub mics: usize,
    /// Worst divergence of each accelerated backend over all iterations.
    pub worst: Vec<Divergence>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub tol: f64,
    pub iters: usize,
    pub instances: Vec<InstanceReport>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn max_rel(&self) -> f64 {
        self.instances.iter().flat_map(|r| &r.worst).map(|d| d.rel).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &InstanceReport> {
        self.instances.iter().filter(|r| !r.passed)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:>5} {:>4} {:>4} {:>3} {:>8} {:>10} {:>8}\n", "seed", "I", "J", "M", "backend", "max rel", "status");
        for r in &self.instances {
            for d in &r.worst {
                let status = if d.rel <= self.tol { "ok" } else { "FAIL" };
                s += &format!("{:>5} {:>4} {:>4} {:>3} {:>8} {:>10.2e} {:>8}\n", r.seed, r.bins, r.frames, r.mics, d.backend, d.rel, status);
                if d.rel > self.tol {
                    let at = match d.frame {
                        Some(j) => format!("({}, {})", d.bin, j),
                        None => format!("({})", d.bin),
                    };
                    s += &format!(
                        "      first exceeded at iteration {}: {}{} = {:e}, naive {:e}\n",
                        d.iteration, d.parameter, at, d.value, d.reference
                    );
                }
            }
        }
        s
    }
}

fn worst_in(backend: Backend, iteration: usize, p: &RcscmParams, reference: &RcscmParams) -> Divergence {
    let mut worst = Divergence {
        backend,
        iteration,
        parameter: "r_h".into(),
        bin: 0,
        frame: Some(0),
        value: p.r_h[0],
        reference: reference.r_h[0],
        rel: -1.0,
    };
    let mut consider = |name: &str, values: &[f64], refs: &[f64], per_slot: bool| {
        for (k, (&v, &r)) in values.iter().zip(refs).enumerate() {
            let rel = rel_diff(v, r);
            if rel > worst.rel || rel.is_nan() {
                let (bin, frame) = if per_slot { (k / p.frames, Some(k % p.frames)) } else { (k, None) };
                worst = Divergence { backend, iteration, parameter: name.into(), bin, frame, value: v, reference: r, rel: if rel.is_nan() { f64::INFINITY } else { rel } };
            }
        }
    };
    consider("r_h", &p.r_h, &reference.r_h, true);
    consider("r_u", &p.r_u, &reference.r_u, true);
    consider("lambda", &p.lambda, &reference.lambda, false);
    worst
}

/// Runs one instance. Keeps, per backend, the first iteration that exceeds
/// `tol`, or the overall worst one when none does.
pub fn verify_instance(config: &VerifyConfig, seed: u64, bins: usize, frames: usize, mics: usize) -> Result<InstanceReport> {
    let inst = random_instance(seed, bins, frames, mics)?;
    let problem = Problem::new(&inst.inputs, &inst.x, config.hyper)?;
    let mut naive = make_backend(Backend::Naive, problem, inst.params0.clone())?;
    let accel2 = Accel2Backend::new(problem, inst.params0.clone())?;
    let accel2 = match config.gamma_fault {
        Some(f) => accel2.with_gamma_fault(f),
        None => accel2,
    };
    let mut others: Vec<Box<dyn EmBackend + '_>> = vec![make_backend(Backend::Accel1, problem, inst.params0.clone())?, Box::new(accel2)];
    let mut worst: Vec<Option<Divergence>> = vec![None; others.len()];
    for it in 1..=config.iters {
        naive.step()?;
        for (b, w) in others.iter_mut().zip(worst.iter_mut()) {
            b.step()?;
            let d = worst_in(b.kind(), it, b.params(), naive.params());
            let keep = match w {
                None => true,
                Some(prev) => prev.rel <= config.tol && d.rel > prev.rel,
            };
            if keep {
                *w = Some(d);
            }
        }
    }
    let worst: Vec<Divergence> = worst.into_iter().flatten().collect();
    let passed = worst.iter().all(|d| d.rel <= config.tol);
    Ok(InstanceReport { seed, bins, frames, mics, worst, passed })
}

pub fn run_verify(config: &VerifyConfig) -> Result<VerifyReport> {
    let instances = config
        .instances()
        .into_par_iter()
        .map(|(s, ib, jb, m)| verify_instance(config, s, ib, jb, m))
        .collect::<Result<Vec<_>>>()?;
    let passed = instances.iter().all(|r| r.passed);
    Ok(VerifyReport { tol: config.tol, iters: config.iters, instances, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_instance_passes() {
        let config = VerifyConfig { iters: 10, ..VerifyConfig::default() };
        let r = verify_instance(&config, 0, 4, 8, 3).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.worst.len(), 2);
    }

    #[test]
    fn corrupted_gain_is_located() {
        let config = VerifyConfig { iters: 5, gamma_fault: Some(1.01), ..VerifyConfig::default() };
        let r = verify_instance(&config, 1, 4, 8, 2).unwrap();
        assert!(!r.passed);
        let bad = r.worst.iter().find(|d| d.backend == Backend::Accel2).unwrap();
        assert!(bad.rel > config.tol);
        assert_eq!(bad.iteration, 1);
        let good = r.worst.iter().find(|d| d.backend == Backend::Accel1).unwrap();
        assert!(good.rel <= config.tol);
    }
}
