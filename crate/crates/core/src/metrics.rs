//! Extraction quality and solver timing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::median;
use crate::solver::Backend;

/// Reported value for a perfect reconstruction.
pub const SI_SDR_CAP_DB: f64 = 300.0;

/// Scale-invariant SDR in dB, clamped to `[-300, 300]`.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::invalid(format!("estimate has {} samples, reference {}", estimate.len(), reference.len())));
    }
    let rr: f64 = reference.iter().map(|r| r * r).sum();
    if !(rr > 0.0) {
        return Err(Error::invalid("reference signal is zero"));
    }
    let alpha = estimate.iter().zip(reference).map(|(s, r)| s * r).sum::<f64>() / rr;
    let (mut num, mut den) = (0.0, 0.0);
    for (s, r) in estimate.iter().zip(reference) {
        let t = alpha * r;
        num += t * t;
        den += (s - t) * (s - t);
    }
    let db = if den == 0.0 { SI_SDR_CAP_DB } else { 10.0 * (num / den).log10() };
    Ok(db.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// Mean SI-SDR over channels.
pub fn si_sdr_multichannel(estimate: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    if estimate.len() != reference.len() || estimate.is_empty() {
        return Err(Error::invalid("channel counts differ"));
    }
    let sum = estimate.iter().zip(reference).map(|(e, r)| si_sdr(e, r)).sum::<Result<f64>>()?;
    Ok(sum / estimate.len() as f64)
}

/// Timing of one backend on one problem shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub backend: Backend,
    pub mics: usize,
    pub bins: usize,
    pub frames: usize,
    /// Leading samples excluded from statistics.
    pub warmup: usize,
    /// EM iterations per timed sample.
    pub reps: usize,
    /// Seconds per iteration, one entry per sample.
    pub iter_seconds: Vec<f64>,
    pub total_seconds: f64,
    /// Objective before the first sample and after each one (may be empty).
    pub objective: Vec<f64>,
}

impl BenchRecord {
    pub fn validate(&self) -> Result<()> {
        if self.iter_seconds.len() <= self.warmup || self.iter_seconds.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::invalid(format!("{} record needs positive times beyond the warm-up", self.backend)));
        }
        if !self.objective.is_empty() && self.objective.len() != self.iter_seconds.len() + 1 {
            return Err(Error::invalid("objective trace must have one entry per sample plus the initial value"));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.bins, self.frames, self.mics)
    }

    pub fn measured(&self) -> &[f64] {
        &self.iter_seconds[self.warmup.min(self.iter_seconds.len())..]
    }

    pub fn median_seconds(&self) -> f64 {
        median(self.measured())
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub backend: Backend,
    pub bins: usize,
    pub frames: usize,
    pub mics: usize,
    pub samples: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Speedup of `candidate` over `baseline`: the ratio of their median
/// per-iteration times on one shape. The bounds pair opposite quartiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRatio {
    pub bins: usize,
    pub frames: usize,
    pub mics: usize,
    pub baseline: Backend,
    pub candidate: Backend,
    pub ratio: f64,
    pub ratio_low: f64,
    pub ratio_high: f64,
}

/// Least-squares slope of `log t` against `log M` at fixed `I * J`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub backend: Backend,
    pub slots: usize,
    pub mics: Vec<usize>,
    pub exponent: f64,
    pub intercept: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub timings: Vec<TimingSummary>,
    pub ratios: Vec<SpeedupRatio>,
    pub exponents: Vec<ExponentFit>,
}

/// Slope and intercept of the least-squares line through `(x, y)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub fn fit_exponent(mics: &[usize], seconds: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = mics.iter().map(|&m| (m as f64).ln()).collect();
    let ly: Vec<f64> = seconds.iter().map(|t| t.ln()).collect();
    linear_fit(&lx, &ly)
}

/// Summarizes records. Records of the same backend and shape are pooled, so
/// the result does not depend on record order.
pub fn speedup_report(records: &[BenchRecord]) -> Result<SpeedupReport> {
    let mut pooled: BTreeMap<((usize, usize, usize), Backend), Vec<f64>> = BTreeMap::new();
    for r in records {
        r.validate()?;
        pooled.entry((r.shape(), r.backend)).or_default().extend_from_slice(r.measured());
    }
    let timings: Vec<TimingSummary> = pooled
        .iter()
        .map(|(&((bins, frames, mics), backend), times)| {
            let mut sorted = times.clone();
            sorted.sort_by(f64::total_cmp);
            TimingSummary {
                backend,
                bins,
                frames,
                mics,
                samples: sorted.len(),
                median: median(&sorted),
                q25: quantile(&sorted, 0.25),
                q75: quantile(&sorted, 0.75),
            }
        })
        .collect();

    let mut ratios = Vec::new();
    for (k, base) in timings.iter().enumerate() {
        for cand in &timings[k + 1..] {
            if (base.bins, base.frames, base.mics) != (cand.bins, cand.frames, cand.mics) {
                continue;
            }
            ratios.push(SpeedupRatio {
                bins: base.bins,
                frames: base.frames,
                mics: base.mics,
                baseline: base.backend,
                candidate: cand.backend,
                ratio: base.median / cand.median,
                ratio_low: base.q25 / cand.q75,
                ratio_high: base.q75 / cand.q25,
            });
        }
    }
    if ratios.is_empty() {
        return Err(Error::invalid("no problem shape was timed with two or more backends"));
    }

    let mut sweeps: BTreeMap<(Backend, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for t in &timings {
        sweeps.entry((t.backend, t.bins * t.frames)).or_default().push((t.mics, t.median));
    }
    let exponents = sweeps
        .into_iter()
        .filter(|(_, pts)| pts.len() >= 2)
        .map(|((backend, slots), pts)| {
            let mics: Vec<usize> = pts.iter().map(|p| p.0).collect();
            let secs: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let (exponent, intercept) = fit_exponent(&mics, &secs);
            ExponentFit { backend, slots, mics, exponent, intercept }
        })
        .collect();
    Ok(SpeedupReport { timings, ratios, exponents })
}

impl SpeedupReport {
    pub fn ratio(&self, shape: (usize, usize, usize), baseline: Backend, candidate: Backend) -> Option<f64> {
        self.ratios.iter().find_map(|r| {
            let same = (r.bins, r.frames, r.mics) == shape;
            if same && r.baseline == baseline && r.candidate == candidate {
                Some(r.ratio)
            } else if same && r.baseline == candidate && r.candidate == baseline {
                Some(1.0 / r.ratio)
            } else {
                None
            }
        })
    }

    pub fn exponent(&self, backend: Backend, slots: usize) -> Option<f64> {
        self.exponents.iter().find(|e| e.backend == backend && e.slots == slots).map(|e| e.exponent)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:>8} {:>4} {:>4} {:>3} {:>12} {:>12} {:>12}\n", "backend", "I", "J", "M", "median [s]", "q25 [s]", "q75 [s]");
        for t in &self.timings {
            s += &format!("{:>8} {:>4} {:>4} {:>3} {:>12.4e} {:>12.4e} {:>12.4e}\n", t.backend, t.bins, t.frames, t.mics, t.median, t.q25, t.q75);
        }
        s += "\n";
        for r in &self.ratios {
            s += &format!(
                "{}x{}x{}: {}/{} = {:.2} (quartile range {:.2}..{:.2})\n",
                r.bins, r.frames, r.mics, r.baseline, r.candidate, r.ratio, r.ratio_low, r.ratio_high
            );
        }
        for e in &self.exponents {
            s += &format!("{} at I*J = {}: time ~ M^{:.2} over M = {:?}\n", e.backend, e.slots, e.exponent, e.mics);
        }
        s
    }

    /// One row per timing summary.
    pub fn csv(&self) -> String {
        let mut s = String::from("backend,bins,frames,mics,samples,median_s,q25_s,q75_s\n");
        for t in &self.timings {
            s += &format!("{},{},{},{},{},{:e},{:e},{:e}\n", t.backend, t.bins, t.frames, t.mics, t.samples, t.median, t.q25, t.q75);
        }
        s
    }
}
