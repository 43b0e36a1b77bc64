//! Reference backend: the E-step and M-step evaluated literally, with one
//! explicit `M x M` inversion of the observation covariance per slot.

use rayon::prelude::*;

use super::{Backend, Diagnostics, EmBackend, Problem};
use crate::error::{Error, Result};
use crate::linalg::{kernels, CMatrix, HermitianMatrix, C64};
use crate::model::{Hyperparams, RcscmInputs, RcscmParams, EPS_VAR};
use crate::numeric::pairwise_sum;
use crate::stft::ComplexSpectrogram;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Posterior second moments: `hat_r_h` per slot and `hat_r_u` per slot.
#[derive(Clone, Debug)]
pub struct SufficientStats {
    pub bins: usize,
    pub frames: usize,
    pub hat_r_h: Vec<f64>,
    pub hat_r_u: Vec<HermitianMatrix>,
}

/// Statistics of one frequency bin, `hat_r_u` stored as `J` row-major blocks.
pub(crate) struct BinStats {
    pub hat_r_h: Vec<f64>,
    pub hat_r_u: Vec<C64>,
}

pub(crate) fn e_step_bin(
    inputs: &RcscmInputs,
    x: &ComplexSpectrogram,
    i: usize,
    r_h: &[f64],
    r_u: &[f64],
    lambda: f64,
) -> Result<BinStats> {
    let m = x.channels();
    let mm = m * m;
    let jb = x.frames();
    let a = &inputs.a[i];
    let noise = inputs.noise_scm(i, lambda);
    let noise = noise.as_slice();

    let mut rx = vec![ZERO; mm];
    let mut rx_inv = vec![ZERO; mm];
    let mut work = vec![ZERO; mm];
    let mut g = vec![ZERO; mm];
    let mut c = vec![ZERO; mm];
    let mut v = vec![ZERO; m];
    let mut hat_r_h = vec![0.0; jb];
    let mut hat_r_u = vec![ZERO; jb * mm];

    for j in 0..jb {
        let (rh, ru) = (r_h[j], r_u[j]);
        let xj = x.slot(i, j);
        for (d, s) in rx.iter_mut().zip(noise) {
            *d = s * ru;
        }
        kernels::add_outer(&mut rx, a, rh);
        if !kernels::hpd_inverse_into(&rx, m, &mut rx_inv, &mut work) {
            return Err(Error::numerical(format!("slot ({i}, {j})"), "singular observation covariance"));
        }
        let q_aa = kernels::quad_form_real(a, &rx_inv, m);
        let q_xa = kernels::quad_form(xj, &rx_inv, a, m);
        hat_r_h[j] = rh - rh * rh * q_aa + (q_xa * rh).norm_sqr();

        // G = R_u Rx^{-1}, C = G R_u, v = G x
        kernels::matmul_into(noise, &rx_inv, m, &mut g);
        kernels::matmul_into(&g, noise, m, &mut c);
        kernels::matvec_into(&g, xj, m, &mut v);
        let out = &mut hat_r_u[j * mm..(j + 1) * mm];
        let ru2 = ru * ru;
        for p in 0..m {
            for q in 0..m {
                out[p * m + q] = noise[p * m + q] * ru - c[p * m + q] * ru2 + v[p] * v[q].conj() * ru2;
            }
        }
    }
    Ok(BinStats { hat_r_h, hat_r_u })
}

/// Applies the M-step to one bin, writing new `r_h`, `r_u` and returning the new
/// `lambda` together with whether it was floored.
#[allow(clippy::too_many_arguments)]
pub(crate) fn m_step_bin(
    inputs: &RcscmInputs,
    i: usize,
    stats: &BinStats,
    r_u_old: &[f64],
    hyper: &Hyperparams,
    r_h_out: &mut [f64],
    r_u_out: &mut [f64],
) -> Result<(f64, bool)> {
    let m = inputs.dim();
    let mm = m * m;
    let jb = r_u_old.len();
    for (out, hat) in r_h_out.iter_mut().zip(&stats.hat_r_h) {
        *out = ((hat + hyper.beta) / (hyper.alpha + 2.0)).max(EPS_VAR);
    }

    let b = &inputs.b[i];
    let terms: Vec<f64> = (0..jb)
        .map(|j| kernels::quad_form_real(b, &stats.hat_r_u[j * mm..(j + 1) * mm], m) / r_u_old[j])
        .collect();
    let raw = pairwise_sum(&terms) / jb as f64;
    let floored = !(raw >= EPS_VAR);
    let lambda = raw.max(EPS_VAR);

    let noise = inputs.noise_scm(i, lambda);
    let mut inv = vec![ZERO; mm];
    let mut work = vec![ZERO; mm];
    if !kernels::hpd_inverse_into(noise.as_slice(), m, &mut inv, &mut work) {
        return Err(Error::numerical(format!("bin {i}"), "singular noise covariance"));
    }
    for (j, out) in r_u_out.iter_mut().enumerate() {
        let hat = &stats.hat_r_u[j * mm..(j + 1) * mm];
        let mut tr = 0.0;
        for p in 0..m {
            for q in 0..m {
                tr += (inv[p * m + q] * hat[q * m + p]).re;
            }
        }
        *out = (tr / m as f64).max(EPS_VAR);
    }
    Ok((lambda, floored))
}

/// Sufficient statistics for every slot under the current parameters.
pub fn e_step(inputs: &RcscmInputs, params: &RcscmParams, x: &ComplexSpectrogram) -> Result<SufficientStats> {
    inputs.check_shape(x)?;
    let (ib, jb, m) = (x.freq_bins(), x.frames(), x.channels());
    let per_bin = (0..ib)
        .into_par_iter()
        .map(|i| {
            let row = i * jb..(i + 1) * jb;
            e_step_bin(inputs, x, i, &params.r_h[row.clone()], &params.r_u[row], params.lambda[i])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut hat_r_h = Vec::with_capacity(ib * jb);
    let mut hat_r_u = Vec::with_capacity(ib * jb);
    for s in per_bin {
        hat_r_h.extend(s.hat_r_h);
        for block in s.hat_r_u.chunks_exact(m * m) {
            let mat = CMatrix::from_row_major(m, block.to_vec())?;
            hat_r_u.push(HermitianMatrix::symmetrized(mat));
        }
    }
    Ok(SufficientStats { bins: ib, frames: jb, hat_r_h, hat_r_u })
}

/// New parameters from the sufficient statistics. `lambda` is updated before
/// `r_u`, and `r_u` uses the new `lambda`.
pub fn m_step(
    stats: &SufficientStats,
    inputs: &RcscmInputs,
    params_old: &RcscmParams,
    hyper: &Hyperparams,
) -> Result<(RcscmParams, Diagnostics)> {
    let (ib, jb) = (stats.bins, stats.frames);
    let m = inputs.dim();
    let mut out = RcscmParams::filled(ib, jb, 0.0, 0.0, 0.0);
    let mut diag = Diagnostics::default();
    for i in 0..ib {
        let row = i * jb..(i + 1) * jb;
        let mut flat = Vec::with_capacity(jb * m * m);
        for h in &stats.hat_r_u[row.clone()] {
            flat.extend_from_slice(h.as_slice());
        }
        let bin = BinStats { hat_r_h: stats.hat_r_h[row.clone()].to_vec(), hat_r_u: flat };
        let (r_h_out, r_u_out) = (&mut out.r_h[row.clone()], &mut out.r_u[row.clone()]);
        let (lambda, floored) = m_step_bin(inputs, i, &bin, &params_old.r_u[row], hyper, r_h_out, r_u_out)?;
        out.lambda[i] = lambda;
        diag.lambda_floored += usize::from(floored);
    }
    Ok((out, diag))
}

pub struct NaiveBackend<'a> {
    problem: Problem<'a>,
    params: RcscmParams,
    next: RcscmParams,
    diagnostics: Diagnostics,
}

impl<'a> NaiveBackend<'a> {
    pub fn new(problem: Problem<'a>, params0: RcscmParams) -> Result<Self> {
        problem.check_params(&params0)?;
        Ok(NaiveBackend { problem, next: params0.clone(), params: params0, diagnostics: Diagnostics::default() })
    }
}

impl EmBackend for NaiveBackend<'_> {
    fn kind(&self) -> Backend {
        Backend::Naive
    }

    fn params(&self) -> &RcscmParams {
        &self.params
    }

    fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    fn step(&mut self) -> Result<()> {
        let Problem { inputs, x, hyper } = self.problem;
        let jb = x.frames();
        let old = &self.params;
        let next = &mut self.next;
        let floored = next
            .r_h
            .par_chunks_mut(jb)
            .zip(next.r_u.par_chunks_mut(jb))
            .zip(next.lambda.par_iter_mut())
            .enumerate()
            .map(|(i, ((r_h_out, r_u_out), lambda_out))| {
                let row = i * jb..(i + 1) * jb;
                let stats = e_step_bin(inputs, x, i, &old.r_h[row.clone()], &old.r_u[row.clone()], old.lambda[i])?;
                let (lambda, floored) = m_step_bin(inputs, i, &stats, &old.r_u[row], &hyper, r_h_out, r_u_out)?;
                *lambda_out = lambda;
                Ok(usize::from(floored))
            })
            .collect::<Result<Vec<usize>>>()?;
        self.diagnostics.lambda_floored += floored.iter().sum::<usize>();
        std::mem::swap(&mut self.params, &mut self.next);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{ComplexVector, DEFAULT_RANK_TOL};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn scalar_case() -> (RcscmInputs, ComplexSpectrogram) {
        let inputs =
            RcscmInputs::from_parts(0, vec![ComplexVector::new(vec![c(1.0, 0.0)])], vec![HermitianMatrix::zeros(1)], DEFAULT_RANK_TOL)
                .unwrap();
        let x = ComplexSpectrogram::from_values(1, 1, 1, vec![c(3.0, 0.0)]).unwrap();
        (inputs, x)
    }

    #[test]
    fn scalar_e_step_by_hand() {
        let (inputs, x) = scalar_case();
        let params = RcscmParams::filled(1, 1, 1.0, 1.0, 2.0);
        let stats = e_step(&inputs, &params, &x).unwrap();
        // Rx = 1 + 1*2 = 3; hat_r_h = 1 - 1/3 + |3/3|^2
        assert!((stats.hat_r_h[0] - 5.0 / 3.0).abs() < 1e-14);
        // hat_R_u = r_u R_u - r_u^2 R_u^2 / Rx + |r_u R_u x / Rx|^2 = 2 - 4/3 + 4
        assert!((stats.hat_r_u[0].get(0, 0).re - (2.0 - 4.0 / 3.0 + 4.0)).abs() < 1e-13);
    }

    #[test]
    fn zero_target_variance_collapses_posterior() {
        let (inputs, x) = scalar_case();
        let params = RcscmParams { bins: 1, frames: 1, r_h: vec![0.0], r_u: vec![1.0], lambda: vec![2.0] };
        let stats = e_step(&inputs, &params, &x).unwrap();
        assert_eq!(stats.hat_r_h[0], 0.0);
    }

    #[test]
    fn m_step_prior_only_and_identity_trace() {
        let (inputs, _) = scalar_case();
        let hyper = Hyperparams::default();
        let old = RcscmParams::filled(1, 1, 1.0, 1.0, 2.0);
        // hat_R_u equal to R_u with the updated lambda: b^H R_u b / r_u = lambda again.
        let stats = SufficientStats { bins: 1, frames: 1, hat_r_h: vec![0.0], hat_r_u: vec![HermitianMatrix::diag(&[2.0])] };
        let (new, diag) = m_step(&stats, &inputs, &old, &hyper).unwrap();
        // beta / (alpha + 2) is below the variance floor.
        assert_eq!(new.r_h[0], (1e-16_f64 / 3.1).max(EPS_VAR));
        assert!((new.lambda[0] - 2.0).abs() < 1e-15);
        assert!((new.r_u[0] - 1.0).abs() < 1e-15);
        assert_eq!(diag.lambda_floored, 0);
    }

    #[test]
    fn singular_covariance_reports_slot() {
        let (inputs, x) = scalar_case();
        let params = RcscmParams { bins: 1, frames: 1, r_h: vec![0.0], r_u: vec![0.0], lambda: vec![1.0] };
        let err = e_step(&inputs, &params, &x).err().unwrap();
        assert!(matches!(err, Error::Numerical { ref location, .. } if location == "slot (0, 0)"));
    }
}
