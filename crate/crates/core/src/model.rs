//! Fixed quantities, free parameters and MAP objective of the rank-constrained
//! noise model `R_i^(u) = R'_i + lambda_i b_i b_i^H`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ilrma::{DemixingSet, NmfModel};
use crate::linalg::{
    hermitian_eig, kernels, null_eigenvector, pseudo_inverse_psd, CMatrix, ComplexVector, HermitianMatrix, C64,
};
use crate::numeric::pairwise_sum;
use crate::stft::ComplexSpectrogram;

/// Lower bound applied to every variance and to `lambda` after each update.
pub const EPS_VAR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Inverse-gamma shape.
    pub alpha: f64,
    /// Inverse-gamma scale.
    pub beta: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams { alpha: 1.1, beta: 1e-16 }
    }
}

impl Hyperparams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(Error::invalid(format!("alpha ({alpha}) and beta ({beta}) must be positive")));
        }
        Ok(Hyperparams { alpha, beta })
    }
}

/// Per-bin quantities held fixed during estimation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcscmInputs {
    /// Index of the separated output treated as the directional target (0-based).
    pub target: usize,
    /// Target steering vectors `a_i`.
    pub a: Vec<ComplexVector>,
    /// Rank-(M-1) noise covariances `R'_i`.
    pub r_prime: Vec<HermitianMatrix>,
    pub r_prime_pinv: Vec<HermitianMatrix>,
    /// Unit null vectors of `R'_i`.
    pub b: Vec<ComplexVector>,
}

impl RcscmInputs {
    /// Derives the null vectors and pseudoinverses from `a` and `R'`.
    pub fn from_parts(target: usize, a: Vec<ComplexVector>, r_prime: Vec<HermitianMatrix>, rank_tol: f64) -> Result<Self> {
        if a.len() != r_prime.len() {
            return Err(Error::invalid("steering vectors and noise covariances differ in bin count"));
        }
        let derived = r_prime
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                let b = null_eigenvector(r, rank_tol).map_err(|e| e.at_bin(i))?;
                let pinv = pseudo_inverse_psd(r, rank_tol).map_err(|e| e.at_bin(i))?;
                Ok((b, pinv))
            })
            .collect::<Result<Vec<_>>>()?;
        let (b, r_prime_pinv) = derived.into_iter().unzip();
        Ok(RcscmInputs { target, a, r_prime, r_prime_pinv, b })
    }

    pub fn bins(&self) -> usize {
        self.a.len()
    }

    pub fn dim(&self) -> usize {
        self.a.first().map_or(0, |a| a.dim())
    }

    /// `R'_i + lambda b_i b_i^H`
    pub fn noise_scm(&self, i: usize, lambda: f64) -> HermitianMatrix {
        self.r_prime[i].plus_outer(&self.b[i], lambda)
    }

    pub fn check_shape(&self, x: &ComplexSpectrogram) -> Result<()> {
        if x.freq_bins() != self.bins() || x.channels() != self.dim() {
            return Err(Error::invalid(format!(
                "observation shape {}x{}x{} does not match model with {} bins and {} channels",
                x.freq_bins(),
                x.frames(),
                x.channels(),
                self.bins(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Free parameters: `r_h` and `r_u` are `I x J` (index `i * J + j`), `lambda` is per bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcscmParams {
    pub bins: usize,
    pub frames: usize,
    pub r_h: Vec<f64>,
    pub r_u: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl RcscmParams {
    pub fn filled(bins: usize, frames: usize, r_h: f64, r_u: f64, lambda: f64) -> Self {
        RcscmParams {
            bins,
            frames,
            r_h: vec![r_h; bins * frames],
            r_u: vec![r_u; bins * frames],
            lambda: vec![lambda; bins],
        }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.frames + j
    }

    pub fn floor(&mut self) {
        for v in self.r_h.iter_mut().chain(self.r_u.iter_mut()).chain(self.lambda.iter_mut()) {
            *v = v.max(EPS_VAR);
        }
    }

    pub fn would_floor(&self) -> bool {
        self.r_h.iter().chain(&self.r_u).chain(&self.lambda).any(|&v| !(v >= EPS_VAR))
    }
}

/// `R'_i = sum_{n != target} (1/J sum_j |w_{i,n}^H x_ij|^2) a_{i,n} a_{i,n}^H`, the
/// back-projected covariance of every non-target output.
pub fn build_noise_scm(
    demix: &DemixingSet,
    x: &ComplexSpectrogram,
    target: usize,
    rank_tol: f64,
) -> Result<RcscmInputs> {
    let m = x.channels();
    if target >= m {
        return Err(Error::invalid(format!("target index {target} out of range for {m} outputs")));
    }
    if demix.bins() != x.freq_bins() || demix.dim() != m {
        return Err(Error::invalid("demixing set does not match the observation shape"));
    }
    let powers: Vec<Vec<f64>> = (0..x.freq_bins()).into_par_iter().map(|i| output_power(demix, x, i)).collect();
    let mut a = Vec::with_capacity(x.freq_bins());
    let mut r_prime = Vec::with_capacity(x.freq_bins());
    for (i, power) in powers.iter().enumerate() {
        let mut acc = CMatrix::zeros(m);
        for (n, &p) in power.iter().enumerate() {
            if n != target {
                kernels::add_outer(acc.as_mut_slice(), &demix.a[i].column(n), p);
            }
        }
        r_prime.push(HermitianMatrix::symmetrized(acc));
        a.push(demix.a[i].column(target));
    }
    RcscmInputs::from_parts(target, a, r_prime, rank_tol)
}

/// Mean power `(1/J) sum_j |w_{i,n}^H x_ij|^2` of every output at bin `i`.
pub fn output_power(demix: &DemixingSet, x: &ComplexSpectrogram, i: usize) -> Vec<f64> {
    let m = x.channels();
    let mut y = vec![C64::new(0.0, 0.0); m];
    let mut acc = vec![0.0; m];
    for j in 0..x.frames() {
        kernels::matvec_into(demix.w[i].as_slice(), x.slot(i, j), m, &mut y);
        for (a, v) in acc.iter_mut().zip(&y) {
            *a += v.norm_sqr();
        }
    }
    acc.iter().map(|a| a / x.frames() as f64).collect()
}

/// Output with the largest total back-projected power.
pub fn select_target_index(demix: &DemixingSet, x: &ComplexSpectrogram) -> usize {
    let m = x.channels();
    let per_bin: Vec<Vec<f64>> = (0..x.freq_bins())
        .into_par_iter()
        .map(|i| {
            let p = output_power(demix, x, i);
            (0..m).map(|n| p[n] * demix.a[i].column(n).norm().powi(2)).collect()
        })
        .collect();
    let totals: Vec<f64> = (0..m).map(|n| per_bin.iter().map(|p| p[n]).sum()).collect();
    (0..m).max_by(|&p, &q| totals[p].total_cmp(&totals[q])).unwrap_or(0)
}

/// Initial parameters from the ILRMA estimates.
pub fn init_params(
    inputs: &RcscmInputs,
    nmf: &NmfModel,
    demix: &DemixingSet,
    x: &ComplexSpectrogram,
    rank_tol: f64,
) -> Result<RcscmParams> {
    inputs.check_shape(x)?;
    let (ib, jb, m) = (x.freq_bins(), x.frames(), x.channels());
    if nmf.bins != ib || nmf.frames != jb || nmf.sources != m {
        return Err(Error::invalid("NMF model does not match the observation shape"));
    }
    let n_h = inputs.target;
    let mut params = RcscmParams::filled(ib, jb, 0.0, 0.0, 0.0);
    params
        .r_h
        .par_chunks_mut(jb)
        .zip(params.r_u.par_chunks_mut(jb))
        .zip(params.lambda.par_iter_mut())
        .enumerate()
        .for_each(|(i, ((r_h, r_u), lambda))| {
            for j in 0..jb {
                r_h[j] = nmf.variance(i, j, n_h).max(EPS_VAR);
                let y = demix.noise_image(i, x.slot(i, j), n_h);
                let q = kernels::quad_form_real(&y, inputs.r_prime_pinv[i].as_slice(), m);
                r_u[j] = (q / m as f64).max(EPS_VAR);
            }
            *lambda = min_nonzero_eigenvalue(&inputs.r_prime[i], rank_tol).max(EPS_VAR);
        });
    Ok(params)
}

/// Smallest eigenvalue above `rank_tol` times the spectral radius.
pub fn min_nonzero_eigenvalue(h: &HermitianMatrix, rank_tol: f64) -> f64 {
    let eig = hermitian_eig(h);
    let scale = eig.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    eig.values.iter().copied().find(|&v| v > rank_tol * scale).unwrap_or(0.0)
}

/// Log posterior (up to the additive prior normalizer):
/// `sum_ij [ -log det(pi R^(x)_ij) - x^H (R^(x)_ij)^{-1} x - (alpha+1) log r_h - beta / r_h ]`.
pub fn map_objective(
    inputs: &RcscmInputs,
    params: &RcscmParams,
    hyper: &Hyperparams,
    x: &ComplexSpectrogram,
) -> Result<f64> {
    inputs.check_shape(x)?;
    let (jb, m) = (x.frames(), x.channels());
    let per_bin = (0..x.freq_bins())
        .into_par_iter()
        .map(|i| {
            let r_u_mat = inputs.noise_scm(i, params.lambda[i]);
            let a = &inputs.a[i];
            let mut rx = vec![C64::new(0.0, 0.0); m * m];
            let mut z = vec![C64::new(0.0, 0.0); m];
            let mut terms = Vec::with_capacity(jb);
            for j in 0..jb {
                let (rh, ru) = (params.r_h[i * jb + j], params.r_u[i * jb + j]);
                for (d, s) in rx.iter_mut().zip(r_u_mat.as_slice()) {
                    *d = s * ru;
                }
                kernels::add_outer(&mut rx, a, rh);
                let log_det_and_quad = gaussian_terms(&mut rx, x.slot(i, j), m, &mut z);
                let Some((log_det, quad)) = log_det_and_quad else {
                    return Err(Error::numerical(format!("slot ({i}, {j})"), "observation covariance is not positive definite"));
                };
                let t = -(m as f64) * PI.ln() - log_det - quad - (hyper.alpha + 1.0) * rh.ln() - hyper.beta / rh;
                if !t.is_finite() {
                    return Err(Error::numerical(format!("slot ({i}, {j})"), "non-finite objective term"));
                }
                terms.push(t);
            }
            Ok(pairwise_sum(&terms))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&per_bin))
}

/// `(log det R, x^H R^{-1} x)` via an in-place Cholesky factorization of `r`.
fn gaussian_terms(r: &mut [C64], x: &[C64], m: usize, z: &mut [C64]) -> Option<(f64, f64)> {
    if !kernels::cholesky_in_place(r, m) {
        return None;
    }
    let mut log_det = 0.0;
    let mut quad = 0.0;
    for p in 0..m {
        let mut s = x[p];
        for k in 0..p {
            s -= r[p * m + k] * z[k];
        }
        let d = r[p * m + p].re;
        z[p] = s / d;
        log_det += 2.0 * d.ln();
        quad += z[p].norm_sqr();
    }
    Some((log_det, quad))
}
