//! Accelerated backends.
//!
//! Writing `R_ij^(x) = r_h a a^H + r_u R_u`, the Sherman-Morrison formula turns
//! every quadratic form against `(R_ij^(x))^{-1}` into a scalar expression of
//! `rho_aa = a^H R_u^{-1} a`, `rho_ax = a^H R_u^{-1} x` and
//! `rho_xx = x^H R_u^{-1} x` through the gain
//! `gamma = r_h / (r_u + r_h rho_aa)`. [`Accel1Backend`] evaluates the `rho`s
//! with one inversion of `R_u` per bin. Because `R'` annihilates `b` and
//! `||b|| = 1`, `R_u^{-1} = R'^+ + b b^H / lambda`, so [`Accel2Backend`] splits
//! each `rho` into a constant `tau` (against `R'^+`) plus a `1/lambda` term
//! built from `sigma_ab = a^H b` and `sigma_bx = b^H x`; its iterations touch
//! no vectors or matrices at all.
//!
//! Both keep the tilde snapshot semantics of the update listing: `gamma`,
//! `r_h` and `lambda` are driven by the parameters at the start of the
//! iteration, and `r_u` combines those with `rho`s recomputed under the new
//! `lambda`.

use rayon::prelude::*;

use super::{Backend, Diagnostics, EmBackend, Problem};
use crate::error::{Error, Result};
use crate::linalg::{kernels, C64};
use crate::model::{Hyperparams, RcscmInputs, RcscmParams, EPS_VAR};
use crate::numeric::pairwise_sum;
use crate::stft::ComplexSpectrogram;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Scalars carried between iterations. Per-bin vectors have length `I`,
/// per-slot vectors `I * J` (index `i * J + j`).
#[derive(Clone, Debug, Default)]
pub struct SolverScratch {
    pub bins: usize,
    pub frames: usize,
    pub sigma_ab: Vec<C64>,
    pub sigma_bx: Vec<C64>,
    /// Empty for the first-stage backend.
    pub tau_aa: Vec<f64>,
    pub tau_ax: Vec<C64>,
    pub tau_xx: Vec<f64>,
    pub rho_aa: Vec<f64>,
    pub trho_aa: Vec<f64>,
    pub rho_ax: Vec<C64>,
    pub trho_ax: Vec<C64>,
    pub rho_xx: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl SolverScratch {
    fn sized(bins: usize, frames: usize) -> Self {
        let n = bins * frames;
        SolverScratch {
            bins,
            frames,
            rho_aa: vec![0.0; bins],
            trho_aa: vec![0.0; bins],
            rho_ax: vec![ZERO; n],
            trho_ax: vec![ZERO; n],
            rho_xx: vec![0.0; n],
            gamma: vec![0.0; n],
            ..Default::default()
        }
    }
}

/// `sigma_ab[i] = a_i^H b_i`, `sigma_bx[i*J+j] = b_i^H x_ij`.
pub fn precompute_sigma(inputs: &RcscmInputs, x: &ComplexSpectrogram) -> (Vec<C64>, Vec<C64>) {
    let jb = x.frames();
    let sigma_ab = (0..x.freq_bins()).map(|i| inputs.a[i].dot(&inputs.b[i])).collect();
    let mut sigma_bx = vec![ZERO; x.freq_bins() * jb];
    sigma_bx.par_chunks_mut(jb).enumerate().for_each(|(i, row)| {
        for (j, s) in row.iter_mut().enumerate() {
            *s = inputs.b[i].dot(x.slot(i, j));
        }
    });
    (sigma_ab, sigma_bx)
}

/// Quadratic forms against the fixed pseudoinverse `R'^+`:
/// `tau_aa = a^H R'^+ a`, `tau_ax = a^H R'^+ x`, `tau_xx = x^H R'^+ x`.
pub fn precompute_tau(inputs: &RcscmInputs, x: &ComplexSpectrogram) -> (Vec<f64>, Vec<C64>, Vec<f64>) {
    let (ib, jb, m) = (x.freq_bins(), x.frames(), x.channels());
    let mut tau_aa = vec![0.0; ib];
    let mut tau_ax = vec![ZERO; ib * jb];
    let mut tau_xx = vec![0.0; ib * jb];
    tau_aa
        .par_iter_mut()
        .zip(tau_ax.par_chunks_mut(jb))
        .zip(tau_xx.par_chunks_mut(jb))
        .enumerate()
        .for_each(|(i, ((aa, ax), xx))| {
            let pinv = inputs.r_prime_pinv[i].as_slice();
            // R'^+ is Hermitian, so a^H R'^+ = (R'^+ a)^H.
            let mut u = vec![ZERO; m];
            kernels::matvec_into(pinv, &inputs.a[i], m, &mut u);
            *aa = kernels::dot_h(&inputs.a[i], &u).re.max(0.0);
            for j in 0..jb {
                let xj = x.slot(i, j);
                ax[j] = kernels::dot_h(&u, xj);
                xx[j] = kernels::quad_form_real(xj, pinv, m).max(0.0);
            }
        });
    (tau_aa, tau_ax, tau_xx)
}

#[inline]
fn gamma_row(r_h: &[f64], r_u: &[f64], trho_aa: f64, out: &mut [f64]) {
    for ((g, &rh), &ru) in out.iter_mut().zip(r_h).zip(r_u) {
        *g = rh / (ru + rh * trho_aa);
    }
}

#[inline]
fn rh_row(gamma: &[f64], r_u: &[f64], trho_ax: &[C64], hyper: &Hyperparams, out: &mut [f64]) {
    let denom = 1.0 / (hyper.alpha + 2.0);
    for (((o, &g), &ru), t) in out.iter_mut().zip(gamma).zip(r_u).zip(trho_ax) {
        *o = ((g * (ru + g * t.norm_sqr()) + hyper.beta) * denom).max(EPS_VAR);
    }
}

/// Returns the floored `lambda` and whether the floor was hit.
#[inline]
fn lambda_bin(gamma: &[f64], r_u: &[f64], sigma_ab: C64, sigma_bx: &[C64], trho_ax: &[C64], terms: &mut Vec<f64>) -> (f64, bool) {
    let s2 = sigma_ab.norm_sqr();
    let sc = sigma_ab.conj();
    terms.clear();
    terms.extend(
        gamma
            .iter()
            .zip(r_u)
            .zip(sigma_bx)
            .zip(trho_ax)
            .map(|(((&g, &ru), &sbx), &t)| g * s2 + (sbx - sc * t * g).norm_sqr() / ru),
    );
    let raw = pairwise_sum(terms) / gamma.len() as f64;
    (raw.max(EPS_VAR), !(raw >= EPS_VAR))
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn ru_row(
    gamma: &[f64],
    r_u: &[f64],
    rho_aa: f64,
    rho_ax: &[C64],
    trho_ax: &[C64],
    rho_xx: &[f64],
    m: usize,
    out: &mut [f64],
) {
    let inv_m = 1.0 / m as f64;
    for j in 0..out.len() {
        let (g, ru, t, r) = (gamma[j], r_u[j], trho_ax[j], rho_ax[j]);
        let cross = t.re * r.re + t.im * r.im; // Re[t conj(r)]
        out[j] = ((g * rho_aa * (ru + g * t.norm_sqr()) + rho_xx[j] - 2.0 * g * cross) * inv_m).max(EPS_VAR);
    }
}

/// Scalar expansion of the `rho`s for one bin given `lambda`.
#[inline]
#[allow(clippy::too_many_arguments)]
fn rho2_bin(
    tau_aa: f64,
    tau_ax: &[C64],
    tau_xx: Option<&[f64]>,
    sigma_ab: C64,
    sigma_bx: &[C64],
    lambda: f64,
    rho_ax: &mut [C64],
    rho_xx: Option<&mut [f64]>,
) -> f64 {
    let inv = 1.0 / lambda;
    let sab = sigma_ab * inv;
    for ((r, &t), &s) in rho_ax.iter_mut().zip(tau_ax).zip(sigma_bx) {
        *r = t + sab * s;
    }
    if let (Some(out), Some(txx)) = (rho_xx, tau_xx) {
        for ((r, &t), s) in out.iter_mut().zip(txx).zip(sigma_bx) {
            *r = t + s.norm_sqr() * inv;
        }
    }
    tau_aa + sigma_ab.norm_sqr() * inv
}

/// First-stage `rho`s for one bin, from an explicit inverse of `R' + lambda b b^H`.
fn rho1_bin(
    inputs: &RcscmInputs,
    x: &ComplexSpectrogram,
    i: usize,
    lambda: f64,
    rho_ax: &mut [C64],
    rho_xx: &mut [f64],
) -> Result<f64> {
    let m = x.channels();
    let noise = inputs.noise_scm(i, lambda);
    let mut inv = vec![ZERO; m * m];
    let mut work = vec![ZERO; m * m];
    if !kernels::hpd_inverse_into(noise.as_slice(), m, &mut inv, &mut work) {
        return Err(Error::numerical(format!("bin {i}"), "singular noise covariance"));
    }
    let mut u = vec![ZERO; m];
    kernels::matvec_into(&inv, &inputs.a[i], m, &mut u);
    for j in 0..rho_ax.len() {
        let xj = x.slot(i, j);
        rho_ax[j] = kernels::dot_h(&u, xj);
        rho_xx[j] = kernels::quad_form_real(xj, &inv, m);
    }
    Ok(kernels::dot_h(&inputs.a[i], &u).re)
}

/// `gamma = r_h / (r_u + r_h trho_aa)` for every slot.
pub fn compute_gamma(r_h: &[f64], r_u: &[f64], trho_aa: &[f64], frames: usize) -> Vec<f64> {
    let mut gamma = vec![0.0; r_h.len()];
    for (i, g) in gamma.chunks_mut(frames).enumerate() {
        let row = i * frames..(i + 1) * frames;
        gamma_row(&r_h[row.clone()], &r_u[row], trho_aa[i], g);
    }
    gamma
}

/// `rho`s against `(R'_i + lambda_i b_i b_i^H)^{-1}`, one inversion per bin.
pub fn rho_first_stage(inputs: &RcscmInputs, x: &ComplexSpectrogram, lambda: &[f64]) -> Result<(Vec<f64>, Vec<C64>, Vec<f64>)> {
    let (ib, jb) = (x.freq_bins(), x.frames());
    let mut rho_aa = vec![0.0; ib];
    let mut rho_ax = vec![ZERO; ib * jb];
    let mut rho_xx = vec![0.0; ib * jb];
    for i in 0..ib {
        let row = i * jb..(i + 1) * jb;
        rho_aa[i] = rho1_bin(inputs, x, i, lambda[i], &mut rho_ax[row.clone()], &mut rho_xx[row])?;
    }
    Ok((rho_aa, rho_ax, rho_xx))
}

/// `rho`s from the precomputed `tau` and `sigma` scalars; no matrix work.
pub fn rho_second_stage(scratch: &SolverScratch, lambda: &[f64]) -> (Vec<f64>, Vec<C64>, Vec<f64>) {
    let jb = scratch.frames;
    let mut rho_aa = vec![0.0; scratch.bins];
    let mut rho_ax = vec![ZERO; scratch.bins * jb];
    let mut rho_xx = vec![0.0; scratch.bins * jb];
    for i in 0..scratch.bins {
        let row = i * jb..(i + 1) * jb;
        rho_aa[i] = rho2_bin(
            scratch.tau_aa[i],
            &scratch.tau_ax[row.clone()],
            Some(&scratch.tau_xx[row.clone()]),
            scratch.sigma_ab[i],
            &scratch.sigma_bx[row.clone()],
            lambda[i],
            &mut rho_ax[row.clone()],
            Some(&mut rho_xx[row]),
        );
    }
    (rho_aa, rho_ax, rho_xx)
}

/// `r_h <- (gamma (r_u + gamma |trho_ax|^2) + beta) / (alpha + 2)`
pub fn update_rh(gamma: &[f64], r_u: &[f64], trho_ax: &[C64], hyper: &Hyperparams) -> Vec<f64> {
    let mut out = vec![0.0; gamma.len()];
    rh_row(gamma, r_u, trho_ax, hyper, &mut out);
    out
}

/// `lambda_i <- (1/J) sum_j (gamma |sigma_ab|^2 + |sigma_bx - gamma conj(sigma_ab) trho_ax|^2 / r_u)`.
/// Also returns how many bins hit the floor.
pub fn update_lambda(
    gamma: &[f64],
    r_u: &[f64],
    sigma_ab: &[C64],
    sigma_bx: &[C64],
    trho_ax: &[C64],
    frames: usize,
) -> (Vec<f64>, usize) {
    let mut terms = Vec::with_capacity(frames);
    let mut floored = 0;
    let lambda = (0..sigma_ab.len())
        .map(|i| {
            let row = i * frames..(i + 1) * frames;
            let (l, f) = lambda_bin(&gamma[row.clone()], &r_u[row.clone()], sigma_ab[i], &sigma_bx[row.clone()], &trho_ax[row], &mut terms);
            floored += usize::from(f);
            l
        })
        .collect();
    (lambda, floored)
}

/// `r_u <- (gamma rho_aa (r_u + gamma |trho_ax|^2) + rho_xx - 2 gamma Re[trho_ax conj(rho_ax)]) / M`
#[allow(clippy::too_many_arguments)]
pub fn update_ru(
    gamma: &[f64],
    r_u: &[f64],
    rho_aa: &[f64],
    rho_ax: &[C64],
    trho_ax: &[C64],
    rho_xx: &[f64],
    dim: usize,
    frames: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; gamma.len()];
    for (i, o) in out.chunks_mut(frames).enumerate() {
        let row = i * frames..(i + 1) * frames;
        ru_row(&gamma[row.clone()], &r_u[row.clone()], rho_aa[i], &rho_ax[row.clone()], &trho_ax[row.clone()], &rho_xx[row], dim, o);
    }
    out
}

/// Mutable per-bin views over the parameter and scratch buffers.
struct BinRows<'s> {
    r_h: &'s mut [f64],
    r_u: &'s mut [f64],
    lambda: &'s mut f64,
    gamma: &'s mut [f64],
    trho_ax: &'s mut [C64],
    rho_ax: &'s mut [C64],
    rho_xx: &'s mut [f64],
    trho_aa: &'s mut f64,
    rho_aa: &'s mut f64,
}

fn bin_rows<'s>(params: &'s mut RcscmParams, s: &'s mut SolverScratch) -> Vec<BinRows<'s>> {
    let jb = params.frames;
    params
        .r_h
        .chunks_mut(jb)
        .zip(params.r_u.chunks_mut(jb))
        .zip(params.lambda.iter_mut())
        .zip(s.gamma.chunks_mut(jb))
        .zip(s.trho_ax.chunks_mut(jb))
        .zip(s.rho_ax.chunks_mut(jb))
        .zip(s.rho_xx.chunks_mut(jb))
        .zip(s.trho_aa.iter_mut())
        .zip(s.rho_aa.iter_mut())
        .map(|((((((((r_h, r_u), lambda), gamma), trho_ax), rho_ax), rho_xx), trho_aa), rho_aa)| BinRows {
            r_h,
            r_u,
            lambda,
            gamma,
            trho_ax,
            rho_ax,
            rho_xx,
            trho_aa,
            rho_aa,
        })
        .collect()
}

/// Parameters at the start of an iteration.
#[derive(Clone)]
struct Snapshot {
    r_h: Vec<f64>,
    r_u: Vec<f64>,
    lambda: Vec<f64>,
}

impl Snapshot {
    fn of(p: &RcscmParams) -> Self {
        Snapshot { r_h: p.r_h.clone(), r_u: p.r_u.clone(), lambda: p.lambda.clone() }
    }

    fn refresh(&mut self, p: &RcscmParams) {
        self.r_h.copy_from_slice(&p.r_h);
        self.r_u.copy_from_slice(&p.r_u);
        self.lambda.copy_from_slice(&p.lambda);
    }
}

/// Sherman-Morrison backend: one `M x M` inversion per bin and iteration.
pub struct Accel1Backend<'a> {
    problem: Problem<'a>,
    params: RcscmParams,
    old: Snapshot,
    scratch: SolverScratch,
    diagnostics: Diagnostics,
}

impl<'a> Accel1Backend<'a> {
    pub fn new(problem: Problem<'a>, params0: RcscmParams) -> Result<Self> {
        problem.check_params(&params0)?;
        let (ib, jb) = (problem.bins(), problem.frames());
        let mut scratch = SolverScratch::sized(ib, jb);
        let (sigma_ab, sigma_bx) = precompute_sigma(problem.inputs, problem.x);
        scratch.sigma_ab = sigma_ab;
        scratch.sigma_bx = sigma_bx;
        let (rho_aa, rho_ax, rho_xx) = rho_first_stage(problem.inputs, problem.x, &params0.lambda)?;
        scratch.rho_aa = rho_aa;
        scratch.rho_ax = rho_ax;
        scratch.rho_xx = rho_xx;
        Ok(Accel1Backend { problem, old: Snapshot::of(&params0), params: params0, scratch, diagnostics: Diagnostics::default() })
    }

    pub fn scratch(&self) -> &SolverScratch {
        &self.scratch
    }
}

impl EmBackend for Accel1Backend<'_> {
    fn kind(&self) -> Backend {
        Backend::Accel1
    }

    fn params(&self) -> &RcscmParams {
        &self.params
    }

    fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    fn step(&mut self) -> Result<()> {
        let Problem { inputs, x, hyper } = self.problem;
        let (jb, m) = (x.frames(), x.channels());
        self.old.refresh(&self.params);
        self.scratch.trho_aa.copy_from_slice(&self.scratch.rho_aa);
        self.scratch.trho_ax.copy_from_slice(&self.scratch.rho_ax);
        let old = &self.old;
        let sigma_ab = std::mem::take(&mut self.scratch.sigma_ab);
        let sigma_bx = std::mem::take(&mut self.scratch.sigma_bx);
        let rows = bin_rows(&mut self.params, &mut self.scratch);
        let result = rows
            .into_par_iter()
            .enumerate()
            .map_init(Vec::new, |terms, (i, row)| {
                let span = i * jb..(i + 1) * jb;
                let (rh_t, ru_t) = (&old.r_h[span.clone()], &old.r_u[span.clone()]);
                gamma_row(rh_t, ru_t, *row.trho_aa, row.gamma);
                rh_row(row.gamma, ru_t, row.trho_ax, &hyper, row.r_h);
                let (lambda, floored) = lambda_bin(row.gamma, ru_t, sigma_ab[i], &sigma_bx[span], row.trho_ax, terms);
                *row.lambda = lambda;
                *row.rho_aa = rho1_bin(inputs, x, i, lambda, row.rho_ax, row.rho_xx)?;
                ru_row(row.gamma, ru_t, *row.rho_aa, row.rho_ax, row.trho_ax, row.rho_xx, m, row.r_u);
                Ok(usize::from(floored))
            })
            .collect::<Result<Vec<usize>>>();
        self.scratch.sigma_ab = sigma_ab;
        self.scratch.sigma_bx = sigma_bx;
        self.diagnostics.lambda_floored += result?.iter().sum::<usize>();
        Ok(())
    }
}

/// Scalar-only backend built on the pseudoinverse of `R'`.
pub struct Accel2Backend<'a> {
    problem: Problem<'a>,
    params: RcscmParams,
    old: Snapshot,
    scratch: SolverScratch,
    diagnostics: Diagnostics,
    gamma_fault: f64,
}

impl<'a> Accel2Backend<'a> {
    pub fn new(problem: Problem<'a>, params0: RcscmParams) -> Result<Self> {
        problem.check_params(&params0)?;
        let (ib, jb) = (problem.bins(), problem.frames());
        let mut scratch = SolverScratch::sized(ib, jb);
        let (sigma_ab, sigma_bx) = precompute_sigma(problem.inputs, problem.x);
        let (tau_aa, tau_ax, tau_xx) = precompute_tau(problem.inputs, problem.x);
        scratch.sigma_ab = sigma_ab;
        scratch.sigma_bx = sigma_bx;
        scratch.tau_aa = tau_aa;
        scratch.tau_ax = tau_ax;
        scratch.tau_xx = tau_xx;
        Ok(Accel2Backend {
            problem,
            old: Snapshot::of(&params0),
            params: params0,
            scratch,
            diagnostics: Diagnostics::default(),
            gamma_fault: 1.0,
        })
    }

    /// Scales every `gamma` by `factor`, breaking equivalence on purpose.
    #[doc(hidden)]
    pub fn with_gamma_fault(mut self, factor: f64) -> Self {
        self.gamma_fault = factor;
        self
    }

    pub fn scratch(&self) -> &SolverScratch {
        &self.scratch
    }
}

impl EmBackend for Accel2Backend<'_> {
    fn kind(&self) -> Backend {
        Backend::Accel2
    }

    fn params(&self) -> &RcscmParams {
        &self.params
    }

    fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    fn step(&mut self) -> Result<()> {
        let (hyper, jb, m) = (self.problem.hyper, self.problem.frames(), self.problem.dim());
        let fault = self.gamma_fault;
        self.old.refresh(&self.params);
        let old = &self.old;
        let fixed = SolverScratch {
            sigma_ab: std::mem::take(&mut self.scratch.sigma_ab),
            sigma_bx: std::mem::take(&mut self.scratch.sigma_bx),
            tau_aa: std::mem::take(&mut self.scratch.tau_aa),
            tau_ax: std::mem::take(&mut self.scratch.tau_ax),
            tau_xx: std::mem::take(&mut self.scratch.tau_xx),
            ..Default::default()
        };
        let rows = bin_rows(&mut self.params, &mut self.scratch);
        let floored: usize = rows
            .into_par_iter()
            .enumerate()
            .map_init(Vec::new, |terms, (i, row)| {
                let span = i * jb..(i + 1) * jb;
                let (rh_t, ru_t) = (&old.r_h[span.clone()], &old.r_u[span.clone()]);
                let (tau_ax, sigma_bx) = (&fixed.tau_ax[span.clone()], &fixed.sigma_bx[span.clone()]);
                let (tau_aa, sigma_ab) = (fixed.tau_aa[i], fixed.sigma_ab[i]);
                *row.trho_aa = rho2_bin(tau_aa, tau_ax, None, sigma_ab, sigma_bx, old.lambda[i], row.trho_ax, None);
                gamma_row(rh_t, ru_t, *row.trho_aa, row.gamma);
                if fault != 1.0 {
                    row.gamma.iter_mut().for_each(|g| *g *= fault);
                }
                rh_row(row.gamma, ru_t, row.trho_ax, &hyper, row.r_h);
                let (lambda, floored) = lambda_bin(row.gamma, ru_t, sigma_ab, sigma_bx, row.trho_ax, terms);
                *row.lambda = lambda;
                *row.rho_aa =
                    rho2_bin(tau_aa, tau_ax, Some(&fixed.tau_xx[span]), sigma_ab, sigma_bx, lambda, row.rho_ax, Some(row.rho_xx));
                ru_row(row.gamma, ru_t, *row.rho_aa, row.rho_ax, row.trho_ax, row.rho_xx, m, row.r_u);
                usize::from(floored)
            })
            .sum();
        self.scratch.sigma_ab = fixed.sigma_ab;
        self.scratch.sigma_bx = fixed.sigma_bx;
        self.scratch.tau_aa = fixed.tau_aa;
        self.scratch.tau_ax = fixed.tau_ax;
        self.scratch.tau_xx = fixed.tau_xx;
        self.diagnostics.lambda_floored += floored;
        Ok(())
    }
}
