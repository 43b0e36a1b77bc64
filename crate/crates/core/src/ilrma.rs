//! Gaussian ILRMA: per-frequency demixing by iterative projection, with a
//! per-source NMF variance model shared across frequency.
//!
//! The cost minimized is
//! `sum_{n,i,j} [ |w_{i,n}^H x_ij|^2 / r_ijn + log r_ijn ] - 2 J sum_i log|det W_i|`
//! with `r_ijn = sum_k t_ikn v_kjn`. Both the square-root multiplicative NMF
//! updates and the iterative-projection updates are majorize-minimize steps, so
//! the cost is non-increasing per iteration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eig, kernels, CMatrix, ComplexVector, HermitianMatrix, C64};
use crate::stft::ComplexSpectrogram;

/// Floor applied to NMF factors so no basis collapses to exactly zero.
const NMF_FLOOR: f64 = 1e-100;

/// Per-frequency demixing matrices (rows `w_{i,n}^H`) and their inverses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemixingSet {
    pub w: Vec<CMatrix>,
    pub a: Vec<CMatrix>,
}

impl DemixingSet {
    pub fn from_demixing(w: Vec<CMatrix>) -> Result<Self> {
        let a = w
            .iter()
            .enumerate()
            .map(|(i, wi)| wi.inverse().map_err(|e| e.at_bin(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(DemixingSet { w, a })
    }

    pub fn identity(bins: usize, dim: usize) -> Self {
        DemixingSet {
            w: vec![CMatrix::identity(dim); bins],
            a: vec![CMatrix::identity(dim); bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.w.len()
    }

    pub fn dim(&self) -> usize {
        self.w.first().map_or(0, CMatrix::dim)
    }

    /// Back-projected noise image of slot `x` at bin `i`: every separated output
    /// except `target` mapped back to the microphones.
    pub fn noise_image(&self, i: usize, x: &[C64], target: usize) -> ComplexVector {
        let mut y = self.w[i].mul_vec(x);
        y[target] = C64::new(0.0, 0.0);
        self.a[i].mul_vec(&y)
    }

    /// Maximum of `||W_i A_i - I||_F` over bins.
    pub fn inverse_residual(&self) -> f64 {
        self.w
            .iter()
            .zip(&self.a)
            .map(|(w, a)| w.mul(a).sub(&CMatrix::identity(w.dim())).frobenius_norm())
            .fold(0.0, f64::max)
    }
}

/// NMF factors per source: `t` is `I x K` and `v` is `K x J` for each source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmfModel {
    pub bins: usize,
    pub bases: usize,
    pub frames: usize,
    pub sources: usize,
    /// `t[n][i * K + k]`
    pub t: Vec<Vec<f64>>,
    /// `v[n][k * J + j]`
    pub v: Vec<Vec<f64>>,
}

impl NmfModel {
    pub fn random(bins: usize, bases: usize, frames: usize, sources: usize, rng: &mut impl Rng) -> Self {
        // Uniform on (0.1, 1.0].
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| 1.0 - 0.9 * rng.random::<f64>()).collect() };
        let t = (0..sources).map(|_| draw(bins * bases)).collect();
        let v = (0..sources).map(|_| draw(bases * frames)).collect();
        NmfModel { bins, bases, frames, sources, t, v }
    }

    pub fn t(&self, i: usize, k: usize, n: usize) -> f64 {
        self.t[n][i * self.bases + k]
    }

    pub fn v(&self, k: usize, j: usize, n: usize) -> f64 {
        self.v[n][k * self.frames + j]
    }

    /// Modeled variance `sum_k t_ikn v_kjn`.
    pub fn variance(&self, i: usize, j: usize, n: usize) -> f64 {
        let t = &self.t[n][i * self.bases..(i + 1) * self.bases];
        t.iter().enumerate().map(|(k, tk)| tk * self.v[n][k * self.frames + j]).sum()
    }

    fn source_variances(&self, n: usize) -> Vec<f64> {
        let mut r = vec![0.0; self.bins * self.frames];
        for i in 0..self.bins {
            for j in 0..self.frames {
                r[i * self.frames + j] = self.variance(i, j, n);
            }
        }
        r
    }

    /// Square-root multiplicative updates of `T` then `V` for source `n`
    /// against the power spectrogram `p` (`I x J`).
    fn update_source(&mut self, n: usize, p: &[f64]) {
        let (ib, kb, jb) = (self.bins, self.bases, self.frames);
        let mut r = self.source_variances(n);
        let mut num = vec![0.0; jb];
        let mut den = vec![0.0; jb];
        let refresh = |num: &mut [f64], den: &mut [f64], r: &[f64], row: usize| {
            for j in 0..jb {
                let rv = r[row * jb + j];
                num[j] = p[row * jb + j] / (rv * rv);
                den[j] = 1.0 / rv;
            }
        };
        for i in 0..ib {
            refresh(&mut num, &mut den, &r, i);
            for k in 0..kb {
                let v = &self.v[n][k * jb..(k + 1) * jb];
                let a: f64 = v.iter().zip(&num).map(|(x, y)| x * y).sum();
                let b: f64 = v.iter().zip(&den).map(|(x, y)| x * y).sum();
                let t = &mut self.t[n][i * kb + k];
                *t = (*t * (a / b).sqrt()).max(NMF_FLOOR);
            }
        }
        r = self.source_variances(n);
        let mut a = vec![0.0; kb * jb];
        let mut b = vec![0.0; kb * jb];
        for i in 0..ib {
            refresh(&mut num, &mut den, &r, i);
            for k in 0..kb {
                let t = self.t[n][i * kb + k];
                for j in 0..jb {
                    a[k * jb + j] += t * num[j];
                    b[k * jb + j] += t * den[j];
                }
            }
        }
        for (v, (x, y)) in self.v[n].iter_mut().zip(a.iter().zip(&b)) {
            *v = (*v * (x / y).sqrt()).max(NMF_FLOOR);
        }
    }
}

/// Per-frequency PCA whitening. Returns the whitened spectrogram and the
/// whitening matrices `Q_i` with `y_ij = Q_i x_ij`.
pub fn sphere(x: &ComplexSpectrogram) -> Result<(ComplexSpectrogram, Vec<CMatrix>)> {
    let (ib, jb, m) = (x.freq_bins(), x.frames(), x.channels());
    if jb <= m {
        return Err(Error::invalid(format!("sphering needs more frames ({jb}) than channels ({m})")));
    }
    let mut out = x.clone();
    let qs: Vec<CMatrix> = out
        .bins_mut()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|bin| {
            let cov = sample_covariance(bin, m);
            let trace = cov.trace();
            if !(trace > 0.0) {
                return CMatrix::identity(m);
            }
            let cov = cov.plus_outer_identity(1e-10 * trace / m as f64);
            let eig = hermitian_eig(&cov);
            let q = CMatrix::from_fn(m, |p, r| eig.vectors[p][r].conj() / eig.values[p].sqrt());
            let mut y = vec![C64::new(0.0, 0.0); m];
            for slot in bin.chunks_exact_mut(m) {
                kernels::matvec_into(q.as_slice(), slot, m, &mut y);
                slot.copy_from_slice(&y);
            }
            q
        })
        .collect();
    debug_assert_eq!(qs.len(), ib);
    Ok((out, qs))
}

/// `(1/J) sum_j x_j x_j^H` over the `J * M` values of one frequency bin.
pub fn sample_covariance(bin: &[C64], m: usize) -> HermitianMatrix {
    let mut acc = CMatrix::zeros(m);
    let frames = bin.len() / m;
    for slot in bin.chunks_exact(m) {
        kernels::add_outer(acc.as_mut_slice(), slot, 1.0);
    }
    for z in acc.as_mut_slice() {
        *z /= frames as f64;
    }
    HermitianMatrix::symmetrized(acc)
}

trait DiagonalLoad {
    fn plus_outer_identity(&self, load: f64) -> Self;
}

impl DiagonalLoad for HermitianMatrix {
    fn plus_outer_identity(&self, load: f64) -> Self {
        self.add(&HermitianMatrix::identity(self.dim()).scaled(load))
    }
}

#[derive(Clone, Debug)]
pub struct IlrmaOutput {
    pub demixing: DemixingSet,
    pub nmf: NmfModel,
    /// Cost before the first iteration and after each iteration.
    pub cost_trace: Vec<f64>,
}

/// Runs ILRMA on `x` as given (no sphering), with `W_i = I` and seeded NMF factors.
pub fn run_ilrma(x: &ComplexSpectrogram, bases: usize, iters: usize, seed: u64) -> Result<IlrmaOutput> {
    let (ib, jb, m) = (x.freq_bins(), x.frames(), x.channels());
    if bases == 0 {
        return Err(Error::invalid("ILRMA needs at least one NMF basis"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nmf = NmfModel::random(ib, bases, jb, m, &mut rng);
    let mut w = vec![CMatrix::identity(m); ib];
    let mut power = separated_power(x, &w);
    let mut cost_trace = vec![ilrma_cost(&power, &nmf, &w, jb)];

    for _ in 0..iters {
        for n in 0..m {
            nmf.update_source(n, &power[n]);
            let r = nmf.source_variances(n);
            w.par_iter_mut()
                .enumerate()
                .try_for_each(|(i, wi)| iterative_projection(x.bin(i), &r[i * jb..(i + 1) * jb], wi, n).map_err(|e| e.at_bin(i)))?;
        }
        power = separated_power(x, &w);
        normalize(&mut w, &mut power, &mut nmf);
        cost_trace.push(ilrma_cost(&power, &nmf, &w, jb));
    }

    let demixing = DemixingSet::from_demixing(w)?;
    Ok(IlrmaOutput { demixing, nmf, cost_trace })
}

/// Spheres `x`, runs ILRMA in the whitened domain, and returns demixing
/// matrices that act on the original observations.
pub fn run_ilrma_sphered(x: &ComplexSpectrogram, bases: usize, iters: usize, seed: u64) -> Result<IlrmaOutput> {
    let (white, q) = sphere(x)?;
    let mut out = run_ilrma(&white, bases, iters, seed)?;
    let w: Vec<CMatrix> = out.demixing.w.iter().zip(&q).map(|(w, q)| w.mul(q)).collect();
    out.demixing = DemixingSet::from_demixing(w)?;
    Ok(out)
}

/// `w_n <- (W U_n)^{-1} e_n`, then `w_n <- w_n / sqrt(w_n^H U_n w_n)`.
fn iterative_projection(bin: &[C64], r: &[f64], w: &mut CMatrix, n: usize) -> Result<()> {
    let m = w.dim();
    let mut u = CMatrix::zeros(m);
    for (slot, &rv) in bin.chunks_exact(m).zip(r) {
        kernels::add_outer(u.as_mut_slice(), slot, 1.0 / rv);
    }
    let jb = r.len() as f64;
    for z in u.as_mut_slice() {
        *z /= jb;
    }
    let wu = w.mul(&u);
    let inv = match wu.inverse() {
        Ok(inv) => inv,
        Err(_) => {
            let load = 1e-6 * wu.trace().norm().max(f64::MIN_POSITIVE) / m as f64;
            let mut loaded = wu.clone();
            for k in 0..m {
                loaded[(k, k)] += load;
            }
            loaded.inverse().map_err(|_| Error::numerical("iterative projection", "singular W U after diagonal loading"))?
        }
    };
    let mut wn = inv.column(n);
    let scale = kernels::quad_form(&wn, u.as_slice(), &wn, m).re;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::numerical("iterative projection", "degenerate normalization"));
    }
    let s = 1.0 / scale.sqrt();
    for z in wn.iter_mut() {
        *z *= s;
    }
    for q in 0..m {
        w[(n, q)] = wn[q].conj();
    }
    Ok(())
}

/// `|w_{i,n}^H x_ij|^2` per source, each `I x J`.
fn separated_power(x: &ComplexSpectrogram, w: &[CMatrix]) -> Vec<Vec<f64>> {
    let (ib, jb, m) = (x.freq_bins(), x.frames(), x.channels());
    let mut p = vec![vec![0.0; ib * jb]; m];
    let mut y = vec![C64::new(0.0, 0.0); m];
    for i in 0..ib {
        for j in 0..jb {
            kernels::matvec_into(w[i].as_slice(), x.slot(i, j), m, &mut y);
            for n in 0..m {
                p[n][i * jb + j] = y[n].norm_sqr();
            }
        }
    }
    p
}

/// Removes the scale ambiguity between `W` and `T`; leaves the cost unchanged.
fn normalize(w: &mut [CMatrix], power: &mut [Vec<f64>], nmf: &mut NmfModel) {
    let m = power.len();
    for n in 0..m {
        let mean = power[n].iter().sum::<f64>() / power[n].len() as f64;
        if !(mean > 0.0) {
            continue;
        }
        let lam = mean.sqrt();
        for wi in w.iter_mut() {
            for q in 0..wi.dim() {
                wi[(n, q)] /= lam;
            }
        }
        for p in power[n].iter_mut() {
            *p /= mean;
        }
        for t in nmf.t[n].iter_mut() {
            *t = (*t / mean).max(NMF_FLOOR);
        }
    }
}

/// ILRMA negative log-likelihood (up to constants).
pub fn ilrma_cost(power: &[Vec<f64>], nmf: &NmfModel, w: &[CMatrix], frames: usize) -> f64 {
    let mut cost = 0.0;
    for (n, p) in power.iter().enumerate() {
        let r = nmf.source_variances(n);
        cost += p.iter().zip(&r).map(|(p, r)| p / r + r.ln()).sum::<f64>();
    }
    let logdet: f64 = w.iter().map(log_abs_det).sum();
    cost - 2.0 * frames as f64 * logdet
}

/// `log|det W|` by LU with partial pivoting.
pub fn log_abs_det(w: &CMatrix) -> f64 {
    let n = w.dim();
    let mut a = w.as_slice().to_vec();
    let mut acc = 0.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r * n + col].norm().total_cmp(&a[s * n + col].norm()))
            .unwrap_or(col);
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
        }
        let d = a[col * n + col];
        if d.norm() == 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += d.norm().ln();
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            for k in col..n {
                let v = a[col * n + k];
                a[r * n + k] -= f * v;
            }
        }
    }
    acc
}

/// `W_i^{-1} (w_1^H x, ..., 0 at n_h, ..., w_M^H x)^T`.
pub fn scale_fixed_noise_image(w: &CMatrix, x: &[C64], target: usize) -> Result<ComplexVector> {
    if target >= w.dim() {
        return Err(Error::invalid(format!("target index {target} out of range for {} outputs", w.dim())));
    }
    let a = w.inverse()?;
    let mut y = w.mul_vec(x);
    y[target] = C64::new(0.0, 0.0);
    Ok(a.mul_vec(&y))
}

/// Back-projected image of a single separated output `n` at slot `x`.
pub fn source_image(demix: &DemixingSet, i: usize, x: &[C64], n: usize) -> ComplexVector {
    let y: C64 = demix.w[i].row(n).iter().zip(x).map(|(w, x)| w * x).sum();
    demix.a[i].column(n).scaled(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_spec(ib: usize, jb: usize, m: usize, seed: u64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..ib * jb * m).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        ComplexSpectrogram::from_values(ib, jb, m, values).unwrap()
    }

    fn max_cov_error(x: &ComplexSpectrogram) -> f64 {
        (0..x.freq_bins())
            .map(|i| {
                let cov = sample_covariance(x.bin(i), x.channels());
                cov.as_matrix().sub(&CMatrix::identity(x.channels())).frobenius_norm()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn sphering_whitens() {
        let x = random_spec(5, 200, 3, 1);
        let (y, _) = sphere(&x).unwrap();
        assert!(max_cov_error(&y) < 1e-6);
    }

    #[test]
    fn sphering_is_scale_invariant() {
        let x = random_spec(4, 100, 3, 2);
        let (y1, _) = sphere(&x).unwrap();
        let (y2, _) = sphere(&x.map(|z| z * 10.0)).unwrap();
        let diff: f64 = y1.values().iter().zip(y2.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn sphering_mono_normalizes_variance() {
        let x = random_spec(3, 50, 1, 3);
        let (y, q) = sphere(&x).unwrap();
        for i in 0..3 {
            let var: f64 = y.bin(i).iter().map(|z| z.norm_sqr()).sum::<f64>() / 50.0;
            assert!((var - 1.0).abs() < 1e-6);
            assert!(q[i][(0, 0)].im.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let x = random_spec(6, 30, 2, 4);
        let out = run_ilrma(&x, 3, 0, 9).unwrap();
        for (w, a) in out.demixing.w.iter().zip(&out.demixing.a) {
            assert_eq!(w, &CMatrix::identity(2));
            assert_eq!(a, &CMatrix::identity(2));
        }
        assert_eq!(out.cost_trace.len(), 1);
        assert!(out.nmf.t.iter().flatten().all(|&t| t > 0.1 && t <= 1.0));
    }

    #[test]
    fn ilrma_cost_is_monotone_and_deterministic() {
        let x = random_spec(8, 60, 3, 5);
        let out = run_ilrma_sphered(&x, 4, 15, 11).unwrap();
        for w in out.cost_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
        let again = run_ilrma_sphered(&x, 4, 15, 11).unwrap();
        assert_eq!(out.demixing, again.demixing);
        assert!(out.demixing.inverse_residual() < 1e-8);
        assert!(out.nmf.t.iter().chain(&out.nmf.v).flatten().all(|&v| v > 0.0));
    }

    #[test]
    fn noise_image_identity_demixing() {
        let img = scale_fixed_noise_image(&CMatrix::identity(2), &[c(3.0, 0.0), c(4.0, 0.0)], 0).unwrap();
        assert_eq!(img.to_vec(), vec![c(0.0, 0.0), c(4.0, 0.0)]);
    }

    #[test]
    fn images_partition_observation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = CMatrix::from_fn(4, |p, q| c(rng.random::<f64>() - 0.5 + if p == q { 2.0 } else { 0.0 }, rng.random::<f64>() - 0.5));
        let x: Vec<C64> = (0..4).map(|k| c(k as f64 - 1.0, 0.5 * k as f64)).collect();
        let demix = DemixingSet::from_demixing(vec![w.clone()]).unwrap();
        let mut total = [c(0.0, 0.0); 4];
        for n in 0..4 {
            let img = source_image(&demix, 0, &x, n);
            for (t, v) in total.iter_mut().zip(img.iter()) {
                *t += v;
            }
            // Noise image for target n plus target image equals x.
            let noise = scale_fixed_noise_image(&w, &x, n).unwrap();
            for k in 0..4 {
                assert!((noise[k] + img[k] - x[k]).norm() < 1e-10);
            }
            // Dense evaluation of the same formula.
            let a = w.inverse().unwrap();
            let mut y = w.mul_vec(&x);
            y[n] = c(0.0, 0.0);
            let dense = a.mul_vec(&y);
            for k in 0..4 {
                assert!((noise[k] - dense[k]).norm() < 1e-12);
            }
        }
        for k in 0..4 {
            assert!((total[k] - x[k]).norm() < 1e-10);
        }
    }

    #[test]
    fn target_index_out_of_range() {
        assert!(scale_fixed_noise_image(&CMatrix::identity(2), &[c(1.0, 0.0), c(1.0, 0.0)], 2).is_err());
    }

    #[test]
    fn log_abs_det_matches_product_of_diagonal() {
        let mut w = CMatrix::identity(3);
        w[(0, 0)] = c(2.0, 0.0);
        w[(1, 1)] = c(0.0, 3.0);
        w[(2, 0)] = c(5.0, 1.0);
        assert!((log_abs_det(&w) - 6.0_f64.ln()).abs() < 1e-14);
    }
}
