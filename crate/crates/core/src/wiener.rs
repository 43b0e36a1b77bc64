//! Multichannel Wiener filtering of the directional target.
//!
//! The posterior mean of the dry target is `r_h a^H (R^(x))^{-1} x`, which the
//! scalar expansion reduces to `gamma * rho_ax` with
//! `gamma = r_h / (r_u + r_h rho_aa)`.

use rayon::prelude::*;

use crate::error::Result;
use crate::linalg::C64;
use crate::model::{RcscmInputs, RcscmParams};
use crate::solver::accel::{precompute_sigma, precompute_tau};
use crate::stft::ComplexSpectrogram;

#[derive(Clone, Debug)]
pub struct Extraction {
    /// Single-channel dry estimate `s_ij`.
    pub dry: ComplexSpectrogram,
    /// `M`-channel spatial image `s_ij a_i`.
    pub image: ComplexSpectrogram,
}

pub fn extract_target(inputs: &RcscmInputs, params: &RcscmParams, x: &ComplexSpectrogram) -> Result<Extraction> {
    inputs.check_shape(x)?;
    let (ib, jb, m) = (x.freq_bins(), x.frames(), x.channels());
    let (sigma_ab, sigma_bx) = precompute_sigma(inputs, x);
    let (tau_aa, tau_ax, _) = precompute_tau(inputs, x);
    let mut dry = ComplexSpectrogram::zeros(ib, jb, 1);
    let mut image = ComplexSpectrogram::zeros(ib, jb, m);
    dry.bins_mut()
        .zip(image.bins_mut())
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .for_each(|(i, (dry_row, image_row))| {
            let lambda = params.lambda[i];
            let rho_aa = tau_aa[i] + sigma_ab[i].norm_sqr() / lambda;
            let a = &inputs.a[i];
            for j in 0..jb {
                let k = i * jb + j;
                let rho_ax = tau_ax[k] + sigma_ab[i] * sigma_bx[k] / lambda;
                let (r_h, r_u) = (params.r_h[k], params.r_u[k]);
                let s = rho_ax * (r_h / (r_u + r_h * rho_aa));
                dry_row[j] = s;
                for (out, &ap) in image_row[j * m..(j + 1) * m].iter_mut().zip(a.iter()) {
                    *out = ap * s;
                }
            }
        });
    Ok(Extraction { dry, image })
}

/// `x - target_image`, the posterior-mean noise image.
pub fn extract_noise(x: &ComplexSpectrogram, target_image: &ComplexSpectrogram) -> ComplexSpectrogram {
    let values: Vec<C64> = x.values().iter().zip(target_image.values()).map(|(a, b)| a - b).collect();
    ComplexSpectrogram::from_values(x.freq_bins(), x.frames(), x.channels(), values).expect("matching shapes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{ComplexVector, HermitianMatrix, DEFAULT_RANK_TOL};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn instance(seed: u64, ib: usize, jb: usize, m: usize) -> (RcscmInputs, RcscmParams, ComplexSpectrogram) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = || c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let mut a = Vec::new();
        let mut rp = Vec::new();
        for _ in 0..ib {
            a.push(ComplexVector::new((0..m).map(|_| g()).collect()));
            let mut h = HermitianMatrix::zeros(m);
            for _ in 0..m - 1 {
                h = h.plus_outer(&ComplexVector::new((0..m).map(|_| g()).collect()), 1.0);
            }
            rp.push(h);
        }
        let x = ComplexSpectrogram::from_values(ib, jb, m, (0..ib * jb * m).map(|_| g()).collect()).unwrap();
        let inputs = RcscmInputs::from_parts(0, a, rp, DEFAULT_RANK_TOL).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut p = RcscmParams::filled(ib, jb, 1.0, 1.0, 1.0);
        p.r_h.iter_mut().chain(p.r_u.iter_mut()).chain(p.lambda.iter_mut()).for_each(|v| *v = 0.1 + rng.random::<f64>());
        (inputs, p, x)
    }

    #[test]
    fn zero_target_variance_gives_zero() {
        let (inputs, mut p, x) = instance(1, 3, 5, 3);
        p.r_h.iter_mut().for_each(|v| *v = 0.0);
        let out = extract_target(&inputs, &p, &x).unwrap();
        assert!(out.dry.values().iter().all(|v| *v == c(0.0, 0.0)));
    }

    #[test]
    fn noiseless_limit_passes_target() {
        let (inputs, mut p, _) = instance(2, 2, 3, 3);
        let coeff = c(0.7, -1.3);
        let values = (0..2 * 3).flat_map(|k| inputs.a[k / 3].iter().map(|&ap| ap * coeff).collect::<Vec<_>>()).collect();
        let x = ComplexSpectrogram::from_values(2, 3, 3, values).unwrap();
        p.r_u.iter_mut().for_each(|v| *v = 1e-12);
        let out = extract_target(&inputs, &p, &x).unwrap();
        for s in out.dry.values() {
            assert!((s - coeff).norm() < 1e-9, "{s}");
        }
    }

    #[test]
    fn matches_dense_wiener_filter() {
        for seed in 0..5 {
            let (inputs, p, x) = instance(seed, 4, 6, 4);
            let out = extract_target(&inputs, &p, &x).unwrap();
            let noise = extract_noise(&x, &out.image);
            for i in 0..4 {
                let ru = inputs.noise_scm(i, p.lambda[i]);
                for j in 0..6 {
                    let k = p.idx(i, j);
                    let rx = ru.scaled(p.r_u[k]).plus_outer(&inputs.a[i], p.r_h[k]);
                    let rx_inv = rx.as_matrix().inverse().unwrap();
                    let xj = ComplexVector::new(x.slot(i, j).to_vec());
                    let filtered = rx_inv.mul_vec(&xj);
                    let s = inputs.a[i].dot(&filtered) * p.r_h[k];
                    assert!((s - out.dry.get(i, j, 0)).norm() < 1e-9 * (1.0 + s.norm()));
                    // E[u | x] = r_u R_u Rx^{-1} x
                    let u = ru.as_matrix().mul_vec(&filtered).scaled(C64::new(p.r_u[k], 0.0));
                    for q in 0..4 {
                        assert!((u[q] - noise.get(i, j, q)).norm() < 1e-9 * (1.0 + u[q].norm()));
                    }
                }
            }
        }
    }

    #[test]
    fn images_sum_to_observation() {
        let (inputs, p, x) = instance(7, 3, 4, 2);
        let out = extract_target(&inputs, &p, &x).unwrap();
        let noise = extract_noise(&x, &out.image);
        for ((n, t), xv) in noise.values().iter().zip(out.image.values()).zip(x.values()) {
            // The noise image is the exact rounded difference; adding back can differ by one rounding.
            assert_eq!(*n, xv - t);
            assert!((n + t - xv).norm() <= 2.0 * f64::EPSILON * (xv.norm() + t.norm()));
        }
    }
}
