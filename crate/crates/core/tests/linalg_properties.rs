use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rcscm::linalg::{
    hermitian_eig, null_eigenvector, pseudo_inverse_psd, rank_one_restored_inverse, sherman_morrison_inverse, CMatrix,
    HermitianMatrix, C64, DEFAULT_RANK_TOL,
};
use rcscm::synth::random_unitary;

fn rel(a: &CMatrix, b: &CMatrix) -> f64 {
    a.sub(b).frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
}

fn vector(m: usize, rng: &mut impl Rng) -> Vec<C64> {
    (0..m).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

fn random_hermitian(m: usize, rng: &mut impl Rng) -> HermitianMatrix {
    HermitianMatrix::symmetrized(CMatrix::from_fn(m, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))))
}

/// Rank-deficient PSD matrix with `zeros` null directions and its eigenbasis.
fn deficient(m: usize, zeros: usize, rng: &mut impl Rng) -> (HermitianMatrix, Vec<rcscm::linalg::ComplexVector>) {
    let basis = random_unitary(m, rng);
    let eig: Vec<f64> = (0..m).map(|k| if k < zeros { 0.0 } else { rng.random_range(0.1..4.0) }).collect();
    (HermitianMatrix::from_eigen(&eig, &basis), basis)
}

/// Entrywise `sum_k d_k v_k v_k^H`, written independently of the library.
fn outer_sum(values: &[f64], vectors: &[rcscm::linalg::ComplexVector], m: usize) -> CMatrix {
    CMatrix::from_fn(m, |p, q| values.iter().zip(vectors).map(|(d, v)| v[p] * v[q].conj() * *d).sum())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eig_reconstructs_and_is_orthonormal(seed in any::<u64>(), m in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_hermitian(m, &mut rng);
        let e = hermitian_eig(&h);
        prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(rel(&outer_sum(&e.values, &e.vectors, m), h.as_matrix()) < 1e-10);
        for p in 0..m {
            for q in 0..m {
                let g = e.vectors[p].dot(&e.vectors[q]);
                let want = if p == q { 1.0 } else { 0.0 };
                prop_assert!((g - C64::new(want, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn pseudoinverse_is_a_generalized_inverse(seed in any::<u64>(), m in 2usize..=8, zeros in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, _) = deficient(m, zeros, &mut rng);
        let p = pseudo_inverse_psd(&h, DEFAULT_RANK_TOL).unwrap();
        let hph = h.as_matrix().mul(p.as_matrix()).mul(h.as_matrix());
        prop_assert!(rel(&hph, h.as_matrix()) < 1e-9);
        let php = p.as_matrix().mul(h.as_matrix()).mul(p.as_matrix());
        prop_assert!(rel(&php, p.as_matrix()) < 1e-9);
    }

    #[test]
    fn null_vector_is_annihilated(seed in any::<u64>(), m in 2usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, basis) = deficient(m, 1, &mut rng);
        let b = null_eigenvector(&h, DEFAULT_RANK_TOL).unwrap();
        prop_assert!((b.norm() - 1.0).abs() < 1e-12);
        prop_assert!(h.mul_vec(&b).norm() < 1e-10 * h.frobenius_norm());
        prop_assert!((basis[0].dot(&b).norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn restored_inverse_matches_dense(seed in any::<u64>(), m in 2usize..=8, lambda in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r_prime, basis) = deficient(m, 1, &mut rng);
        let pinv = pseudo_inverse_psd(&r_prime, DEFAULT_RANK_TOL).unwrap();
        let got = rank_one_restored_inverse(&pinv, &basis[0], lambda).unwrap();
        let dense = r_prime.plus_outer(&basis[0], lambda).as_matrix().inverse().unwrap();
        prop_assert!(rel(got.as_matrix(), &dense) < 1e-9);
    }

    #[test]
    fn sherman_morrison_matches_dense(seed in any::<u64>(), m in 1usize..=8, c in 0.0f64..10.0, d in 1e-2f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, _) = deficient(m, 0, &mut rng);
        let a = vector(m, &mut rng);
        let r_inv = HermitianMatrix::symmetrized(r.as_matrix().inverse().unwrap());
        let got = sherman_morrison_inverse(&r_inv, &a, c, d).unwrap();
        let dense = r.scaled(d).plus_outer(&a, c).as_matrix().inverse().unwrap();
        prop_assert!(rel(got.as_matrix(), &dense) < 1e-9);
    }

    #[test]
    fn dense_inverse_is_two_sided(seed in any::<u64>(), m in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, _) = deficient(m, 0, &mut rng);
        let inv = h.as_matrix().inverse().unwrap();
        let id = CMatrix::identity(m);
        prop_assert!(rel(&h.as_matrix().mul(&inv), &id) < 1e-10);
        prop_assert!(rel(&inv.mul(h.as_matrix()), &id) < 1e-10);
        let pd = h.inverse_pd().unwrap();
        prop_assert!(rel(pd.as_matrix(), &inv) < 1e-10);
    }
}

#[test]
fn non_hermitian_rejected() {
    let m = CMatrix::from_row_major(2, vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0)]).unwrap();
    assert!(HermitianMatrix::new(m).is_err());
}

#[test]
fn indefinite_rejected_by_pseudoinverse() {
    let h = HermitianMatrix::diag(&[-1.0, 2.0]);
    assert!(pseudo_inverse_psd(&h, DEFAULT_RANK_TOL).is_err());
}
