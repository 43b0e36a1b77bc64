//! Checks the two inverse expansions used by the accelerated backends against
//! dense inversion on random matrices: the rank-one update of the noise
//! covariance by the target, and the restoration of the missing eigen-direction
//! of a rank-deficient covariance through its pseudoinverse.
//!
//! cargo run --release --example matrix_identities

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rcscm::linalg::{pseudo_inverse_psd, rank_one_restored_inverse, sherman_morrison_inverse, ComplexVector, HermitianMatrix, C64, DEFAULT_RANK_TOL};
use rcscm::synth::random_unitary;

fn main() -> rcscm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!("{:>2} {:>12} {:>12}", "M", "rank-one", "restored");
    for m in [2, 3, 4, 8, 16] {
        let (mut worst_sm, mut worst_rest) = (0.0_f64, 0.0_f64);
        for _ in 0..50 {
            let basis = random_unitary(m, &mut rng);
            let mut eig: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..3.0)).collect();
            eig[0] = 0.0;
            let r_prime = HermitianMatrix::from_eigen(&eig, &basis);
            let lambda = rng.random_range(0.05..2.0);
            let r_u = r_prime.plus_outer(&basis[0], lambda);
            let dense_u = r_u.as_matrix().inverse()?;

            let pinv = pseudo_inverse_psd(&r_prime, DEFAULT_RANK_TOL)?;
            let restored = rank_one_restored_inverse(&pinv, &basis[0], lambda)?;
            worst_rest = worst_rest.max(restored.as_matrix().sub(&dense_u).frobenius_norm() / dense_u.frobenius_norm());

            let a = ComplexVector::new((0..m).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect());
            let (r_h, r_n) = (rng.random_range(0.01..5.0), rng.random_range(0.01..5.0));
            let dense_x = r_u.scaled(r_n).plus_outer(&a, r_h).as_matrix().inverse()?;
            let sm = sherman_morrison_inverse(&restored, &a, r_h, r_n)?;
            worst_sm = worst_sm.max(sm.as_matrix().sub(&dense_x).frobenius_norm() / dense_x.frobenius_norm());
        }
        println!("{m:>2} {worst_sm:>12.2e} {worst_rest:>12.2e}");
    }
    Ok(())
}
