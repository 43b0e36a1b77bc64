//! Steps the naive and both accelerated EM backends in lockstep over a seeded
//! grid of problem sizes and prints the largest relative disagreement.
//!
//! cargo run --release --example verify_backends [-- --minimal]

use std::time::Instant;

use rcscm::verify::{run_verify, VerifyConfig};

fn main() -> rcscm::Result<()> {
    let config = if std::env::args().any(|a| a == "--minimal") { VerifyConfig::minimal() } else { VerifyConfig::default() };
    let start = Instant::now();
    let report = run_verify(&config)?;
    print!("{}", report.table());
    println!(
        "{} instances, {} iterations each, max relative divergence {:.2e} (tolerance {:.0e}) in {:.1} s: {}",
        report.instances.len(),
        report.iters,
        report.max_rel(),
        report.tol,
        start.elapsed().as_secs_f64(),
        if report.passed { "PASS" } else { "FAIL" }
    );
    Ok(())
}
