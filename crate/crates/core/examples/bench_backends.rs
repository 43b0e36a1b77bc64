//! Single-threaded per-iteration timing of the three EM backends: a
//! microphone sweep at I*J = 65536 with fitted complexity exponents, and the
//! speedup on a 513 x 275 x 4 problem.
//!
//! cargo run --release --example bench_backends [-- --quick]

use rcscm::bench::{bench_mic_sweep, bench_reference_shape, with_threads, BenchConfig, REFERENCE_SHAPE, SWEEP_MICS};
use rcscm::metrics::speedup_report;
use rcscm::solver::Backend;

fn main() -> rcscm::Result<()> {
    let quick = std::env::args().any(|a| a == "--quick");
    let config = BenchConfig { samples: if quick { 3 } else { 10 }, ..BenchConfig::default() };
    let mics: &[usize] = if quick { &SWEEP_MICS[..3] } else { &SWEEP_MICS };
    let records = with_threads(1, || -> rcscm::Result<_> {
        let mut r = bench_mic_sweep(&Backend::ALL, mics, &config)?;
        r.extend(bench_reference_shape(&Backend::ALL, &config)?);
        Ok(r)
    })??;
    let report = speedup_report(&records)?;
    print!("{}", report.table());
    if let Some(r) = report.ratio(REFERENCE_SHAPE, Backend::Naive, Backend::Accel2) {
        println!("\naccel2 is {r:.1}x faster than naive at the reference shape");
    }
    Ok(())
}
