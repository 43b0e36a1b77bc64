//! Runs sphering and ILRMA on the default scenario, prints the cost trace and
//! the power of each separated output, and reports the output picked as the
//! directional target together with the SI-SDR of its back-projected image.
//!
//! cargo run --release --example ilrma_separation [-- <ilrma iters>]

use rcscm::ilrma::{run_ilrma_sphered, source_image};
use rcscm::metrics::si_sdr_multichannel;
use rcscm::model::{output_power, select_target_index};
use rcscm::stft::{ComplexSpectrogram, StftConfig};
use rcscm::synth::{generate, Scenario};

fn main() -> rcscm::Result<()> {
    let iters = std::env::args().nth(1).map(|s| s.parse().expect("iteration count")).unwrap_or(50);
    let scene = generate(&Scenario::default())?;
    let sr = scene.mixture.sample_rate();
    let cfg = StftConfig::from_ms(64.0, 32.0, sr)?;
    let x = cfg.analyze(&scene.mixture)?;
    let out = run_ilrma_sphered(&x, 10, iters, 0)?;
    for (k, c) in out.cost_trace.iter().enumerate().step_by((iters / 10).max(1)) {
        println!("iteration {k:3}  cost {c:.6e}");
    }
    let m = x.channels();
    let mut totals = vec![0.0; m];
    for i in 0..x.freq_bins() {
        let p = output_power(&out.demixing, &x, i);
        for (n, t) in totals.iter_mut().enumerate() {
            *t += p[n] * out.demixing.a[i].column(n).norm().powi(2);
        }
    }
    for (n, t) in totals.iter().enumerate() {
        println!("output {n}: back-projected power {t:.4e}");
    }
    let target = select_target_index(&out.demixing, &x);
    let mut img = ComplexSpectrogram::zeros(x.freq_bins(), x.frames(), m);
    for i in 0..x.freq_bins() {
        for j in 0..x.frames() {
            let v = source_image(&out.demixing, i, x.slot(i, j), target);
            img.slot_mut(i, j).copy_from_slice(&v);
        }
    }
    let w = cfg.synthesize(&img, sr)?.truncated(scene.mixture.len());
    let sdr = si_sdr_multichannel(w.channels(), scene.target_image.channels())?;
    let mix = si_sdr_multichannel(scene.mixture.channels(), scene.target_image.channels())?;
    println!("target output {target}: image SI-SDR {sdr:.2} dB (mixture {mix:.2} dB)");
    Ok(())
}
