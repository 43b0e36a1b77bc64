//! Analyzes and resynthesizes seeded noise and a tone with the default
//! 64 ms / 32 ms Hamming STFT and prints the reconstruction error.
//!
//! cargo run --release --example stft_roundtrip

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rcscm::stft::{StftConfig, Waveform};

fn main() -> rcscm::Result<()> {
    let sr = 16_000;
    let cfg = StftConfig::from_ms(64.0, 32.0, sr)?;
    let n = 139_200;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tone: Vec<f64> = (0..n).map(|t| (2.0 * std::f64::consts::PI * 440.0 * t as f64 / sr as f64).sin()).collect();
    let w = Waveform::new(vec![noise, tone], sr)?;
    let s = cfg.analyze(&w)?;
    println!("{} bins x {} frames x {} channels", s.freq_bins(), s.frames(), s.channels());
    let y = cfg.synthesize(&s, sr)?.truncated(n);
    for (name, c) in [("noise", 0), ("tone", 1)] {
        let err: f64 = y.channel(c).iter().zip(w.channel(c)).map(|(a, b)| (a - b).powi(2)).sum();
        let e: f64 = w.channel(c).iter().map(|v| v * v).sum();
        println!("{name:5} relative RMS error {:.2e}", (err / e).sqrt());
    }
    Ok(())
}
