use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rcscm::stft::{stft_analyze, stft_synthesize, StftConfig, Waveform};

fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn roundtrip_reconstructs_every_sample(seed in any::<u64>(), len in 1usize..6000, channels in 1usize..4) {
        let w = Waveform::new((0..channels).map(|c| noise(len, seed ^ c as u64)).collect(), 16_000).unwrap();
        let s = stft_analyze(&w, 64.0, 32.0).unwrap();
        let y = stft_synthesize(&s, 64.0, 32.0, 16_000).unwrap();
        prop_assert!(y.len() >= len);
        for c in 0..channels {
            let err: f64 = (0..len).map(|n| (y.channel(c)[n] - w.channel(c)[n]).powi(2)).sum();
            let e: f64 = w.channel(c).iter().map(|v| v * v).sum();
            prop_assert!((err / e).sqrt() < 1e-10);
        }
    }

    #[test]
    fn analysis_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let len = 3000;
        let x = noise(len, seed);
        let y = noise(len, seed.wrapping_add(1));
        let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
        let cfg = StftConfig::from_ms(64.0, 32.0, 16_000).unwrap();
        let sx = cfg.analyze(&Waveform::mono(x, 16_000).unwrap()).unwrap();
        let sy = cfg.analyze(&Waveform::mono(y, 16_000).unwrap()).unwrap();
        let sz = cfg.analyze(&Waveform::mono(z, 16_000).unwrap()).unwrap();
        for ((a, b), c) in sx.values().iter().zip(sy.values()).zip(sz.values()) {
            prop_assert!((a * alpha + b * beta - c).norm() < 1e-9);
        }
    }
}

#[test]
fn default_geometry_frame_count() {
    let cfg = StftConfig::from_ms(64.0, 32.0, 16_000).unwrap();
    assert_eq!((cfg.win_len, cfg.hop, cfg.freq_bins()), (1024, 512, 513));
    assert_eq!(cfg.frames_for(139_200), 273);
}

#[test]
fn dc_bin_equals_window_sum() {
    // Bin 0 of a constant frame equals the window sum times the constant.
    let cfg = StftConfig::from_ms(64.0, 32.0, 16_000).unwrap();
    let w = Waveform::mono(vec![1.0; 8000], 16_000).unwrap();
    let s = cfg.analyze(&w).unwrap();
    let win_sum: f64 = cfg.window().iter().sum();
    assert!((s.get(0, 5, 0).re - win_sum).abs() < 1e-9);
    assert!(s.get(0, 5, 0).im.abs() < 1e-9);
}

#[test]
fn mismatched_bins_rejected() {
    let cfg = StftConfig::from_ms(64.0, 32.0, 16_000).unwrap();
    let s = rcscm::stft::ComplexSpectrogram::zeros(10, 4, 1);
    assert!(cfg.synthesize(&s, 16_000).is_err());
}
