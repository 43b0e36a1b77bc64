use rcscm::commands::{cmd_extract, cmd_synth, ExtractMetrics};
use rcscm::config::RunConfig;
use rcscm::io::{load_checkpoint, read_json, read_jsonl, read_wav, save_checkpoint};
use rcscm::model::build_noise_scm;
use rcscm::pipeline::{analyze, estimate, quality, render};
use rcscm::solver::{Backend, TraceRecord};
use rcscm::stft::Waveform;
use rcscm::synth::{generate, Scenario};

fn short_scenario() -> Scenario {
    Scenario { duration: 2.0, noise_doas: vec![-60.0, -20.0, 70.0], ..Scenario::default() }
}

fn short_config() -> RunConfig {
    RunConfig { ilrma_iters: 20, rcscm_iters: 30, ..RunConfig::default() }
}

fn rms_diff(a: &Waveform, b: &Waveform) -> f64 {
    let n = (a.len() * a.num_channels()) as f64;
    (a.channels().iter().flatten().zip(b.channels().iter().flatten()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt()
}

fn energy_db(w: &Waveform) -> f64 {
    10.0 * w.energy().log10()
}

#[test]
fn zero_noise_mixture_equals_target() {
    let m = generate(&Scenario { noise_doas: vec![], duration: 0.5, ..Scenario::default() }).unwrap();
    assert_eq!(m.mixture, m.target_image);
    assert!(m.noise_image.channels().iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn zero_db_images_have_equal_power() {
    let m = generate(&Scenario { duration: 1.0, ..Scenario::default() }).unwrap();
    assert!((energy_db(&m.target_image) - energy_db(&m.noise_image)).abs() < 0.01);
}

#[test]
fn synth_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scene.toml");
    std::fs::write(&scenario, "duration = 0.5\nnoise_doas = [-45.0, 45.0]\n").unwrap();
    for name in ["a", "b"] {
        let c = RunConfig { scenario: Some(scenario.clone()), out: dir.path().join(name), seed: 5, ..RunConfig::default() };
        cmd_synth(&c, None).unwrap();
    }
    for f in ["mixture.wav", "target_image.wav", "noise_image.wav", "scenario.toml"] {
        assert_eq!(std::fs::read(dir.path().join("a").join(f)).unwrap(), std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let resolved: Scenario = toml::from_str(&std::fs::read_to_string(dir.path().join("a/scenario.toml")).unwrap()).unwrap();
    assert_eq!(resolved.seed, 5);
}

#[test]
fn backends_give_the_same_extraction() {
    let scene = generate(&short_scenario()).unwrap();
    let config = short_config();
    let state = analyze(&scene.mixture, &config).unwrap();
    let out: Vec<_> = Backend::ALL
        .iter()
        .map(|&backend| estimate(&state, &RunConfig { backend, ..config.clone() }).unwrap())
        .collect();
    for e in &out[1..] {
        assert!(rms_diff(&e.target_image, &out[0].target_image) < 1e-6);
        assert!(rms_diff(&e.noise_image, &out[0].noise_image) < 1e-6);
    }
}

#[test]
fn zero_iterations_give_the_initialized_wiener_filter() {
    let scene = generate(&short_scenario()).unwrap();
    let config = RunConfig { rcscm_iters: 0, ..short_config() };
    let state = analyze(&scene.mixture, &config).unwrap();
    let est = estimate(&state, &config).unwrap();
    assert_eq!(est.run.params, est.initial);
    let inputs = build_noise_scm(&state.demixing, &state.x, state.target, config.rank_tol).unwrap();
    let (image, noise, dry) = render(&state, &inputs, &est.initial).unwrap();
    assert_eq!(image, est.target_image);
    assert_eq!(noise, est.noise_image);
    assert_eq!(dry, est.target_dry);
}

#[test]
fn outputs_partition_the_mixture() {
    let scene = generate(&short_scenario()).unwrap();
    let config = short_config();
    let state = analyze(&scene.mixture, &config).unwrap();
    let est = estimate(&state, &config).unwrap();
    assert_eq!(est.target_image.len(), scene.mixture.len());
    let mut sum = est.target_image.clone();
    for c in 0..sum.num_channels() {
        for (s, n) in sum.channel_mut(c).iter_mut().zip(est.noise_image.channel(c)) {
            *s += n;
        }
    }
    assert!(rms_diff(&sum, &scene.mixture) < 1e-9);
    let q = quality(&scene.mixture, &est.target_image, &scene.target_image).unwrap();
    assert!(q.improvement_db > 0.0, "{q:?}");
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let scene = generate(&Scenario { duration: 0.5, ..short_scenario() }).unwrap();
    let state = analyze(&scene.mixture, &short_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cp.json");
    save_checkpoint(&p, &state).unwrap();
    let back = load_checkpoint(&p).unwrap();
    assert_eq!(back.x, state.x);
    assert_eq!(back.demixing, state.demixing);
    assert_eq!(back.nmf, state.nmf);
    assert_eq!((back.target, back.signal_len, back.win_len, back.hop), (state.target, state.signal_len, state.win_len, state.hop));
}

#[test]
fn extract_from_checkpoint_matches_direct_run() {
    let dir = tempfile::tempdir().unwrap();
    let synth = RunConfig { out: dir.path().join("s"), ..RunConfig::default() };
    let scenario = dir.path().join("scene.toml");
    std::fs::write(&scenario, "duration = 1.5\nnoise_doas = [-50.0, 10.0, 80.0]\n").unwrap();
    cmd_synth(&RunConfig { scenario: Some(scenario), ..synth }, None).unwrap();
    let direct = RunConfig {
        input: Some(dir.path().join("s/mixture.wav")),
        reference: Some(dir.path().join("s/target_image.wav")),
        out: dir.path().join("direct"),
        ..short_config()
    };
    let m1 = cmd_extract(&direct).unwrap();
    let resumed = RunConfig {
        checkpoint: Some(dir.path().join("direct/checkpoint.json")),
        out: dir.path().join("resumed"),
        backend: Backend::Naive,
        ..direct.clone()
    };
    let m2 = cmd_extract(&resumed).unwrap();
    assert_eq!(m1.target_index, m2.target_index);
    let a = read_wav(&dir.path().join("direct/target_image.wav")).unwrap();
    let b = read_wav(&dir.path().join("resumed/target_image.wav")).unwrap();
    assert!(rms_diff(&a, &b) < 1e-6);

    let metrics: ExtractMetrics = read_json(&dir.path().join("direct/metrics.json")).unwrap();
    assert_eq!(metrics, m1);
    assert!(metrics.quality.is_some() && metrics.baseline_si_sdr.is_some());
    let trace: Vec<TraceRecord> = read_jsonl(&dir.path().join("direct/trace.jsonl")).unwrap();
    assert_eq!(trace.len(), short_config().rcscm_iters + 1);
    assert_eq!(trace.last().unwrap().objective, metrics.objective_final);
}

#[test]
fn stage_failures_name_the_stage() {
    let scene = generate(&Scenario { duration: 0.5, ..short_scenario() }).unwrap();
    let config = RunConfig { target_index: Some(9), ..short_config() };
    let err = analyze(&scene.mixture, &config).unwrap_err();
    assert!(err.to_string().starts_with("ilrma stage failed"), "{err}");
    assert_eq!(err.exit_code(), 2);

    let mono = Waveform::mono(vec![0.1; 4000], 16_000).unwrap();
    let err = analyze(&mono, &short_config()).unwrap_err();
    assert!(err.to_string().starts_with("stft stage failed"), "{err}");

    let err = cmd_extract(&RunConfig { input: Some("/nonexistent/mix.wav".into()), ..short_config() }).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/mix.wav"), "{err}");
}
