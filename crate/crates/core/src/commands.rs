//! The four subcommands, with their file outputs.
//!
//! | command   | writes into `out`                                                            |
//! |-----------|------------------------------------------------------------------------------|
//! | `synth`   | `mixture.wav`, `target_image.wav`, `noise_image.wav`, `scenario.toml`         |
//! | `extract` | `target_image.wav`, `target_dry.wav`, `noise_image.wav`, `checkpoint.json`, `trace.jsonl`, `metrics.json` |
//! | `verify`  | `verify.json`                                                                |
//! | `bench`   | `bench_records.jsonl`, `bench_report.json`, `bench_report.csv`               |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{bench_mic_sweep, bench_reference_shape, BenchConfig, REFERENCE_SHAPE, SWEEP_MICS};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{load_checkpoint, read_wav, save_checkpoint, write_json, write_jsonl, write_wav};
use crate::metrics::{speedup_report, SpeedupReport};
use crate::model::build_noise_scm;
use crate::pipeline::{analyze, estimate, quality, render, QualityReport};
use crate::solver::Backend;
use crate::synth::{default_sources, render_mixture, Mixture, Scenario};
use crate::verify::{run_verify, VerifyConfig, VerifyReport};

fn out_file(config: &RunConfig, name: &str) -> PathBuf {
    config.out.join(name)
}

fn ensure_out(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))
}

/// Loads a mono source and fits it to `len` samples (truncating or zero-padding).
fn load_source(path: &Path, len: usize, sample_rate: u32) -> Result<Vec<f64>> {
    let w = read_wav(path)?;
    if w.sample_rate() != sample_rate {
        return Err(Error::format(path, format!("sample rate {} differs from the scenario's {sample_rate}", w.sample_rate())));
    }
    let mut s = w.channel(0).to_vec();
    s.resize(len, 0.0);
    Ok(s)
}

/// Scenario from `config.scenario` or the default one. The seed is taken from
/// `seed_flag`, else the scenario file, else `config.seed`.
pub fn load_scenario(config: &RunConfig, seed_flag: Option<u64>) -> Result<Scenario> {
    let mut s = match &config.scenario {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let table: toml::Table = toml::from_str(&text).map_err(|e| Error::format(p, e))?;
            let has_seed = table.contains_key("seed");
            let mut s: Scenario = table.try_into().map_err(|e| Error::format(p, e))?;
            if !has_seed {
                s.seed = config.seed;
            }
            s
        }
        None => Scenario { seed: config.seed, ..Scenario::default() },
    };
    if let Some(seed) = seed_flag {
        s.seed = seed;
    }
    s.validate()?;
    Ok(s)
}

pub fn synthesize_scenario(s: &Scenario) -> Result<Mixture> {
    let (mut target, mut noises) = default_sources(s);
    let n = s.num_samples();
    if let Some(p) = &s.target_wav {
        target = load_source(p, n, s.sample_rate)?;
    }
    for (k, noise) in noises.iter_mut().enumerate() {
        if let Some(p) = s.noise_wavs.get(k % s.noise_wavs.len().max(1)) {
            *noise = load_source(p, n, s.sample_rate)?;
        }
    }
    render_mixture(s, &target, &noises)
}

pub fn cmd_synth(config: &RunConfig, seed_flag: Option<u64>) -> Result<Mixture> {
    let scenario = load_scenario(config, seed_flag)?;
    let m = synthesize_scenario(&scenario)?;
    ensure_out(config)?;
    write_wav(&out_file(config, "mixture.wav"), &m.mixture, config.wav_format)?;
    write_wav(&out_file(config, "target_image.wav"), &m.target_image, config.wav_format)?;
    write_wav(&out_file(config, "noise_image.wav"), &m.noise_image, config.wav_format)?;
    let resolved = toml::to_string(&scenario).map_err(|e| Error::invalid(format!("scenario: {e}")))?;
    let path = out_file(config, "scenario.toml");
    std::fs::write(&path, resolved).map_err(|e| Error::io(&path, e))?;
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractMetrics {
    pub backend: Backend,
    pub target_index: usize,
    pub bins: usize,
    pub frames: usize,
    pub channels: usize,
    pub rcscm_iters: usize,
    pub objective_initial: Option<f64>,
    pub objective_final: Option<f64>,
    pub median_iter_seconds: Option<f64>,
    pub lambda_floored: usize,
    /// Present when a reference image was given.
    pub quality: Option<QualityReport>,
    /// Same measure for the Wiener filter of the initial parameters.
    pub baseline_si_sdr: Option<f64>,
}

pub fn cmd_extract(config: &RunConfig) -> Result<ExtractMetrics> {
    let (state, mixture) = match (&config.checkpoint, &config.input) {
        (Some(cp), _) => {
            let state = load_checkpoint(cp).map_err(|e| e.in_stage("checkpoint"))?;
            let mixture = config.input.as_deref().map(read_wav).transpose()?;
            (state, mixture)
        }
        (None, Some(input)) => {
            let mixture = read_wav(input)?;
            (analyze(&mixture, config)?, Some(mixture))
        }
        (None, None) => return Err(Error::invalid("extract needs --input or --checkpoint")),
    };
    ensure_out(config)?;
    save_checkpoint(&out_file(config, "checkpoint.json"), &state)?;

    let est = estimate(&state, config)?;
    write_wav(&out_file(config, "target_image.wav"), &est.target_image, config.wav_format)?;
    write_wav(&out_file(config, "target_dry.wav"), &est.target_dry, config.wav_format)?;
    write_wav(&out_file(config, "noise_image.wav"), &est.noise_image, config.wav_format)?;
    write_jsonl(&out_file(config, "trace.jsonl"), &est.run.trace_records())?;

    let (quality_report, baseline_si_sdr) = match (&config.reference, &mixture) {
        (Some(r), Some(mix)) => {
            let reference = read_wav(r)?;
            let q = quality(mix, &est.target_image, &reference)?;
            let inputs = build_noise_scm(&state.demixing, &state.x, state.target, config.rank_tol)?;
            let (base_img, _, _) = render(&state, &inputs, &est.initial)?;
            let q0 = quality(mix, &base_img, &reference)?;
            (Some(q), Some(q0.extracted_si_sdr))
        }
        (Some(_), None) => return Err(Error::invalid("--reference needs --input to score the mixture")),
        _ => (None, None),
    };
    let metrics = ExtractMetrics {
        backend: config.backend,
        target_index: state.target,
        bins: state.x.freq_bins(),
        frames: state.x.frames(),
        channels: state.x.channels(),
        rcscm_iters: est.run.iter_seconds.len(),
        objective_initial: est.run.objective.first().copied(),
        objective_final: est.run.objective.last().copied(),
        median_iter_seconds: (!est.run.iter_seconds.is_empty()).then(|| crate::numeric::median(&est.run.iter_seconds)),
        lambda_floored: est.run.diagnostics.lambda_floored,
        quality: quality_report,
        baseline_si_sdr,
    };
    write_json(&out_file(config, "metrics.json"), &metrics)?;
    Ok(metrics)
}

/// Runs the equivalence suite; a failing report is returned, not an error.
pub fn cmd_verify(config: &RunConfig, verify: &VerifyConfig) -> Result<VerifyReport> {
    let verify = VerifyConfig { hyper: config.hyper()?, ..verify.clone() };
    let report = run_verify(&verify)?;
    ensure_out(config)?;
    write_json(&out_file(config, "verify.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub report: SpeedupReport,
    pub reference_shape_speedup: Option<f64>,
}

/// Times all backends on the reference shape and the microphone sweep. Runs on
/// the current thread pool.
pub fn cmd_bench(config: &RunConfig, bench: &BenchConfig, mics: Option<&[usize]>) -> Result<BenchSummary> {
    let bench = BenchConfig { seed: config.seed, hyper: config.hyper()?, ..bench.clone() };
    let mut records = bench_mic_sweep(&Backend::ALL, mics.unwrap_or(&SWEEP_MICS), &bench)?;
    records.extend(bench_reference_shape(&Backend::ALL, &bench)?);
    let report = speedup_report(&records)?;
    ensure_out(config)?;
    write_jsonl(&out_file(config, "bench_records.jsonl"), &records)?;
    write_json(&out_file(config, "bench_report.json"), &report)?;
    let path = out_file(config, "bench_report.csv");
    std::fs::write(&path, report.csv()).map_err(|e| Error::io(&path, e))?;
    let reference_shape_speedup = report.ratio(REFERENCE_SHAPE, Backend::Naive, Backend::Accel2);
    Ok(BenchSummary { report, reference_shape_speedup })
}
