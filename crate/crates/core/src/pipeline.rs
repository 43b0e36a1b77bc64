//! End-to-end extraction without file I/O.
//!
//! [`analyze`] covers the STFT, sphering and ILRMA and ends at a
//! [`StageState`] that can be checkpointed. [`estimate`] builds the fixed
//! model quantities from that state, runs the chosen EM backend, applies the
//! Wiener filter and resynthesizes waveforms.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::ilrma::run_ilrma_sphered;
use crate::io::StageState;
use crate::metrics::si_sdr_multichannel;
use crate::model::{build_noise_scm, init_params, select_target_index, RcscmParams};
use crate::solver::{run, Problem, RunOptions, RunOutput};
use crate::stft::{StftConfig, Waveform};
use crate::wiener::{extract_noise, extract_target};

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// STFT, sphering and ILRMA; picks the target output unless `config` fixes it.
pub fn analyze(mixture: &Waveform, config: &RunConfig) -> Result<StageState> {
    if mixture.num_channels() < 2 {
        return Err(Error::invalid("extraction needs a multichannel mixture").in_stage("stft"));
    }
    let stft = stage("stft", StftConfig::from_ms(config.win_ms, config.hop_ms, mixture.sample_rate()))?;
    let x = stage("stft", stft.analyze(mixture))?;
    let ilrma = stage("ilrma", run_ilrma_sphered(&x, config.bases, config.ilrma_iters, config.seed))?;
    let m = x.channels();
    let target = match config.target_index {
        Some(t) if t >= m => {
            return Err(Error::invalid(format!("target index {t} out of range for {m} channels")).in_stage("ilrma"));
        }
        Some(t) => t,
        None => select_target_index(&ilrma.demixing, &x),
    };
    Ok(StageState {
        x,
        demixing: ilrma.demixing,
        nmf: ilrma.nmf,
        target,
        sample_rate: mixture.sample_rate(),
        signal_len: mixture.len(),
        win_len: stft.win_len,
        hop: stft.hop,
    })
}

#[derive(Clone, Debug)]
pub struct Estimation {
    pub initial: RcscmParams,
    pub run: RunOutput,
    pub target_image: Waveform,
    pub noise_image: Waveform,
    /// Single-channel dry target estimate.
    pub target_dry: Waveform,
}

/// Waveforms of the Wiener outputs under `params`.
pub fn render(state: &StageState, inputs: &crate::model::RcscmInputs, params: &RcscmParams) -> Result<(Waveform, Waveform, Waveform)> {
    let ext = stage("wiener", extract_target(inputs, params, &state.x))?;
    let noise = extract_noise(&state.x, &ext.image);
    let stft = StftConfig { win_len: state.win_len, hop: state.hop };
    let synth = |s| stage("istft", stft.synthesize(s, state.sample_rate)).map(|w: Waveform| w.truncated(state.signal_len));
    Ok((synth(&ext.image)?, synth(&noise)?, synth(&ext.dry)?))
}

/// Noise model, initialization, EM and Wiener extraction.
pub fn estimate(state: &StageState, config: &RunConfig) -> Result<Estimation> {
    let hyper = config.hyper()?;
    let inputs = stage("noise-scm", build_noise_scm(&state.demixing, &state.x, state.target, config.rank_tol))?;
    let initial = stage("init", init_params(&inputs, &state.nmf, &state.demixing, &state.x, config.rank_tol))?;
    let problem = stage("rcscm", Problem::new(&inputs, &state.x, hyper))?;
    let run = stage("rcscm", run(config.backend, problem, initial.clone(), &RunOptions::iters(config.rcscm_iters)))?;
    let (target_image, noise_image, target_dry) = render(state, &inputs, &run.params)?;
    Ok(Estimation { initial, run, target_image, noise_image, target_dry })
}

/// SI-SDR of the mixture and of the extracted image against a reference image,
/// averaged over channels.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QualityReport {
    pub mixture_si_sdr: f64,
    pub extracted_si_sdr: f64,
    pub improvement_db: f64,
}

pub fn quality(mixture: &Waveform, extracted: &Waveform, reference: &Waveform) -> Result<QualityReport> {
    if reference.num_channels() != extracted.num_channels() || reference.len() != extracted.len() {
        return Err(Error::invalid(format!(
            "reference has {} channels x {} samples, extraction {} x {}",
            reference.num_channels(),
            reference.len(),
            extracted.num_channels(),
            extracted.len()
        )));
    }
    let mixture_si_sdr = si_sdr_multichannel(mixture.channels(), reference.channels())?;
    let extracted_si_sdr = si_sdr_multichannel(extracted.channels(), reference.channels())?;
    Ok(QualityReport { mixture_si_sdr, extracted_si_sdr, improvement_db: extracted_si_sdr - mixture_si_sdr })
}
