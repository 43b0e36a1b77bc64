//! Deterministic synthetic scenarios.
//!
//! A uniform linear array receives one directional target and a set of
//! directional interferers whose sum approximates diffuse noise. Propagation is
//! anechoic: every source is filtered by its far-field steering vector over the
//! whole-signal spectrum. Also hosts the random model instances used by the
//! verification suite and benchmarks.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eig, ComplexVector, HermitianMatrix, C64, DEFAULT_RANK_TOL};
use crate::model::{RcscmInputs, RcscmParams};
use crate::stft::{ComplexSpectrogram, Waveform, DEFAULT_SAMPLE_RATE};

pub const SPEED_OF_SOUND: f64 = 343.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub mics: usize,
    /// Inter-element spacing in meters.
    pub spacing: f64,
    pub speed_of_sound: f64,
    pub sample_rate: u32,
}

/// Far-field response `exp(-j 2 pi f m d sin(theta) / c)`; the first element is 1.
/// `doa_deg` is measured from broadside.
pub fn steering_vector(geometry: &ArrayGeometry, doa_deg: f64, freq: f64) -> Result<ComplexVector> {
    if !(doa_deg.abs() <= 90.0) {
        return Err(Error::invalid(format!("direction {doa_deg} deg outside [-90, 90]")));
    }
    let nyquist = geometry.sample_rate as f64 / 2.0;
    if !(0.0..=nyquist).contains(&freq) {
        return Err(Error::invalid(format!("frequency {freq} Hz outside [0, {nyquist}]")));
    }
    let delay = geometry.spacing * doa_deg.to_radians().sin() / geometry.speed_of_sound;
    Ok(ComplexVector::new(
        (0..geometry.mics).map(|m| C64::from_polar(1.0, -2.0 * PI * freq * m as f64 * delay)).collect(),
    ))
}

fn default_noise_doas() -> Vec<f64> {
    (0..19).map(|k| -90.0 + 10.0 * k as f64).collect()
}

/// Scenario description, read from a flat TOML file.
///
/// ```toml
/// mics = 4
/// spacing = 0.05
/// target_doa = 30.0
/// noise_doas = [-90.0, -80.0, 0.0, 80.0, 90.0]
/// snr_db = 0.0
/// duration = 8.7
/// seed = 0
/// # optional material; generated signals are used when absent
/// target_wav = "speech.wav"
/// noise_wavs = ["babble1.wav", "babble2.wav"]
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub mics: usize,
    pub spacing: f64,
    pub speed_of_sound: f64,
    pub sample_rate: u32,
    pub target_doa: f64,
    /// Empty for a noise-free scene.
    pub noise_doas: Vec<f64>,
    pub snr_db: f64,
    /// Seconds.
    pub duration: f64,
    pub seed: u64,
    /// Peak amplitude of the rendered mixture.
    pub peak: f64,
    pub target_wav: Option<PathBuf>,
    pub noise_wavs: Vec<PathBuf>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            mics: 4,
            spacing: 0.05,
            speed_of_sound: SPEED_OF_SOUND,
            sample_rate: DEFAULT_SAMPLE_RATE,
            target_doa: 30.0,
            noise_doas: default_noise_doas(),
            snr_db: 0.0,
            duration: 8.7,
            seed: 0,
            peak: 0.9,
            target_wav: None,
            noise_wavs: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.mics < 2 {
            return Err(Error::invalid("scenario needs at least two microphones"));
        }
        if !(self.spacing > 0.0 && self.speed_of_sound > 0.0 && self.duration > 0.0 && self.sample_rate > 0) {
            return Err(Error::invalid("spacing, speed of sound, duration and sample rate must be positive"));
        }
        if !self.snr_db.is_finite() || !(self.peak > 0.0) {
            return Err(Error::invalid("snr_db must be finite and peak positive"));
        }
        for &d in std::iter::once(&self.target_doa).chain(&self.noise_doas) {
            if !(d.abs() <= 90.0) {
                return Err(Error::invalid(format!("direction {d} deg outside [-90, 90]")));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> ArrayGeometry {
        ArrayGeometry { mics: self.mics, spacing: self.spacing, speed_of_sound: self.speed_of_sound, sample_rate: self.sample_rate }
    }

    pub fn num_samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub mixture: Waveform,
    pub target_image: Waveform,
    pub noise_image: Waveform,
}

/// Filters a mono signal by the array response of one direction.
fn spatialize(geometry: &ArrayGeometry, doa: f64, signal: &[f64], planner: &mut FftPlanner<f64>) -> Result<Vec<Vec<f64>>> {
    let n = signal.len();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut spec: Vec<C64> = signal.iter().map(|&s| C64::new(s, 0.0)).collect();
    fwd.process(&mut spec);
    let fs = geometry.sample_rate as f64;
    let half = n / 2;
    let responses = (0..=half).map(|k| steering_vector(geometry, doa, k as f64 * fs / n as f64)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(geometry.mics);
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for m in 0..geometry.mics {
        buf[0] = spec[0] * responses[0][m];
        for k in 1..n {
            buf[k] = if k <= half { spec[k] * responses[k][m] } else { spec[k] * responses[n - k][m].conj() };
        }
        if n.is_multiple_of(2) && n > 0 {
            // keep the Nyquist bin real so the output stays real
            buf[half] = C64::new((spec[half] * responses[half][m]).re, 0.0);
        }
        inv.process(&mut buf);
        out.push(buf.iter().map(|v| v.re / n as f64).collect());
    }
    Ok(out)
}

fn power(channels: &[Vec<f64>]) -> f64 {
    channels.iter().flatten().map(|v| v * v).sum()
}

/// Renders source images and their sum. The noise image is stored as
/// `mixture - target_image`, so the three waveforms partition exactly.
pub fn render_mixture(scenario: &Scenario, target: &[f64], noises: &[Vec<f64>]) -> Result<Mixture> {
    scenario.validate()?;
    if noises.len() != scenario.noise_doas.len() {
        return Err(Error::invalid(format!(
            "{} noise waveforms for {} noise directions",
            noises.len(),
            scenario.noise_doas.len()
        )));
    }
    let n = target.len();
    if n == 0 || noises.iter().any(|w| w.len() != n) {
        return Err(Error::invalid("source waveforms must be nonempty and equally long"));
    }
    let geometry = scenario.geometry();
    let mut planner = FftPlanner::new();
    let mut target_img = spatialize(&geometry, scenario.target_doa, target, &mut planner)?;
    let mut noise_img = vec![vec![0.0; n]; scenario.mics];
    for (&doa, w) in scenario.noise_doas.iter().zip(noises) {
        for (acc, ch) in noise_img.iter_mut().zip(spatialize(&geometry, doa, w, &mut planner)?) {
            acc.iter_mut().zip(ch).for_each(|(a, v)| *a += v);
        }
    }
    let (pt, pn) = (power(&target_img), power(&noise_img));
    let noise_gain = if pn > 0.0 { (pt / pn * 10f64.powf(-scenario.snr_db / 10.0)).sqrt() } else { 0.0 };
    noise_img.iter_mut().flatten().for_each(|v| *v *= noise_gain);
    let peak = target_img.iter().zip(&noise_img).flat_map(|(t, u)| t.iter().zip(u).map(|(a, b)| (a + b).abs())).fold(0.0, f64::max);
    let gain = if peak > 0.0 { scenario.peak / peak } else { 1.0 };
    target_img.iter_mut().chain(noise_img.iter_mut()).flatten().for_each(|v| *v *= gain);
    let mixture: Vec<Vec<f64>> =
        target_img.iter().zip(&noise_img).map(|(t, u)| t.iter().zip(u).map(|(a, b)| a + b).collect()).collect();
    let noise_img: Vec<Vec<f64>> =
        mixture.iter().zip(&target_img).map(|(x, t)| x.iter().zip(t).map(|(a, b)| a - b).collect()).collect();
    let fs = scenario.sample_rate;
    Ok(Mixture {
        mixture: Waveform::new(mixture, fs)?,
        target_image: Waveform::new(target_img, fs)?,
        noise_image: Waveform::new(noise_img, fs)?,
    })
}

/// Voiced syllables with gliding pitch and two formant resonances, separated by
/// short pauses. Deterministic in `seed`.
pub fn speech_like(len: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let mut out = vec![0.0; len];
    let mut pos = (rng.random_range(0.05..0.15) * fs) as usize;
    while pos < len {
        let dur = (rng.random_range(0.15..0.35) * fs) as usize;
        let f0_start: f64 = rng.random_range(100.0..220.0);
        let f0_end = f0_start * rng.random_range(0.8..1.25);
        let formants = [rng.random_range(300.0..900.0), rng.random_range(900.0..2500.0)];
        let level = rng.random_range(0.5..1.0);
        let n_harm = (4000.0 / f0_start.max(f0_end)) as usize;
        let gains: Vec<f64> = (1..=n_harm)
            .map(|h| {
                let f = h as f64 * f0_start;
                formants.iter().map(|&c| (-((f - c) / 250.0).powi(2)).exp()).sum::<f64>() + 0.05 / h as f64
            })
            .collect();
        let mut phase = 0.0;
        for t in 0..dur.min(len - pos) {
            let u = t as f64 / dur as f64;
            let f0 = f0_start + (f0_end - f0_start) * u;
            phase += 2.0 * PI * f0 / fs;
            let env = (PI * u).sin().powi(2);
            let v: f64 = gains.iter().enumerate().map(|(h, g)| g * ((h + 1) as f64 * phase).sin()).sum();
            out[pos + t] = level * env * v;
        }
        pos += dur + (rng.random_range(0.05..0.2) * fs) as usize;
    }
    out
}

pub fn gaussian_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Source signals for a scenario without external material: a speech-like
/// target and one independent Gaussian noise per direction.
pub fn default_sources(scenario: &Scenario) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = scenario.num_samples();
    let base = scenario.seed.wrapping_mul(1000);
    let target = speech_like(n, scenario.sample_rate, base);
    let noises = (0..scenario.noise_doas.len()).map(|k| gaussian_noise(n, base + 1 + k as u64)).collect();
    (target, noises)
}

/// Renders a scenario from generated sources.
pub fn generate(scenario: &Scenario) -> Result<Mixture> {
    let (target, noises) = default_sources(scenario);
    render_mixture(scenario, &target, &noises)
}

/// A random, well-conditioned problem for the EM backends.
#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub inputs: RcscmInputs,
    pub params0: RcscmParams,
    pub x: ComplexSpectrogram,
}

fn complex_gaussian(rng: &mut impl Rng) -> C64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    C64::new(rng.sample::<f64, _>(StandardNormal) * s, rng.sample::<f64, _>(StandardNormal) * s)
}

/// Random unitary matrix as the eigenvectors of a random Hermitian matrix.
pub fn random_unitary(m: usize, rng: &mut impl Rng) -> Vec<ComplexVector> {
    let mut h = HermitianMatrix::zeros(m);
    for _ in 0..m + 1 {
        let v: Vec<C64> = (0..m).map(|_| complex_gaussian(rng)).collect();
        h = h.plus_outer(&v, 1.0);
    }
    hermitian_eig(&h).vectors
}

/// Draws `R'` with eigenvalues in `[0.5, 2]` on a random basis, a unit-norm
/// steering vector, observations from the model, and initial parameters in
/// `[0.5, 1.5]`.
pub fn random_instance(seed: u64, bins: usize, frames: usize, mics: usize) -> Result<RandomInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Vec::with_capacity(bins);
    let mut r_prime = Vec::with_capacity(bins);
    let mut values = Vec::with_capacity(bins * frames * mics);
    for _ in 0..bins {
        let basis = random_unitary(mics, &mut rng);
        let mut eig: Vec<f64> = (0..mics).map(|_| rng.random_range(0.5..2.0)).collect();
        eig[0] = 0.0;
        let rp = HermitianMatrix::from_eigen(&eig, &basis);
        let raw: Vec<C64> = (0..mics).map(|_| complex_gaussian(&mut rng)).collect();
        let av = ComplexVector::new(raw);
        let av = av.scaled(C64::new(1.0 / av.norm(), 0.0));
        let lambda_true = rng.random_range(0.2..1.0);
        for _ in 0..frames {
            let s = complex_gaussian(&mut rng) * rng.random_range(0.2..2.0f64).sqrt();
            let noise_scale = rng.random_range(0.2..2.0f64).sqrt();
            for p in 0..mics {
                let mut v = av[p] * s;
                for (q, e) in basis.iter().enumerate() {
                    let var = if q == 0 { lambda_true } else { eig[q] };
                    v += e[p] * complex_gaussian(&mut rng) * (var.sqrt() * noise_scale);
                }
                values.push(v);
            }
        }
        a.push(av);
        r_prime.push(rp);
    }
    let x = ComplexSpectrogram::from_values(bins, frames, mics, values)?;
    let inputs = RcscmInputs::from_parts(0, a, r_prime, DEFAULT_RANK_TOL)?;
    let mut params0 = RcscmParams::filled(bins, frames, 1.0, 1.0, 1.0);
    for v in params0.r_h.iter_mut().chain(params0.r_u.iter_mut()).chain(params0.lambda.iter_mut()) {
        *v = rng.random_range(0.5..1.5);
    }
    Ok(RandomInstance { inputs, params0, x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ilrma::sample_covariance;
    use crate::stft::StftConfig;

    fn geom(m: usize) -> ArrayGeometry {
        ArrayGeometry { mics: m, spacing: 0.05, speed_of_sound: SPEED_OF_SOUND, sample_rate: 16000 }
    }

    #[test]
    fn broadside_is_all_ones() {
        let a = steering_vector(&geom(4), 0.0, 1234.0).unwrap();
        assert!(a.iter().all(|v| (v - C64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn endfire_phase_delay() {
        let (f, d) = (1000.0, 0.05);
        let a = steering_vector(&geom(2), 90.0, f).unwrap();
        let expect = -2.0 * PI * f * d / SPEED_OF_SOUND;
        assert!((a[1].arg() - expect).abs() < 1e-12);
        assert_eq!(a[0], C64::new(1.0, 0.0));
    }

    #[test]
    fn distinct_directions_are_not_parallel() {
        let g = geom(4);
        for (t1, t2) in [(30.0, -40.0), (0.0, 60.0), (-90.0, 90.0)] {
            let a1 = steering_vector(&g, t1, 3000.0).unwrap();
            let a2 = steering_vector(&g, t2, 3000.0).unwrap();
            assert!(a1.dot(&a2).norm() / 4.0 < 1.0 - 1e-6);
        }
    }

    #[test]
    fn rejects_invalid_frequency_and_direction() {
        assert!(steering_vector(&geom(2), 0.0, 8001.0).is_err());
        assert!(steering_vector(&geom(2), 91.0, 100.0).is_err());
    }

    fn short_scenario() -> Scenario {
        Scenario { duration: 0.5, ..Scenario::default() }
    }

    #[test]
    fn zero_db_gives_equal_powers_and_exact_partition() {
        let m = generate(&short_scenario()).unwrap();
        let pt = m.target_image.energy();
        let pn = m.noise_image.energy();
        assert!((10.0 * (pt / pn).log10()).abs() < 0.01);
        for c in 0..4 {
            for ((x, t), n) in m.mixture.channel(c).iter().zip(m.target_image.channel(c)).zip(m.noise_image.channel(c)) {
                assert_eq!(x - t - n, 0.0);
            }
        }
    }

    #[test]
    fn silent_noise_leaves_target() {
        let s = short_scenario();
        let (target, noises) = default_sources(&s);
        let zeros = vec![vec![0.0; noises[0].len()]; noises.len()];
        let m = render_mixture(&s, &target, &zeros).unwrap();
        assert_eq!(m.mixture, m.target_image);
    }

    #[test]
    fn reproducible() {
        assert_eq!(generate(&short_scenario()).unwrap(), generate(&short_scenario()).unwrap());
    }

    #[test]
    fn length_mismatch_rejected() {
        let s = short_scenario();
        let (target, mut noises) = default_sources(&s);
        noises[3].pop();
        assert!(render_mixture(&s, &target, &noises).is_err());
        assert!(render_mixture(&s, &target, &noises[1..]).is_err());
    }

    #[test]
    fn diffuse_noise_is_full_rank() {
        let m = generate(&Scenario { duration: 1.0, ..Scenario::default() }).unwrap();
        let spec = StftConfig::from_ms(64.0, 32.0, 16000).unwrap().analyze(&m.noise_image).unwrap();
        for i in [64, 128, 256] {
            let eig = hermitian_eig(&sample_covariance(spec.bin(i), 4));
            // rank-deficient covariances sit at rounding level, far below this
            assert!(eig.values[0] > 1e-4 * eig.values[3], "bin {i}: {:?}", eig.values);
        }
    }

    #[test]
    fn random_instance_is_consistent() {
        let inst = random_instance(3, 4, 10, 3).unwrap();
        inst.inputs.check_shape(&inst.x).unwrap();
        for i in 0..4 {
            assert!((inst.inputs.a[i].norm() - 1.0).abs() < 1e-12);
            assert!(inst.inputs.r_prime[i].mul_vec(&inst.inputs.b[i]).norm() < 1e-12);
        }
    }
}
