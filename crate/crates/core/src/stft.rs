//! Multichannel STFT with a Hamming analysis window and weighted overlap-add
//! synthesis.
//!
//! Framing convention: the signal is preceded by `win - hop` zeros and followed by
//! enough zeros to complete the last frame, so the frame count is
//! `J = ceil((len + win - hop) / hop)`. For 8.7 s at 16 kHz with a 1024-sample
//! window and 512-sample hop this gives `I = 513`, `J = 273`. Synthesis divides
//! the overlap-added, re-windowed frames by the summed squared window, which
//! reconstructs every sample exactly (up to rounding) for any hop not exceeding
//! the window length.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linalg::C64;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("waveform needs at least one channel"));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::invalid("waveform channels differ in length"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(Waveform { channels, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Self {
        Waveform {
            channels: vec![vec![0.0; len]; channels],
            sample_rate,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.channels[m]
    }

    pub fn channel_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.channels[m]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn truncated(mut self, len: usize) -> Self {
        for c in &mut self.channels {
            c.truncate(len);
        }
        self
    }

    /// Total energy summed over channels.
    pub fn energy(&self) -> f64 {
        self.channels.iter().flatten().map(|x| x * x).sum()
    }
}

/// `I x J x M` complex tensor, laid out so that the `M` channel values of one
/// time-frequency slot are contiguous: index `(i * J + j) * M + m`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    freq_bins: usize,
    frames: usize,
    channels: usize,
    values: Vec<C64>,
}

impl ComplexSpectrogram {
    pub fn zeros(freq_bins: usize, frames: usize, channels: usize) -> Self {
        ComplexSpectrogram {
            freq_bins,
            frames,
            channels,
            values: vec![C64::new(0.0, 0.0); freq_bins * frames * channels],
        }
    }

    pub fn from_values(freq_bins: usize, frames: usize, channels: usize, values: Vec<C64>) -> Result<Self> {
        if values.len() != freq_bins * frames * channels {
            return Err(Error::invalid(format!(
                "spectrogram of shape {freq_bins}x{frames}x{channels} needs {} values, got {}",
                freq_bins * frames * channels,
                values.len()
            )));
        }
        Ok(ComplexSpectrogram { freq_bins, frames, channels, values })
    }

    pub fn freq_bins(&self) -> usize {
        self.freq_bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Observation vector of slot `(i, j)`.
    #[inline]
    pub fn slot(&self, i: usize, j: usize) -> &[C64] {
        let start = (i * self.frames + j) * self.channels;
        &self.values[start..start + self.channels]
    }

    #[inline]
    pub fn slot_mut(&mut self, i: usize, j: usize) -> &mut [C64] {
        let start = (i * self.frames + j) * self.channels;
        &mut self.values[start..start + self.channels]
    }

    /// All `J * M` values of frequency bin `i`.
    #[inline]
    pub fn bin(&self, i: usize) -> &[C64] {
        let n = self.frames * self.channels;
        &self.values[i * n..(i + 1) * n]
    }

    pub fn bins_mut(&mut self) -> std::slice::ChunksExactMut<'_, C64> {
        let n = self.frames * self.channels;
        self.values.chunks_exact_mut(n)
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize, m: usize) -> C64 {
        self.values[(i * self.frames + j) * self.channels + m]
    }

    /// Single-channel spectrogram of channel `m`.
    pub fn channel(&self, m: usize) -> ComplexSpectrogram {
        let values = self.values.chunks_exact(self.channels).map(|s| s[m]).collect();
        ComplexSpectrogram {
            freq_bins: self.freq_bins,
            frames: self.frames,
            channels: 1,
            values,
        }
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> ComplexSpectrogram {
        ComplexSpectrogram {
            values: self.values.iter().map(|&z| f(z)).collect(),
            ..self.clone()
        }
    }
}

/// Frame geometry in samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub win_len: usize,
    pub hop: usize,
}

impl StftConfig {
    pub fn from_ms(win_ms: f64, hop_ms: f64, sample_rate: u32) -> Result<Self> {
        if !(hop_ms > 0.0 && win_ms > hop_ms) {
            return Err(Error::invalid(format!(
                "window ({win_ms} ms) must exceed hop ({hop_ms} ms) > 0"
            )));
        }
        let win_len = (win_ms * 1e-3 * sample_rate as f64).round() as usize;
        let hop = (hop_ms * 1e-3 * sample_rate as f64).round() as usize;
        if win_len < 2 || hop == 0 || hop > win_len {
            return Err(Error::invalid(format!(
                "window of {win_len} samples and hop of {hop} samples are unusable"
            )));
        }
        Ok(StftConfig { win_len, hop })
    }

    pub fn freq_bins(&self) -> usize {
        self.win_len / 2 + 1
    }

    pub fn front_pad(&self) -> usize {
        self.win_len - self.hop
    }

    pub fn frames_for(&self, len: usize) -> usize {
        (len + self.front_pad()).div_ceil(self.hop)
    }

    /// Periodic Hamming window.
    pub fn window(&self) -> Vec<f64> {
        let n = self.win_len as f64;
        (0..self.win_len)
            .map(|k| 0.54 - 0.46 * (2.0 * PI * k as f64 / n).cos())
            .collect()
    }

    pub fn analyze(&self, w: &Waveform) -> Result<ComplexSpectrogram> {
        if w.is_empty() {
            return Err(Error::invalid("cannot analyze an empty waveform"));
        }
        let (win_len, hop, pad) = (self.win_len, self.hop, self.front_pad());
        let frames = self.frames_for(w.len());
        let bins = self.freq_bins();
        let m_count = w.num_channels();
        let window = self.window();
        let fft = plan(win_len, false);
        let mut out = ComplexSpectrogram::zeros(bins, frames, m_count);
        let mut buf = vec![C64::new(0.0, 0.0); win_len];
        for (m, samples) in w.channels().iter().enumerate() {
            for j in 0..frames {
                let start = j * hop;
                for (k, z) in buf.iter_mut().enumerate() {
                    let t = (start + k) as isize - pad as isize;
                    let x = if t >= 0 && (t as usize) < samples.len() { samples[t as usize] } else { 0.0 };
                    *z = C64::new(x * window[k], 0.0);
                }
                fft.process(&mut buf);
                for i in 0..bins {
                    out.values[(i * frames + j) * m_count + m] = buf[i];
                }
            }
        }
        Ok(out)
    }

    /// Inverse transform; returns `J * hop` samples per channel, the first of
    /// which aligns with the first analyzed sample.
    pub fn synthesize(&self, s: &ComplexSpectrogram, sample_rate: u32) -> Result<Waveform> {
        if s.freq_bins() != self.freq_bins() {
            return Err(Error::invalid(format!(
                "spectrogram has {} bins but the configured window implies {}",
                s.freq_bins(),
                self.freq_bins()
            )));
        }
        let (win_len, hop, pad) = (self.win_len, self.hop, self.front_pad());
        let frames = s.frames();
        let padded_len = (frames.max(1) - 1) * hop + win_len;
        let window = self.window();
        let mut norm = vec![0.0; padded_len];
        for j in 0..frames {
            for (k, w) in window.iter().enumerate() {
                norm[j * hop + k] += w * w;
            }
        }
        let ifft = plan(win_len, true);
        let bins = s.freq_bins();
        let scale = 1.0 / win_len as f64;
        let mut buf = vec![C64::new(0.0, 0.0); win_len];
        let mut channels = Vec::with_capacity(s.channels());
        for m in 0..s.channels() {
            let mut acc = vec![0.0; padded_len];
            for j in 0..frames {
                for i in 0..bins {
                    buf[i] = s.get(i, j, m);
                }
                // Hermitian extension of the one-sided spectrum.
                for i in bins..win_len {
                    buf[i] = buf[win_len - i].conj();
                }
                buf[0].im = 0.0;
                if win_len % 2 == 0 {
                    buf[win_len / 2].im = 0.0;
                }
                ifft.process(&mut buf);
                for (k, w) in window.iter().enumerate() {
                    acc[j * hop + k] += buf[k].re * scale * w;
                }
            }
            let out_len = frames * hop;
            let samples = (0..out_len)
                .map(|t| {
                    let p = t + pad;
                    if p < padded_len && norm[p] > 0.0 { acc[p] / norm[p] } else { 0.0 }
                })
                .collect();
            channels.push(samples);
        }
        Waveform::new(channels, sample_rate)
    }
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    }
}

pub fn stft_analyze(w: &Waveform, win_ms: f64, hop_ms: f64) -> Result<ComplexSpectrogram> {
    StftConfig::from_ms(win_ms, hop_ms, w.sample_rate())?.analyze(w)
}

pub fn stft_synthesize(
    s: &ComplexSpectrogram,
    win_ms: f64,
    hop_ms: f64,
    sample_rate: u32,
) -> Result<Waveform> {
    StftConfig::from_ms(win_ms, hop_ms, sample_rate)?.synthesize(s, sample_rate)
}
