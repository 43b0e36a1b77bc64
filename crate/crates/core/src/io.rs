//! File formats: WAV audio, the post-ILRMA checkpoint, JSON reports and
//! line-delimited JSON traces.
//!
//! # Checkpoint (`schema_version` 1)
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "sample_rate": 16000, "signal_len": 139200, "win_len": 1024, "hop": 512,
//!   "bins": 513, "frames": 273, "channels": 4, "bases": 10, "target": 0,
//!   "x":     [[re, im], ...],      // bins*frames*channels, index (i*J + j)*M + m
//!   "w":     [[re, im], ...],      // bins*channels*channels, row-major per bin
//!   "nmf_t": [...],                // channels*bins*bases, index (n*I + i)*K + k
//!   "nmf_v": [...]                 // channels*bases*frames, index (n*K + k)*J + j
//! }
//! ```
//!
//! Complex numbers are `[re, im]` pairs and floats round-trip exactly, so a
//! restored stage feeds every backend bit-identical inputs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ilrma::{DemixingSet, NmfModel};
use crate::linalg::{CMatrix, C64};
use crate::stft::{ComplexSpectrogram, Waveform};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavFormat {
    Pcm16,
    #[default]
    Float32,
}

impl std::str::FromStr for WavFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcm16" => Ok(WavFormat::Pcm16),
            "float32" => Ok(WavFormat::Float32),
            other => Err(Error::invalid(format!("unknown WAV format `{other}` (expected pcm16 or float32)"))),
        }
    }
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::format(path, e))?;
    let spec = reader.spec();
    let ch = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader.samples::<i32>().map(|s| s.map(|v| v as f64 * scale)).collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| Error::format(path, e))?;
    let mut channels = vec![Vec::with_capacity(interleaved.len() / ch.max(1)); ch];
    for frame in interleaved.chunks_exact(ch) {
        for (c, &v) in channels.iter_mut().zip(frame) {
            c.push(v);
        }
    }
    Waveform::new(channels, spec.sample_rate).map_err(|e| Error::format(path, e))
}

/// PCM16 clips to `[-1, 1]`; float32 stores samples as they are.
pub fn write_wav(path: &Path, w: &Waveform, format: WavFormat) -> Result<()> {
    let (bits, sample_format) = match format {
        WavFormat::Pcm16 => (16, hound::SampleFormat::Int),
        WavFormat::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec { channels: w.num_channels() as u16, sample_rate: w.sample_rate(), bits_per_sample: bits, sample_format };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| Error::format(path, e))?;
    for t in 0..w.len() {
        for c in w.channels() {
            let r = match format {
                WavFormat::Pcm16 => writer.write_sample((c[t].clamp(-1.0, 1.0) * 32767.0).round() as i16),
                WavFormat::Float32 => writer.write_sample(c[t] as f32),
            };
            r.map_err(|e| Error::format(path, e))?;
        }
    }
    writer.finalize().map_err(|e| Error::format(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::format(path, e))?;
    out.write_all(b"\n").and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::format(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = create(path)?;
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::format(path, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Everything needed to rerun the estimation stage without repeating ILRMA.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub sample_rate: u32,
    pub signal_len: usize,
    pub win_len: usize,
    pub hop: usize,
    pub bins: usize,
    pub frames: usize,
    pub channels: usize,
    pub bases: usize,
    pub target: usize,
    pub x: Vec<[f64; 2]>,
    pub w: Vec<[f64; 2]>,
    pub nmf_t: Vec<f64>,
    pub nmf_v: Vec<f64>,
}

fn pairs(values: &[C64]) -> Vec<[f64; 2]> {
    values.iter().map(|v| [v.re, v.im]).collect()
}

fn unpairs(values: &[[f64; 2]]) -> Vec<C64> {
    values.iter().map(|p| C64::new(p[0], p[1])).collect()
}

/// Stage-boundary state: observation, demixing, NMF model and target index.
#[derive(Clone, Debug)]
pub struct StageState {
    pub x: ComplexSpectrogram,
    pub demixing: DemixingSet,
    pub nmf: NmfModel,
    pub target: usize,
    pub sample_rate: u32,
    pub signal_len: usize,
    pub win_len: usize,
    pub hop: usize,
}

impl Checkpoint {
    pub fn from_state(s: &StageState) -> Self {
        let w: Vec<C64> = s.demixing.w.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            sample_rate: s.sample_rate,
            signal_len: s.signal_len,
            win_len: s.win_len,
            hop: s.hop,
            bins: s.x.freq_bins(),
            frames: s.x.frames(),
            channels: s.x.channels(),
            bases: s.nmf.bases,
            target: s.target,
            x: pairs(s.x.values()),
            w: pairs(&w),
            nmf_t: s.nmf.t.iter().flatten().copied().collect(),
            nmf_v: s.nmf.v.iter().flatten().copied().collect(),
        }
    }

    pub fn into_state(self) -> Result<StageState> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "checkpoint schema version {} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let (ib, jb, m, k) = (self.bins, self.frames, self.channels, self.bases);
        let expect = |name: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::invalid(format!("checkpoint field `{name}` has {got} entries, expected {want}")))
            }
        };
        expect("x", self.x.len(), ib * jb * m)?;
        expect("w", self.w.len(), ib * m * m)?;
        expect("nmf_t", self.nmf_t.len(), m * ib * k)?;
        expect("nmf_v", self.nmf_v.len(), m * k * jb)?;
        if self.target >= m {
            return Err(Error::invalid(format!("checkpoint target {} out of range for {m} channels", self.target)));
        }
        let x = ComplexSpectrogram::from_values(ib, jb, m, unpairs(&self.x))?;
        let w = unpairs(&self.w)
            .chunks_exact(m * m)
            .map(|c| CMatrix::from_row_major(m, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let nmf = NmfModel {
            bins: ib,
            bases: k,
            frames: jb,
            sources: m,
            t: self.nmf_t.chunks_exact(ib * k).map(<[f64]>::to_vec).collect(),
            v: self.nmf_v.chunks_exact(k * jb).map(<[f64]>::to_vec).collect(),
        };
        Ok(StageState {
            x,
            demixing: DemixingSet::from_demixing(w)?,
            nmf,
            target: self.target,
            sample_rate: self.sample_rate,
            signal_len: self.signal_len,
            win_len: self.win_len,
            hop: self.hop,
        })
    }
}

pub fn save_checkpoint(path: &Path, s: &StageState) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer(&mut out, &Checkpoint::from_state(s)).map_err(|e| Error::format(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<StageState> {
    read_json::<Checkpoint>(path)?.into_state().map_err(|e| Error::format(path, e))
}
