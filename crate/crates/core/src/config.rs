//! Run configuration. Values come from the defaults, then an optional flat TOML
//! file, then command-line overrides, each layer replacing the previous one.
//!
//! ```toml
//! input = "out/synth/mixture.wav"
//! reference = "out/synth/target_image.wav"
//! out = "out/extract"
//! ilrma_iters = 50
//! rcscm_iters = 200
//! bases = 10
//! alpha = 1.1
//! beta = 1e-16
//! backend = "accel2"
//! target_index = 0
//! seed = 0
//! threads = 1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::WavFormat;
use crate::linalg::DEFAULT_RANK_TOL;
use crate::model::Hyperparams;
use crate::solver::Backend;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Mixture WAV for `extract`.
    pub input: Option<PathBuf>,
    /// Ground-truth target image WAV, enables SI-SDR reporting.
    pub reference: Option<PathBuf>,
    /// Scenario TOML for `synth`.
    pub scenario: Option<PathBuf>,
    /// Saved ILRMA stage; when set, `extract` skips analysis and ILRMA.
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub ilrma_iters: usize,
    pub rcscm_iters: usize,
    /// NMF bases per source.
    pub bases: usize,
    pub alpha: f64,
    pub beta: f64,
    pub backend: Backend,
    /// Zero-based ILRMA output treated as the target; chosen by power when absent.
    pub target_index: Option<usize>,
    pub seed: u64,
    pub threads: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub rank_tol: f64,
    pub wav_format: WavFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            reference: None,
            scenario: None,
            checkpoint: None,
            out: PathBuf::from("out"),
            ilrma_iters: 50,
            rcscm_iters: 200,
            bases: 10,
            alpha: 1.1,
            beta: 1e-16,
            backend: Backend::Accel2,
            target_index: None,
            seed: 0,
            threads: 1,
            win_ms: 64.0,
            hop_ms: 32.0,
            rank_tol: DEFAULT_RANK_TOL,
            wav_format: WavFormat::Float32,
        }
    }
}

/// Command-line layer; `None` keeps the value from the layers below.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ilrma_iters: Option<usize>,
    pub rcscm_iters: Option<usize>,
    pub bases: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub backend: Option<Backend>,
    pub target_index: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub wav_format: Option<WavFormat>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e))
    }

    /// Defaults, then `file` if given, then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut c = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        c.apply(overrides);
        c.validate()?;
        Ok(c)
    }

    pub fn apply(&mut self, o: &Overrides) {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        fn set_opt<T: Clone>(dst: &mut Option<T>, src: &Option<T>) {
            if src.is_some() {
                *dst = src.clone();
            }
        }
        set_opt(&mut self.input, &o.input);
        set_opt(&mut self.reference, &o.reference);
        set_opt(&mut self.scenario, &o.scenario);
        set_opt(&mut self.checkpoint, &o.checkpoint);
        set(&mut self.out, &o.out);
        set(&mut self.ilrma_iters, &o.ilrma_iters);
        set(&mut self.rcscm_iters, &o.rcscm_iters);
        set(&mut self.bases, &o.bases);
        set(&mut self.alpha, &o.alpha);
        set(&mut self.beta, &o.beta);
        set(&mut self.backend, &o.backend);
        set_opt(&mut self.target_index, &o.target_index);
        set(&mut self.seed, &o.seed);
        set(&mut self.threads, &o.threads);
        set(&mut self.wav_format, &o.wav_format);
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper()?;
        if self.bases == 0 {
            return Err(Error::invalid("bases must be at least 1"));
        }
        if self.threads == 0 {
            return Err(Error::invalid("threads must be at least 1"));
        }
        if !(self.win_ms > 0.0 && self.hop_ms > 0.0 && self.hop_ms <= self.win_ms) {
            return Err(Error::invalid("need 0 < hop_ms <= win_ms"));
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(Error::invalid("rank_tol must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn hyper(&self) -> Result<Hyperparams> {
        Hyperparams::new(self.alpha, self.beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.ilrma_iters, c.rcscm_iters, c.bases), (50, 200, 10));
        assert_eq!((c.alpha, c.beta), (1.1, 1e-16));
        assert_eq!(c.threads, 1);
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "rcscm_iters = 30\nbackend = \"naive\"\nseed = 4\n").unwrap();
        let o = Overrides { seed: Some(9), ..Overrides::default() };
        let c = RunConfig::resolve(Some(&p), &o).unwrap();
        assert_eq!(c.rcscm_iters, 30);
        assert_eq!(c.backend, Backend::Naive);
        assert_eq!(c.seed, 9);
        assert_eq!(c.ilrma_iters, 50);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml("iterations = 3").is_err());
        let o = Overrides { alpha: Some(-1.0), ..Overrides::default() };
        assert!(RunConfig::resolve(None, &o).is_err());
        let o = Overrides { threads: Some(0), ..Overrides::default() };
        assert!(RunConfig::resolve(None, &o).is_err());
    }
}
