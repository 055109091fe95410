//! Deterministic signal processing on one shared frame grid.
//!
//! Every frame-level quantity (mel frames, F0 frames, duration targets) uses
//! the grid defined by [`MelCfg`]: frame `t` is centred on sample
//! `t * hop_length`, the signal is zero-padded by `n_fft / 2` on both sides,
//! and a signal of `L` samples has `ceil(L / hop_length)` frames.

mod griffin_lim;
mod mel;
mod pitch;
mod resample;
mod stft;
pub mod wav;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use griffin_lim::{griffin_lim, griffin_lim_with_history, mel_to_linear_magnitude};
pub use mel::{
    decode_mel_block, encode_mel_block, hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz,
    read_mel_block, write_mel_block, MelSpectrogram, LOG_FLOOR,
};
pub use pitch::{average_pitch_per_token, extract_f0, PitchContour, VOICING_THRESHOLD};
pub use resample::resample;
pub use stft::{istft, stft, Spectrogram};
pub use wav::{decode_wav, encode_wav, probe_wav, read_wav, write_wav};

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Audio("empty waveform".into()));
        }
        if let Some(s) = samples.iter().find(|s| !(s.abs() <= 1.0 + 1e-6)) {
            return Err(Error::Audio(format!("sample {s} outside [-1, 1]")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Build from unbounded samples by clipping into [-1, 1].
    pub fn clipped(samples: impl IntoIterator<Item = f64>, sample_rate: u32) -> Self {
        Self {
            samples: samples
                .into_iter()
                .map(|s| s.clamp(-1.0, 1.0) as f32)
                .collect(),
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self
            .samples
            .iter()
            .map(|&s| (s as f64).powi(2))
            .sum::<f64>()
            / self.samples.len() as f64)
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelCfg {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MelCfg {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 256,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }
}

impl MelCfg {
    /// Default analysis parameters moved to another sample rate.
    pub fn for_rate(sample_rate: u32) -> Self {
        let d = Self::default();
        Self {
            sample_rate,
            fmax: d.fmax.min(sample_rate as f64 / 2.0),
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("mel cfg: {m}")));
        if self.hop_length == 0 || self.hop_length > self.win_length || self.win_length > self.n_fft
        {
            return bad(format!(
                "need 0 < hop ({}) <= win ({}) <= n_fft ({})",
                self.hop_length, self.win_length, self.n_fft
            ));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be > 0".into());
        }
        if !(0.0 <= self.fmin
            && self.fmin < self.fmax
            && self.fmax <= self.sample_rate as f64 / 2.0)
        {
            return bad(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= sr/2",
                self.fmin, self.fmax
            ));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.hop_length)
    }
}
