use serde::{Deserialize, Serialize};

use crate::dsp::{extract_f0, mel_spectrogram, MelCfg, Waveform, LOG_FLOOR};
use crate::{Error, Result};

/// Normal-approximation factor for a two-sided 95% interval.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosReport {
    pub mean: f64,
    /// `1.96 * sd / sqrt(n)` with the sample (n - 1) standard deviation.
    pub ci95: f64,
    pub n: usize,
    pub scores: Vec<f64>,
}

impl MosReport {
    /// `"3.10 ± 0.12"`.
    pub fn display(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.ci95)
    }
}

pub fn aggregate_mos(scores: &[f64]) -> Result<MosReport> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "MOS needs at least 2 scores, got {n}"
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InsufficientData(format!("non-finite MOS score {s}")));
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(MosReport {
        mean,
        ci95: Z95 * var.sqrt() / (n as f64).sqrt(),
        n,
        scores: scores.to_vec(),
    })
}

/// Deterministic stand-in for a learned MOS predictor, used when no external
/// adapter is configured. It rewards peaky (non-flat) spectra and voicing:
/// `clamp(1 + 2.5 (1 - flatness) + 1.5 voiced_fraction, 1, 5)`, where
/// flatness is the mean over frames of the geometric-over-arithmetic mean of
/// mel power. It is not a model of perceived quality.
pub fn builtin_mos(w: &Waveform) -> Result<f64> {
    let cfg = MelCfg::for_rate(w.sample_rate);
    let m = mel_spectrogram(w, &cfg)?;
    let mut flat = 0.0;
    for t in 0..m.n_frames {
        let f = m.frame(t);
        let geo = f.iter().sum::<f64>() / f.len() as f64;
        let arith = f.iter().map(|x| x.exp()).sum::<f64>() / f.len() as f64;
        flat += if arith > LOG_FLOOR {
            (geo.exp() / arith).min(1.0)
        } else {
            1.0
        };
    }
    flat /= m.n_frames.max(1) as f64;
    let pc = extract_f0(w, &cfg, 60.0, 600.0f64.min(w.sample_rate as f64 / 4.0))?;
    let voiced = pc.voiced.iter().filter(|&&v| v).count() as f64 / pc.n_frames().max(1) as f64;
    Ok((1.0 + 2.5 * (1.0 - flat) + 1.5 * voiced).clamp(1.0, 5.0))
}
