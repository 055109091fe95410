//! Autocorrelation F0 tracking on the mel frame grid.
//!
//! Each frame is `win_length` samples centred on `t * hop_length`
//! (zero-padded), mean-removed. For lags `tau` in
//! `[floor(sr / fmax), ceil(sr / fmin)]` the normalized autocorrelation is
//!
//! ```text
//! r(tau) = sum_{n < W - tau} x[n] x[n + tau] / sqrt(E_head(tau) * E_tail(tau))
//! ```
//!
//! where the energies cover the two overlapping segments. Among the local
//! maxima of `r`, the smallest lag whose value reaches `0.9` of the best one is
//! taken, refined by a parabola through its neighbours. The frame is voiced
//! when that peak is at least [`VOICING_THRESHOLD`] and the frame is not
//! digital silence.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{MelCfg, Waveform};
use crate::aligner::DurationTargets;
use crate::{Error, Result};

pub const VOICING_THRESHOLD: f64 = 0.3;
const OCTAVE_TOLERANCE: f64 = 0.9;
const SILENCE_RMS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct PitchContour {
    /// Hz per frame, 0 where unvoiced.
    pub f0_hz: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl PitchContour {
    pub fn n_frames(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn voiced_values(&self) -> Vec<f64> {
        self.f0_hz
            .iter()
            .zip(&self.voiced)
            .filter(|(_, &v)| v)
            .map(|(&f, _)| f)
            .collect()
    }
}

struct Autocorr {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Autocorr {
    fn new(win: usize) -> Self {
        let n = (2 * win).next_power_of_two();
        let mut p = FftPlanner::new();
        Self {
            n,
            fwd: p.plan_fft_forward(n),
            inv: p.plan_fft_inverse(n),
        }
    }

    /// Raw autocorrelation `sum_n x[n] x[n + tau]` for every lag.
    fn run(&self, x: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = (0..self.n)
            .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
            .collect();
        self.fwd.process(&mut buf);
        for c in &mut buf {
            *c = Complex64::new(c.norm_sqr(), 0.0);
        }
        self.inv.process(&mut buf);
        buf.iter()
            .take(x.len())
            .map(|c| c.re / self.n as f64)
            .collect()
    }
}

pub fn extract_f0(
    w: &Waveform,
    cfg: &MelCfg,
    fmin_search: f64,
    fmax_search: f64,
) -> Result<PitchContour> {
    let sr = w.sample_rate as f64;
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "waveform at {} Hz, mel cfg at {} Hz",
            w.sample_rate, cfg.sample_rate
        )));
    }
    if !(fmin_search >= 50.0 && fmax_search <= sr / 4.0 && fmin_search < fmax_search) {
        return Err(Error::Config(format!(
            "f0 search range [{fmin_search}, {fmax_search}] must satisfy 50 <= fmin < fmax <= sr/4"
        )));
    }
    let win = cfg.win_length;
    let tau_min = ((sr / fmax_search).floor() as usize).max(2);
    let tau_max = ((sr / fmin_search).ceil() as usize).min(win - 2);
    if tau_max <= tau_min + 1 {
        return Err(Error::Config(
            "window too short for the f0 search range".into(),
        ));
    }
    let n_frames = cfg.n_frames(w.len());
    let ac = Autocorr::new(win);
    let mut f0_hz = vec![0.0; n_frames];
    let mut voiced = vec![false; n_frames];
    let mut frame = vec![0.0; win];
    let mut sq_prefix = vec![0.0; win + 1];
    for t in 0..n_frames {
        let start = (t * cfg.hop_length) as isize - (win / 2) as isize;
        for (n, v) in frame.iter_mut().enumerate() {
            let idx = start + n as isize;
            *v = if idx >= 0 && (idx as usize) < w.len() {
                w.samples[idx as usize] as f64
            } else {
                0.0
            };
        }
        let mean = frame.iter().sum::<f64>() / win as f64;
        frame.iter_mut().for_each(|v| *v -= mean);
        let energy: f64 = frame.iter().map(|v| v * v).sum();
        if (energy / win as f64).sqrt() < SILENCE_RMS {
            continue;
        }
        for n in 0..win {
            sq_prefix[n + 1] = sq_prefix[n] + frame[n] * frame[n];
        }
        let raw = ac.run(&frame);
        let r = |tau: usize| -> f64 {
            let head = sq_prefix[win - tau];
            let tail = sq_prefix[win] - sq_prefix[tau];
            let d = (head * tail).sqrt();
            if d > 0.0 {
                raw[tau] / d
            } else {
                0.0
            }
        };
        let rs: Vec<f64> = (tau_min - 1..=tau_max + 1).map(r).collect();
        let at = |tau: usize| rs[tau + 1 - tau_min];
        let peaks: Vec<usize> = (tau_min..=tau_max)
            .filter(|&tau| at(tau) > at(tau - 1) && at(tau) >= at(tau + 1))
            .collect();
        let Some(best) = peaks.iter().map(|&tau| at(tau)).max_by(f64::total_cmp) else {
            continue;
        };
        if best < VOICING_THRESHOLD {
            continue;
        }
        let tau = *peaks
            .iter()
            .find(|&&tau| at(tau) >= OCTAVE_TOLERANCE * best)
            .expect("best peak qualifies");
        let (a, b, c) = (at(tau - 1), at(tau), at(tau + 1));
        let denom = a - 2.0 * b + c;
        let delta = if denom.abs() > 1e-12 {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        f0_hz[t] = (sr / (tau as f64 + delta)).clamp(fmin_search, fmax_search);
        voiced[t] = true;
    }
    Ok(PitchContour { f0_hz, voiced })
}

/// Mean F0 over each token's voiced frames; 0 for tokens with none.
pub fn average_pitch_per_token(pc: &PitchContour, durations: &DurationTargets) -> Result<Vec<f64>> {
    let total: usize = durations.durations.iter().map(|&d| d as usize).sum();
    if total != pc.n_frames() {
        return Err(Error::Shape(format!(
            "durations sum to {total} but contour has {} frames",
            pc.n_frames()
        )));
    }
    let mut out = Vec::with_capacity(durations.durations.len());
    let mut pos = 0;
    for &d in &durations.durations {
        let span = pos..pos + d as usize;
        let (sum, count) = span
            .clone()
            .filter(|&i| pc.voiced[i])
            .fold((0.0, 0usize), |(s, c), i| (s + pc.f0_hz[i], c + 1));
        out.push(if count > 0 { sum / count as f64 } else { 0.0 });
        pos = span.end;
    }
    Ok(out)
}
