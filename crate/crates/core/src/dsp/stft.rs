use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::MelCfg;

/// Complex short-time spectrum, `n_frames x n_bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub n_frames: usize,
    pub n_bins: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }
}

/// Periodic Hann window of `win_length`, zero-padded to `n_fft` and centred.
pub(crate) fn analysis_window(cfg: &MelCfg) -> Vec<f64> {
    let mut w = vec![0.0; cfg.n_fft];
    let off = (cfg.n_fft - cfg.win_length) / 2;
    for i in 0..cfg.win_length {
        w[off + i] = 0.5 - 0.5 * (2.0 * PI * i as f64 / cfg.win_length as f64).cos();
    }
    w
}

pub(crate) struct StftPlan {
    cfg: MelCfg,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    pub fn new(cfg: &MelCfg) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            cfg: *cfg,
            window: analysis_window(cfg),
            fwd: planner.plan_fft_forward(cfg.n_fft),
            inv: planner.plan_fft_inverse(cfg.n_fft),
        }
    }

    pub fn stft(&self, x: &[f64]) -> Spectrogram {
        let n_fft = self.cfg.n_fft;
        let hop = self.cfg.hop_length;
        let half = n_fft / 2;
        let n_frames = self.cfg.n_frames(x.len());
        let n_bins = self.cfg.n_bins();
        let mut data = Vec::with_capacity(n_frames * n_bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        for t in 0..n_frames {
            for (n, b) in buf.iter_mut().enumerate() {
                let idx = (t * hop + n) as isize - half as isize;
                let s = if idx >= 0 && (idx as usize) < x.len() {
                    x[idx as usize]
                } else {
                    0.0
                };
                *b = Complex64::new(s * self.window[n], 0.0);
            }
            self.fwd.process(&mut buf);
            data.extend_from_slice(&buf[..n_bins]);
        }
        Spectrogram {
            n_frames,
            n_bins,
            data,
        }
    }

    /// Least-squares inverse: the signal of `length` samples whose STFT is
    /// closest to `spec` in the full (two-sided) spectrum norm.
    pub fn istft(&self, spec: &Spectrogram, length: usize) -> Vec<f64> {
        let n_fft = self.cfg.n_fft;
        let hop = self.cfg.hop_length;
        let half = n_fft / 2;
        let mut num = vec![0.0; length];
        let mut den = vec![0.0; length];
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        for t in 0..spec.n_frames {
            let fr = spec.frame(t);
            for k in 0..n_fft {
                buf[k] = if k < spec.n_bins {
                    fr[k]
                } else {
                    fr[n_fft - k].conj()
                };
            }
            // DC and Nyquist of a real signal are real.
            buf[0].im = 0.0;
            if n_fft.is_multiple_of(2) {
                buf[half].im = 0.0;
            }
            self.inv.process(&mut buf);
            for n in 0..n_fft {
                let idx = (t * hop + n) as isize - half as isize;
                if idx < 0 || idx as usize >= length {
                    continue;
                }
                let w = self.window[n];
                num[idx as usize] += w * buf[n].re / n_fft as f64;
                den[idx as usize] += w * w;
            }
        }
        num.iter()
            .zip(&den)
            .map(|(&a, &d)| if d > 1e-12 { a / d } else { 0.0 })
            .collect()
    }
}

pub fn stft(x: &[f64], cfg: &MelCfg) -> Spectrogram {
    StftPlan::new(cfg).stft(x)
}

pub fn istft(spec: &Spectrogram, cfg: &MelCfg, length: usize) -> Vec<f64> {
    StftPlan::new(cfg).istft(spec, length)
}
