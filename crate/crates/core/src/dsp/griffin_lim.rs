//! Griffin-Lim phase reconstruction from a log-mel spectrogram.
//!
//! Mel energies are mapped back to linear power with the Moore-Penrose
//! pseudo-inverse of the filterbank (negative values clipped to zero; frames
//! at the log floor are treated as exact zeros). Starting from seeded uniform
//! random phase, each iteration takes the least-squares inverse STFT and
//! re-estimates the phase. The spectral convergence
//! `|| |STFT(x_i)| - S ||_F / ||S||_F`, measured in the two-sided spectrum
//! norm, is non-increasing across iterations.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::mel::{mel_filterbank, MelSpectrogram, LOG_FLOOR};
use super::stft::{Spectrogram, StftPlan};
use super::Waveform;
use crate::{Error, Result};

/// Linear magnitude estimate, `n_frames x n_bins` row-major.
pub fn mel_to_linear_magnitude(m: &MelSpectrogram) -> Result<Vec<f64>> {
    let cfg = &m.cfg;
    cfg.validate()?;
    let n_bins = cfg.n_bins();
    if m.n_mels > n_bins {
        return Err(Error::Config(format!(
            "n_mels {} exceeds n_fft/2+1 = {n_bins}; mel is not invertible",
            m.n_mels
        )));
    }
    let fb = DMatrix::from_row_slice(m.n_mels, n_bins, &mel_filterbank(cfg));
    let pinv = fb
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::Config(format!("filterbank pseudo-inverse: {e}")))?;
    let floor = LOG_FLOOR.ln() + 1e-9;
    let mut out = Vec::with_capacity(m.n_frames * n_bins);
    for t in 0..m.n_frames {
        let power = DMatrix::from_iterator(
            m.n_mels,
            1,
            m.frame(t)
                .iter()
                .map(|&v| if v <= floor { 0.0 } else { v.exp() }),
        );
        let lin = &pinv * power;
        out.extend(lin.iter().map(|&p| p.max(0.0).sqrt()));
    }
    Ok(out)
}

fn spectral_convergence(spec: &Spectrogram, target: &[f64], n_fft: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, (c, &s)) in spec.data.iter().zip(target).enumerate() {
        let k = i % spec.n_bins;
        let weight = if k == 0 || (n_fft.is_multiple_of(2) && k == n_fft / 2) {
            1.0
        } else {
            2.0
        };
        num += weight * (c.norm() - s).powi(2);
        den += weight * s * s;
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        0.0
    }
}

pub fn griffin_lim(m: &MelSpectrogram, iterations: usize, seed: u64) -> Result<Waveform> {
    griffin_lim_with_history(m, iterations, seed).map(|(w, _)| w)
}

/// Returns the waveform and the spectral convergence after each iteration.
pub fn griffin_lim_with_history(
    m: &MelSpectrogram,
    iterations: usize,
    seed: u64,
) -> Result<(Waveform, Vec<f64>)> {
    if iterations < 1 {
        return Err(Error::Config(
            "griffin-lim needs at least one iteration".into(),
        ));
    }
    let cfg = m.cfg;
    let mag = mel_to_linear_magnitude(m)?;
    let plan = StftPlan::new(&cfg);
    let length = m.n_frames * cfg.hop_length;
    let n_bins = cfg.n_bins();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = Spectrogram {
        n_frames: m.n_frames,
        n_bins,
        data: mag
            .iter()
            .map(|&a| Complex64::from_polar(a, rng.gen_range(0.0..2.0 * PI)))
            .collect(),
    };
    let mut x = plan.istft(&spec, length);
    let mut history = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let est = plan.stft(&x);
        history.push(spectral_convergence(&est, &mag, cfg.n_fft));
        for ((c, e), &a) in spec.data.iter_mut().zip(&est.data).zip(&mag) {
            let n = e.norm();
            *c = if n > 1e-12 {
                e * (a / n)
            } else {
                Complex64::new(a, 0.0)
            };
        }
        x = plan.istft(&spec, length);
    }
    Ok((Waveform::clipped(x, cfg.sample_rate), history))
}
