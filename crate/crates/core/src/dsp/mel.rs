//! Log-mel spectrogram and its binary block format.
//!
//! Mel scale (Slaney): `mel(f) = 3 f / 200` below 1 kHz and
//! `15 + 27 ln(f / 1000) / ln 6.4` above. Band `m` (0-based) is a triangle
//! over the `n_mels + 2` points equally spaced in mel between `fmin` and
//! `fmax`, with corners `f[m] < f[m+1] < f[m+2]` converted back to Hz:
//!
//! ```text
//! W[m][k] = max(0, min((f_k - f[m]) / (f[m+1] - f[m]),
//!                      (f[m+2] - f_k) / (f[m+2] - f[m+1]))) * 2 / (f[m+2] - f[m])
//! ```
//!
//! with `f_k = k * sample_rate / n_fft`. Values are
//! `ln(max(sum_k W[m][k] |X_t[k]|^2, 1e-5))`.
//!
//! Block layout, all little-endian: `b"CTMELB01"`, `n_frames: u32`,
//! `n_mels: u32`, `sample_rate: u32`, `n_fft: u32`, `win_length: u32`,
//! `hop_length: u32`, `fmin: f32`, `fmax: f32`, then `n_frames * n_mels`
//! `f32` values row-major (frame-major).

use std::path::Path;

use le::*;

use super::stft::StftPlan;
use super::{MelCfg, Waveform};
use crate::{fsutil, Error, Result};

pub const LOG_FLOOR: f64 = 1e-5;
const MAGIC: &[u8; 8] = b"CTMELB01";

pub fn hz_to_mel(f: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    if f < 1000.0 {
        f / f_sp
    } else {
        15.0 + (f / 1000.0).ln() / (6.4f64.ln() / 27.0)
    }
}

pub fn mel_to_hz(m: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    if m < 15.0 {
        m * f_sp
    } else {
        1000.0 * ((6.4f64.ln() / 27.0) * (m - 15.0)).exp()
    }
}

/// Band corner frequencies in Hz (`n_mels + 2` points).
pub(crate) fn band_edges(cfg: &MelCfg) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// `n_mels x n_bins` filterbank, row-major.
pub fn mel_filterbank(cfg: &MelCfg) -> Vec<f64> {
    let edges = band_edges(cfg);
    let n_bins = cfg.n_bins();
    let mut w = vec![0.0; cfg.n_mels * n_bins];
    for m in 0..cfg.n_mels {
        let (a, b, c) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (c - a);
        for k in 0..n_bins {
            let f = k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
            let v = ((f - a) / (b - a)).min((c - f) / (c - b)).max(0.0);
            w[m * n_bins + k] = v * norm;
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub n_frames: usize,
    pub n_mels: usize,
    /// `n_frames x n_mels`, row-major.
    pub values: Vec<f64>,
    pub cfg: MelCfg,
}

impl MelSpectrogram {
    pub fn new(values: Vec<f64>, n_frames: usize, cfg: MelCfg) -> Result<Self> {
        if values.len() != n_frames * cfg.n_mels {
            return Err(Error::Shape(format!(
                "mel values {} != {n_frames} x {}",
                values.len(),
                cfg.n_mels
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Audio("non-finite mel value".into()));
        }
        Ok(Self {
            n_frames,
            n_mels: cfg.n_mels,
            values,
            cfg,
        })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_mels..(t + 1) * self.n_mels]
    }
}

pub fn mel_spectrogram(w: &Waveform, cfg: &MelCfg) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "waveform at {} Hz, mel cfg at {} Hz",
            w.sample_rate, cfg.sample_rate
        )));
    }
    if w.len() < cfg.win_length {
        return Err(Error::Audio(format!(
            "waveform of {} samples is shorter than one window ({})",
            w.len(),
            cfg.win_length
        )));
    }
    let x: Vec<f64> = w.samples.iter().map(|&s| s as f64).collect();
    let spec = StftPlan::new(cfg).stft(&x);
    let fb = mel_filterbank(cfg);
    let n_bins = cfg.n_bins();
    let mut values = Vec::with_capacity(spec.n_frames * cfg.n_mels);
    let mut power = vec![0.0; n_bins];
    for t in 0..spec.n_frames {
        for (p, c) in power.iter_mut().zip(spec.frame(t)) {
            *p = c.norm_sqr();
        }
        for m in 0..cfg.n_mels {
            let row = &fb[m * n_bins..(m + 1) * n_bins];
            let e: f64 = row.iter().zip(&power).map(|(a, b)| a * b).sum();
            values.push(e.max(LOG_FLOOR).ln());
        }
    }
    MelSpectrogram::new(values, spec.n_frames, *cfg)
}

pub fn encode_mel_block(m: &MelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + 4 * m.values.len());
    out.extend_from_slice(MAGIC);
    for v in [
        m.n_frames as u32,
        m.n_mels as u32,
        m.cfg.sample_rate,
        m.cfg.n_fft as u32,
        m.cfg.win_length as u32,
        m.cfg.hop_length as u32,
    ] {
        put_u32(&mut out, v);
    }
    put_f32(&mut out, m.cfg.fmin as f32);
    put_f32(&mut out, m.cfg.fmax as f32);
    for &v in &m.values {
        put_f32(&mut out, v as f32);
    }
    out
}

pub fn decode_mel_block(bytes: &[u8]) -> Result<MelSpectrogram> {
    let bad = |m: &str| Error::Audio(format!("mel block: {m}"));
    if bytes.len() < 40 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic or short header"));
    }
    let mut r = Reader::new(&bytes[8..]);
    let n_frames = r.u32()? as usize;
    let n_mels = r.u32()? as usize;
    let cfg = MelCfg {
        sample_rate: r.u32()?,
        n_fft: r.u32()? as usize,
        win_length: r.u32()? as usize,
        hop_length: r.u32()? as usize,
        n_mels,
        fmin: r.f32()? as f64,
        fmax: r.f32()? as f64,
    };
    if r.remaining() != n_frames * n_mels * 4 {
        return Err(bad("payload size does not match header"));
    }
    let values = (0..n_frames * n_mels)
        .map(|_| r.f32().map(|v| v as f64))
        .collect::<Result<Vec<_>>>()?;
    MelSpectrogram::new(values, n_frames, cfg)
}

pub fn write_mel_block(path: &Path, m: &MelSpectrogram) -> Result<()> {
    fsutil::write_atomic(path, &encode_mel_block(m))
}

pub fn read_mel_block(path: &Path) -> Result<MelSpectrogram> {
    decode_mel_block(&fsutil::read(path)?)
}

/// Little-endian readers and writers for the block format.
mod le {
    use crate::{Error, Result};

    pub fn put_u32(out: &mut Vec<u8>, v: u32) {
        out.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f32(out: &mut Vec<u8>, v: f32) {
        out.extend_from_slice(&v.to_le_bytes());
    }

    pub struct Reader<'a> {
        buf: &'a [u8],
        pos: usize,
    }

    impl<'a> Reader<'a> {
        pub fn new(buf: &'a [u8]) -> Self {
            Self { buf, pos: 0 }
        }

        pub fn remaining(&self) -> usize {
            self.buf.len() - self.pos
        }

        fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
            let end = self.pos + N;
            let s = self
                .buf
                .get(self.pos..end)
                .ok_or_else(|| Error::Audio("truncated block".into()))?;
            self.pos = end;
            Ok(s.try_into().unwrap())
        }

        pub fn u32(&mut self) -> Result<u32> {
            self.take::<4>().map(u32::from_le_bytes)
        }

        pub fn f32(&mut self) -> Result<f32> {
            self.take::<4>().map(f32::from_le_bytes)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, n: usize, sr: u32, amp: f64) -> Waveform {
        Waveform::clipped(
            (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / sr as f64).sin()),
            sr,
        )
    }

    #[test]
    fn silence_hits_the_floor_exactly() {
        let cfg = MelCfg::default();
        let m = mel_spectrogram(&Waveform::new(vec![0.0; 4000], 22050).unwrap(), &cfg).unwrap();
        assert!(m.values.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn frame_count_formula() {
        let cfg = MelCfg::default();
        let m = mel_spectrogram(&sine(440.0, 22050, 22050, 0.5), &cfg).unwrap();
        assert_eq!(m.n_frames, 87);
        assert!(mel_spectrogram(&sine(440.0, 1000, 22050, 0.5), &cfg).is_err());
    }

    #[test]
    fn sine_peaks_in_nearest_band() {
        let cfg = MelCfg::default();
        // Hand computation: centres are mel_to_hz(i * hz_to_mel(8000) / 81), i = 1..=80.
        let top = hz_to_mel(8000.0);
        let expected = (1..=80)
            .map(|i| (i - 1, (mel_to_hz(top * i as f64 / 81.0) - 440.0).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        let m = mel_spectrogram(&sine(440.0, 22050, 22050, 0.5), &cfg).unwrap();
        let mid = m.frame(40);
        let arg = (0..80).max_by(|&a, &b| mid[a].total_cmp(&mid[b])).unwrap();
        assert_eq!(arg, expected);
    }

    #[test]
    fn mel_scale_round_trips() {
        for f in [0.0, 440.0, 999.0, 1000.0, 4321.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn block_round_trip() {
        let cfg = MelCfg::default();
        let m = mel_spectrogram(&sine(300.0, 3000, 22050, 0.3), &cfg).unwrap();
        let back = decode_mel_block(&encode_mel_block(&m)).unwrap();
        assert_eq!(back.n_frames, m.n_frames);
        assert_eq!(back.cfg, m.cfg);
        for (a, b) in back.values.iter().zip(&m.values) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let bytes = encode_mel_block(&m);
        assert!(decode_mel_block(&bytes[..bytes.len() - 2]).is_err());
    }
}
