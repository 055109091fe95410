//! Band-limited resampling by direct windowed-sinc interpolation.
//!
//! Output sample `n` sits at input time `t = n * src / dst`. Its value is
//! `sum_k x[k] * h(t - k)` with
//! `h(u) = fc * sinc(fc * u) * blackman(u / (ZEROS / fc))`, where
//! `fc = ROLLOFF * min(1, dst / src)` and the Blackman window
//! `0.42 + 0.5 cos(pi v) + 0.08 cos(2 pi v)` is zero for `|v| >= 1`.
//! Samples outside the input are zero.

use std::f64::consts::PI;

use super::Waveform;
use crate::corpus::SUPPORTED_RATES;
use crate::{Error, Result};

const ZEROS: f64 = 32.0;
const ROLLOFF: f64 = 0.97;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(v: f64) -> f64 {
    if v.abs() >= 1.0 {
        0.0
    } else {
        0.42 + 0.5 * (PI * v).cos() + 0.08 * (2.0 * PI * v).cos()
    }
}

pub fn resample(w: &Waveform, target_sr: u32) -> Result<Waveform> {
    if !SUPPORTED_RATES.contains(&target_sr) || !SUPPORTED_RATES.contains(&w.sample_rate) {
        return Err(Error::Audio(format!(
            "unsupported rate pair {} -> {target_sr}",
            w.sample_rate
        )));
    }
    if target_sr == w.sample_rate {
        return Ok(w.clone());
    }
    let src = w.sample_rate as f64;
    let dst = target_sr as f64;
    let ratio = dst / src;
    let fc = ROLLOFF * ratio.min(1.0);
    let half_width = ZEROS / fc;
    let out_len = (w.len() as f64 * ratio).round() as usize;
    let x = &w.samples;
    let out = (0..out_len).map(|n| {
        let t = n as f64 / ratio;
        let lo = (t - half_width).ceil().max(0.0) as usize;
        let hi = ((t + half_width).floor() as usize).min(x.len().saturating_sub(1));
        let mut acc = 0.0;
        for (k, &s) in x.iter().enumerate().take(hi + 1).skip(lo) {
            let u = t - k as f64;
            acc += s as f64 * fc * sinc(fc * u) * blackman(u / half_width);
        }
        acc
    });
    Ok(Waveform::clipped(out, target_sr))
}
