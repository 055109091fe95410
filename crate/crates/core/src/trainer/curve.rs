use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acoustic::LossBreakdown;
use crate::{fsutil, Error, Result};

pub const CSV_HEADER: &str = "step,mel_mse,duration,pitch,align,total,lr";
/// Trailing window for smoothed losses.
pub const SMOOTHING_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub mel_mse: f64,
    pub duration: f64,
    pub pitch: f64,
    pub align: f64,
    pub total: f64,
    pub lr: f64,
}

impl LossRow {
    pub fn new(step: u64, l: &LossBreakdown, lr: f64) -> Self {
        Self {
            step,
            mel_mse: l.mel_mse,
            duration: l.duration,
            pitch: l.pitch,
            align: l.align,
            total: l.total,
            lr,
        }
    }
}

/// Loss rows with strictly increasing steps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossCurve {
    rows: Vec<LossRow>,
}

impl LossCurve {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[LossRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last_step(&self) -> Option<u64> {
        self.rows.last().map(|r| r.step)
    }

    pub fn push(&mut self, row: LossRow) -> Result<()> {
        if let Some(last) = self.last_step() {
            if row.step <= last {
                return Err(Error::Config(format!(
                    "loss curve step {} after {last}",
                    row.step
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn extend(&mut self, other: &LossCurve) -> Result<()> {
        other.rows.iter().try_for_each(|r| self.push(*r))
    }

    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.total).collect()
    }

    /// Trailing mean of the total loss over `window` rows (fewer at the start).
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        smooth(&self.totals(), window)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.step, r.mel_mse, r.duration, r.pitch, r.align, r.total, r.lr
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Config(format!(
                "loss curve must start with `{CSV_HEADER}`"
            )));
        }
        let mut curve = Self::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Config(format!("loss curve line {}: cannot parse `{line}`", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad());
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad());
            curve.push(LossRow {
                step: f[0].parse().map_err(|_| bad())?,
                mel_mse: num(1)?,
                duration: num(2)?,
                pitch: num(3)?,
                align: num(4)?,
                total: num(5)?,
                lr: num(6)?,
            })?;
        }
        Ok(curve)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        Self::from_csv(&String::from_utf8_lossy(&bytes))
    }
}

pub fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        sum += xs[i];
        if i >= w {
            sum -= xs[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// True when the smoothed loss over the last `patience_steps` rows has not
/// come within 1% below the best smoothed value seen before them.
pub fn early_stop_check(curve: &LossCurve, patience_steps: usize) -> bool {
    stalled_at(
        &curve.smoothed(SMOOTHING_WINDOW),
        curve.len(),
        patience_steps.max(1),
    )
}

/// Row index of the first prefix of `curve` for which [`early_stop_check`]
/// fires.
pub fn early_stop_row(curve: &LossCurve, patience_steps: usize) -> Option<usize> {
    let s = curve.smoothed(SMOOTHING_WINDOW);
    (1..=curve.len())
        .find(|&n| stalled_at(&s, n, patience_steps.max(1)))
        .map(|n| n - 1)
}

fn stalled_at(smoothed: &[f64], n: usize, patience: usize) -> bool {
    if n <= patience {
        return false;
    }
    let before = smoothed[..n - patience]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let recent = smoothed[n - patience..n]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    recent > 0.99 * before
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(totals: &[f64]) -> LossCurve {
        let mut c = LossCurve::new();
        for (i, &t) in totals.iter().enumerate() {
            c.push(LossRow {
                step: i as u64 + 1,
                mel_mse: t,
                duration: 0.0,
                pitch: 0.0,
                align: 0.0,
                total: t,
                lr: 1e-3,
            })
            .unwrap();
        }
        c
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let c = curve(&[1.0 / 3.0, 0.1 + 0.2, 1e-300, 7.0]);
        assert_eq!(LossCurve::from_csv(&c.to_csv()).unwrap(), c);
        assert!(c
            .to_csv()
            .starts_with("step,mel_mse,duration,pitch,align,total,lr\n"));
        assert!(LossCurve::from_csv("step,total\n1,2\n").is_err());
    }

    #[test]
    fn steps_must_increase() {
        let mut c = curve(&[1.0, 2.0]);
        let mut r = c.rows()[0];
        assert!(c.push(r).is_err());
        r.step = 3;
        c.push(r).unwrap();
    }

    #[test]
    fn smoothing_is_a_trailing_mean() {
        assert_eq!(smooth(&[2.0, 4.0, 6.0, 8.0], 2), vec![2.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn decreasing_curve_never_stops() {
        let c = curve(&(0..400).map(|i| 10.0 * 0.99f64.powi(i)).collect::<Vec<_>>());
        assert!(!early_stop_check(&c, 50));
        assert_eq!(early_stop_row(&c, 50), None);
    }

    #[test]
    fn flat_curve_stops() {
        let c = curve(&vec![1.0; 120]);
        assert!(early_stop_check(&c, 60));
        assert!(!early_stop_check(&curve(&vec![1.0; 60]), 60));
    }

    #[test]
    fn flag_follows_the_flattening_point() {
        let patience = 100;
        let flat_from = 300;
        let totals: Vec<f64> = (0..flat_from + 2 * patience)
            .map(|i| {
                if i < flat_from {
                    5.0 - 4.0 * i as f64 / flat_from as f64
                } else {
                    1.0
                }
            })
            .collect();
        let c = curve(&totals);
        assert!(early_stop_check(&c, patience));
        let row = early_stop_row(&c, patience).unwrap();
        // The smoothed curve keeps falling for one window after the raw curve
        // flattens; from then on the stall is detected after `patience` rows.
        assert!(row >= flat_from, "{row}");
        assert!(row <= flat_from + SMOOTHING_WINDOW + patience, "{row}");
    }
}
