use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dsp::{extract_f0, mel_spectrogram, MelCfg, Waveform};
use crate::{Error, Result};

pub const BUILTIN_DIM: usize = 32;
pub const BUILTIN_TAG: &str = "builtin-stats-v1";
pub const MIN_EMBED_SECONDS: f64 = 0.5;
const BAND_GROUPS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub speaker: String,
    pub encoder_tag: String,
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn validate(&self) -> Result<()> {
        let dim = self.vectors.first().map_or(0, Vec::len);
        if self
            .vectors
            .iter()
            .any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::Shape(format!(
                "embeddings of {} differ in size or are not finite",
                self.speaker
            )));
        }
        Ok(())
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn l2_normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Degenerate(
            "vector has zero or non-finite norm".into(),
        ));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Hand-made 32-dimensional voice descriptor, a deterministic stand-in for a
/// pretrained speaker encoder. From an 80-band log-mel spectrogram split into
/// 8 groups of adjacent bands, and the autocorrelation F0 track:
///
/// | dims  | statistic |
/// |-------|-----------|
/// | 0-15  | per group: mean and variance over frames of the group's mean log-mel |
/// | 16-17 | median and interquartile range of voiced F0, in units of 100 Hz |
/// | 18    | voiced fraction |
/// | 19-23 | frame log-energy: mean, standard deviation, 10th and 90th percentile, mean absolute frame-to-frame change |
/// | 24-31 | share of total mel power in each group |
///
/// The result is L2-normalized. At least half a second of audio is required.
pub fn builtin_embed(w: &Waveform) -> Result<Vec<f64>> {
    if w.duration_s() < MIN_EMBED_SECONDS {
        return Err(Error::InsufficientData(format!(
            "embedding needs at least {MIN_EMBED_SECONDS} s of audio, got {:.3} s",
            w.duration_s()
        )));
    }
    let cfg = MelCfg::for_rate(w.sample_rate);
    let m = mel_spectrogram(w, &cfg)?;
    let per_group = m.n_mels / BAND_GROUPS;
    let t = m.n_frames as f64;
    let mut v = Vec::with_capacity(BUILTIN_DIM);
    let mut shares = [0.0; BAND_GROUPS];
    for g in 0..BAND_GROUPS {
        let bands = g * per_group..if g + 1 == BAND_GROUPS {
            m.n_mels
        } else {
            (g + 1) * per_group
        };
        let series: Vec<f64> = (0..m.n_frames)
            .map(|f| bands.clone().map(|b| m.frame(f)[b]).sum::<f64>() / bands.len() as f64)
            .collect();
        let mean = series.iter().sum::<f64>() / t;
        v.push(mean);
        v.push(series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t);
        shares[g] = (0..m.n_frames)
            .map(|f| bands.clone().map(|b| m.frame(f)[b].exp()).sum::<f64>())
            .sum();
    }
    let pc = extract_f0(w, &cfg, 60.0, 600.0f64.min(w.sample_rate as f64 / 4.0))?;
    let mut f0 = pc.voiced_values();
    f0.sort_by(f64::total_cmp);
    v.push(quantile(&f0, 0.5) / 100.0);
    v.push((quantile(&f0, 0.75) - quantile(&f0, 0.25)) / 100.0);
    v.push(f0.len() as f64 / pc.n_frames().max(1) as f64);
    let energy: Vec<f64> = (0..m.n_frames)
        .map(|f| m.frame(f).iter().map(|x| x.exp()).sum::<f64>().ln())
        .collect();
    let mean = energy.iter().sum::<f64>() / t;
    let sd = (energy.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t).sqrt();
    let mut sorted = energy.clone();
    sorted.sort_by(f64::total_cmp);
    let flux = energy.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>() / (t - 1.0).max(1.0);
    v.extend([
        mean,
        sd,
        quantile(&sorted, 0.1),
        quantile(&sorted, 0.9),
        flux,
    ]);
    let total: f64 = shares.iter().sum();
    v.extend(shares.iter().map(|s| s / total));
    debug_assert_eq!(v.len(), BUILTIN_DIM);
    l2_normalize(v)
}

/// Mean of the set, L2-normalized.
pub fn average_embeddings(set: &EmbeddingSet) -> Result<Vec<f64>> {
    set.validate()?;
    let Some(first) = set.vectors.first() else {
        return Err(Error::InsufficientData(format!(
            "no embeddings for {}",
            set.speaker
        )));
    };
    let mut mean = vec![0.0; first.len()];
    for v in &set.vectors {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= set.vectors.len() as f64);
    l2_normalize(mean)
        .map_err(|_| Error::Degenerate(format!("mean embedding of {} has zero norm", set.speaker)))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine of {}-d and {}-d vectors",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate(
            "cosine similarity with a zero vector".into(),
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Rows follow set A's labels, columns set B's, both in sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let i = self.row_labels.iter().position(|l| l == row)?;
        let j = self.col_labels.iter().position(|l| l == col)?;
        Some(self.values[i][j])
    }

    pub fn range(&self) -> (f64, f64) {
        self.values
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            })
    }

    pub fn mean(&self) -> f64 {
        let n = self.row_labels.len() * self.col_labels.len();
        self.values.iter().flatten().sum::<f64>() / n as f64
    }
}

pub fn cross_similarity(
    a: &BTreeMap<String, Vec<f64>>,
    b: &BTreeMap<String, Vec<f64>>,
) -> Result<SimilarityMatrix> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData(
            "cross-similarity needs two non-empty sets".into(),
        ));
    }
    let values = a
        .values()
        .map(|va| {
            b.values()
                .map(|vb| cosine_similarity(va, vb))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityMatrix {
        row_labels: a.keys().cloned().collect(),
        col_labels: b.keys().cloned().collect(),
        values,
    })
}

/// Principal-component coordinates of each point on the two directions of
/// largest variance. Each direction's sign is chosen so that its
/// largest-magnitude loading (first one on ties) is positive.
pub fn project_2d(points: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = points.len();
    let dim = points.first().map_or(0, Vec::len);
    if n < 3 || dim < 2 {
        return Err(Error::InsufficientData(format!(
            "projection needs >= 3 points of dim >= 2, got {n} x {dim}"
        )));
    }
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points differ in dimension".into()));
    }
    let mean: Vec<f64> = (0..dim)
        .map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n as f64)
        .collect();
    let x = DMatrix::from_fn(n, dim, |i, k| points[i][k] - mean[k]);
    let cov = x.transpose() * &x;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 0.0) || l2 <= 1e-12 * l1 {
        return Err(Error::Degenerate(
            "points span fewer than two dimensions".into(),
        ));
    }
    let axes: Vec<Vec<f64>> = order[..2]
        .iter()
        .map(|&c| {
            let v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let lead = (0..dim).fold(
                0,
                |best, k| if v[k].abs() > v[best].abs() { k } else { best },
            );
            let s = if v[lead] < 0.0 { -1.0 } else { 1.0 };
            v.into_iter().map(|x| s * x).collect()
        })
        .collect();
    Ok((0..n)
        .map(|i| {
            let row = x.row(i);
            let proj = |a: &[f64]| row.iter().zip(a).map(|(p, q)| p * q).sum::<f64>();
            [proj(&axes[0]), proj(&axes[1])]
        })
        .collect())
}
