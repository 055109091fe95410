//! Learned speech-to-text alignment and hard duration extraction.
//!
//! A posterior is stored token-major: `probs[i * n_frames + j]` is the
//! probability that frame `j` belongs to token `i`, and every column (frame)
//! sums to one. A monotonic path starts at token 0 on frame 0, ends at the
//! last token on the last frame, and moves by 0 or +1 tokens per frame.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPosterior {
    pub n_tokens: usize,
    pub n_frames: usize,
    pub probs: Vec<f64>,
}

impl AlignmentPosterior {
    pub fn new(n_tokens: usize, n_frames: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_tokens * n_frames || n_tokens == 0 || n_frames == 0 {
            return Err(Error::Shape(format!(
                "posterior of {} values for {n_tokens} x {n_frames}",
                probs.len()
            )));
        }
        let p = Self {
            n_tokens,
            n_frames,
            probs,
        };
        for j in 0..n_frames {
            let s: f64 = (0..n_tokens).map(|i| p.get(i, j)).sum();
            if (s - 1.0).abs() > 1e-5 || (0..n_tokens).any(|i| !(p.get(i, j) >= 0.0)) {
                return Err(Error::Shape(format!(
                    "column {j} is not a distribution (sum {s})"
                )));
            }
        }
        Ok(p)
    }

    pub fn get(&self, token: usize, frame: usize) -> f64 {
        self.probs[token * self.n_frames + frame]
    }

    fn log_probs(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.ln()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonotonicPath {
    pub token_index_per_frame: Vec<usize>,
}

impl MonotonicPath {
    pub fn validate(&self, n_tokens: usize) -> Result<()> {
        let p = &self.token_index_per_frame;
        let ok = !p.is_empty()
            && p[0] == 0
            && *p.last().unwrap() + 1 == n_tokens
            && p.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("path is not monotonic over all tokens".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationTargets {
    pub durations: Vec<u32>,
}

impl DurationTargets {
    pub fn total_frames(&self) -> usize {
        self.durations.iter().map(|&d| d as usize).sum()
    }
}

/// Posterior from distance attention: column `j` is the softmax over tokens
/// of `-||key_i - query_j||^2 / sqrt(d)`. Both inputs are row-major.
pub fn soft_alignment(
    token_keys: &[f64],
    mel_queries: &[f64],
    d: usize,
) -> Result<AlignmentPosterior> {
    if d == 0 || !token_keys.len().is_multiple_of(d) || !mel_queries.len().is_multiple_of(d) {
        return Err(Error::Shape(format!(
            "keys ({}) and queries ({}) are not multiples of d = {d}",
            token_keys.len(),
            mel_queries.len()
        )));
    }
    let n_tokens = token_keys.len() / d;
    let n_frames = mel_queries.len() / d;
    if n_tokens == 0 || n_frames == 0 {
        return Err(Error::Shape("empty keys or queries".into()));
    }
    let temperature = (d as f64).sqrt();
    let mut probs = vec![0.0; n_tokens * n_frames];
    let mut col = vec![0.0; n_tokens];
    for j in 0..n_frames {
        let q = &mel_queries[j * d..(j + 1) * d];
        for (i, c) in col.iter_mut().enumerate() {
            let k = &token_keys[i * d..(i + 1) * d];
            *c = -k.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / temperature;
        }
        let lse = log_sum_exp(&col);
        for (i, c) in col.iter().enumerate() {
            probs[i * n_frames + j] = (c - lse).exp();
        }
    }
    AlignmentPosterior::new(n_tokens, n_frames, probs)
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn lse2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

fn check_fits(n_tokens: usize, n_frames: usize) -> Result<()> {
    if n_frames < n_tokens {
        Err(Error::NoAlignment { n_tokens, n_frames })
    } else {
        Ok(())
    }
}

/// Forward-sum loss and its gradient with respect to the log posterior.
///
/// `log_probs` is token-major like [`AlignmentPosterior::probs`]. The loss is
/// `-log sum_paths prod_j p[path_j][j]`; its gradient with respect to
/// `log p[i][j]` is minus the posterior occupancy of cell `(i, j)`.
pub fn forward_sum_with_grad(
    log_probs: &[f64],
    n_tokens: usize,
    n_frames: usize,
) -> Result<(f64, Vec<f64>)> {
    check_fits(n_tokens, n_frames)?;
    let idx = |i: usize, j: usize| i * n_frames + j;
    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; n_tokens * n_frames];
    alpha[idx(0, 0)] = log_probs[idx(0, 0)];
    for j in 1..n_frames {
        for i in 0..n_tokens.min(j + 1) {
            let stay = alpha[idx(i, j - 1)];
            let adv = if i > 0 {
                alpha[idx(i - 1, j - 1)]
            } else {
                ninf
            };
            alpha[idx(i, j)] = lse2(stay, adv) + log_probs[idx(i, j)];
        }
    }
    let mut beta = vec![ninf; n_tokens * n_frames];
    beta[idx(n_tokens - 1, n_frames - 1)] = 0.0;
    for j in (0..n_frames - 1).rev() {
        for i in 0..n_tokens {
            let stay = beta[idx(i, j + 1)] + log_probs[idx(i, j + 1)];
            let adv = if i + 1 < n_tokens {
                beta[idx(i + 1, j + 1)] + log_probs[idx(i + 1, j + 1)]
            } else {
                ninf
            };
            beta[idx(i, j)] = lse2(stay, adv);
        }
    }
    let log_z = alpha[idx(n_tokens - 1, n_frames - 1)];
    if !log_z.is_finite() {
        return Err(Error::Degenerate(
            "posterior puts zero mass on every monotonic path".into(),
        ));
    }
    let grad = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| {
            let s = a + b;
            if s == ninf {
                0.0
            } else {
                -(s - log_z).exp()
            }
        })
        .collect();
    Ok((-log_z, grad))
}

pub fn forward_sum_loss(p: &AlignmentPosterior) -> Result<f64> {
    forward_sum_with_grad(&p.log_probs(), p.n_tokens, p.n_frames).map(|(l, _)| l)
}

/// Most probable monotonic path over a token-major log posterior.
///
/// Ties prefer the path that stays on earlier tokens longer, so a uniform
/// posterior yields `[0, 0, ..., 0, 1, 2, ..., last]`.
pub fn viterbi_log(log_probs: &[f64], n_tokens: usize, n_frames: usize) -> Result<MonotonicPath> {
    check_fits(n_tokens, n_frames)?;
    let idx = |i: usize, j: usize| i * n_frames + j;
    let ninf = f64::NEG_INFINITY;
    let mut delta = vec![ninf; n_tokens * n_frames];
    delta[idx(0, 0)] = log_probs[idx(0, 0)];
    for j in 1..n_frames {
        for i in 0..n_tokens.min(j + 1) {
            let stay = delta[idx(i, j - 1)];
            let adv = if i > 0 {
                delta[idx(i - 1, j - 1)]
            } else {
                ninf
            };
            delta[idx(i, j)] = stay.max(adv) + log_probs[idx(i, j)];
        }
    }
    let mut path = vec![0; n_frames];
    let mut i = n_tokens - 1;
    for j in (0..n_frames).rev() {
        path[j] = i;
        if j == 0 {
            break;
        }
        // Feasibility: token i at frame j - 1 needs i <= j - 1.
        let stay = if i < j { delta[idx(i, j - 1)] } else { ninf };
        let adv = if i > 0 {
            delta[idx(i - 1, j - 1)]
        } else {
            ninf
        };
        if i > 0 && adv >= stay {
            i -= 1;
        }
    }
    Ok(MonotonicPath {
        token_index_per_frame: path,
    })
}

pub fn extract_monotonic_path(p: &AlignmentPosterior) -> Result<MonotonicPath> {
    viterbi_log(&p.log_probs(), p.n_tokens, p.n_frames)
}

pub fn path_to_durations(path: &MonotonicPath) -> DurationTargets {
    let n_tokens = path.token_index_per_frame.last().map_or(0, |&l| l + 1);
    let mut durations = vec![0u32; n_tokens];
    for &t in &path.token_index_per_frame {
        durations[t] += 1;
    }
    DurationTargets { durations }
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Exhaustive enumeration of monotonic paths, for tests only.

    pub fn all_paths(n_tokens: usize, n_frames: usize) -> Vec<Vec<usize>> {
        fn rec(cur: &mut Vec<usize>, n_tokens: usize, n_frames: usize, out: &mut Vec<Vec<usize>>) {
            if cur.len() == n_frames {
                if *cur.last().unwrap() == n_tokens - 1 {
                    out.push(cur.clone());
                }
                return;
            }
            let last = *cur.last().unwrap();
            for next in [last, last + 1] {
                if next < n_tokens {
                    cur.push(next);
                    rec(cur, n_tokens, n_frames, out);
                    cur.pop();
                }
            }
        }
        let mut out = Vec::new();
        if n_frames >= n_tokens && n_tokens > 0 {
            rec(&mut vec![0], n_tokens, n_frames, &mut out);
        }
        out
    }
}
