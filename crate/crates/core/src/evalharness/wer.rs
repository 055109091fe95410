use serde::{Deserialize, Serialize};

use crate::corpus::normalize_text;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceWer {
    pub id: String,
    pub counts: EditCounts,
    pub n_ref_words: usize,
    pub wer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    /// Percent.
    pub wer: f64,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub n_ref_words: usize,
    pub per_utterance: Vec<UtteranceWer>,
}

/// Words after text normalization, with sentence punctuation removed.
pub fn words(text: &str) -> Vec<String> {
    match normalize_text(text) {
        Ok(t) => t
            .split_whitespace()
            .map(|w| w.trim_matches(|c| matches!(c, ',' | '.' | '?')).to_string())
            .filter(|w| !w.is_empty())
            .collect(),
        Err(_) => Vec::new(),
    }
}

/// Minimum unit-cost edit script between two word sequences. Among equally
/// short scripts, the backtrace prefers substitution, then deletion, then
/// insertion.
pub fn edit_counts<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1]
                + usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let (mut i, mut j) = (n, m);
    let mut c = EditCounts::default();
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                c.substitutions += usize::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

fn utterance(id: &str, reference: &str, hypothesis: &str) -> Result<UtteranceWer> {
    let r = words(reference);
    if r.is_empty() {
        return Err(Error::Text(format!(
            "reference for {id:?} is empty after normalization"
        )));
    }
    let counts = edit_counts(&r, &words(hypothesis));
    Ok(UtteranceWer {
        id: id.to_string(),
        counts,
        n_ref_words: r.len(),
        wer: 100.0 * counts.total() as f64 / r.len() as f64,
    })
}

pub fn wer(reference: &str, hypothesis: &str) -> Result<WerReport> {
    corpus_wer(&[(
        "0".to_string(),
        reference.to_string(),
        hypothesis.to_string(),
    )])
}

/// Pools edit counts over `(id, reference, hypothesis)` triples.
pub fn corpus_wer(pairs: &[(String, String, String)]) -> Result<WerReport> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no utterances to score".into()));
    }
    let per = pairs
        .iter()
        .map(|(id, r, h)| utterance(id, r, h))
        .collect::<Result<Vec<_>>>()?;
    let sum = |f: fn(&UtteranceWer) -> usize| per.iter().map(f).sum::<usize>();
    let (s, i, d) = (
        sum(|u| u.counts.substitutions),
        sum(|u| u.counts.insertions),
        sum(|u| u.counts.deletions),
    );
    let n = sum(|u| u.n_ref_words);
    Ok(WerReport {
        wer: 100.0 * (s + i + d) as f64 / n as f64,
        substitutions: s,
        insertions: i,
        deletions: d,
        n_ref_words: n,
        per_utterance: per,
    })
}
