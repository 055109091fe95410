use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embed::builtin_embed;
use super::mos::builtin_mos;
use crate::corpus::CorpusManifest;
use crate::dsp::read_wav;
use crate::external::{exchange, AdapterCommand, BatchItem, ResultItem};
use crate::par::Exec;
use crate::{Error, Result};

/// Where an evaluator's numbers come from. `Builtin` runs in-process: the
/// MOS and embedding fallbacks are [`builtin_mos`] and [`builtin_embed`]; the
/// ASR fallback echoes each utterance's reference transcript, which makes a
/// closed-loop check of the WER plumbing rather than a recognizer.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Evaluator {
    #[default]
    Builtin,
    External(AdapterCommand),
}

/// Per-utterance values plus explicit failure records, keyed by id.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterOutput<T> {
    pub values: BTreeMap<String, T>,
    pub failures: BTreeMap<String, String>,
}

impl<T> AdapterOutput<T> {
    /// Error naming the failed ids, if any.
    pub fn require_all(self) -> Result<BTreeMap<String, T>> {
        if self.failures.is_empty() {
            return Ok(self.values);
        }
        let total = self.values.len() + self.failures.len();
        Err(Error::Batch {
            failed: self.failures.len(),
            total,
            details: self
                .failures
                .iter()
                .map(|(k, v)| format!("{k}: {v}"))
                .collect::<Vec<_>>()
                .join("; "),
        })
    }
}

fn run<T: Send>(
    manifest: &CorpusManifest,
    eval: &Evaluator,
    exec: Exec,
    builtin: impl Fn(&crate::corpus::UtteranceRecord) -> Result<T> + Sync + Send,
    pick: impl Fn(ResultItem) -> std::result::Result<T, String>,
) -> Result<AdapterOutput<T>> {
    let mut out = AdapterOutput {
        values: BTreeMap::new(),
        failures: BTreeMap::new(),
    };
    match eval {
        Evaluator::Builtin => {
            for (r, v) in manifest
                .records
                .iter()
                .zip(exec.map(&manifest.records, |_, r| builtin(r)))
            {
                match v {
                    Ok(v) => {
                        out.values.insert(r.id.clone(), v);
                    }
                    Err(e) => {
                        out.failures.insert(r.id.clone(), e.to_string());
                    }
                }
            }
        }
        Evaluator::External(cmd) => {
            let items: Vec<BatchItem> = manifest
                .records
                .iter()
                .map(|r| BatchItem {
                    id: r.id.clone(),
                    wav: manifest.resolve_audio(r),
                    reference: Some(r.transcript.clone()),
                })
                .collect();
            for res in exchange(cmd, &items)? {
                let id = res.id.clone();
                if let Some(e) = res.error.clone() {
                    out.failures.insert(id, e);
                    continue;
                }
                match pick(res) {
                    Ok(v) => {
                        out.values.insert(id, v);
                    }
                    Err(e) => {
                        out.failures.insert(id, e);
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn run_mos_adapter(
    manifest: &CorpusManifest,
    eval: &Evaluator,
    exec: Exec,
) -> Result<AdapterOutput<f64>> {
    run(
        manifest,
        eval,
        exec,
        |r| builtin_mos(&read_wav(&manifest.resolve_audio(r))?),
        |res| {
            res.score
                .filter(|s| s.is_finite())
                .ok_or_else(|| "result has no finite score".to_string())
        },
    )
}

pub fn run_asr_adapter(
    manifest: &CorpusManifest,
    eval: &Evaluator,
    exec: Exec,
) -> Result<AdapterOutput<String>> {
    run(
        manifest,
        eval,
        exec,
        |r| Ok(r.transcript.clone()),
        |res| {
            res.hypothesis
                .ok_or_else(|| "result has no hypothesis".to_string())
        },
    )
}

pub fn run_embedding_adapter(
    manifest: &CorpusManifest,
    eval: &Evaluator,
    exec: Exec,
) -> Result<AdapterOutput<Vec<f64>>> {
    run(
        manifest,
        eval,
        exec,
        |r| builtin_embed(&read_wav(&manifest.resolve_audio(r))?),
        |res| {
            res.embedding
                .filter(|e| !e.is_empty() && e.iter().all(|x| x.is_finite()))
                .ok_or_else(|| "result has no finite embedding".to_string())
        },
    )
}

/// Seeded sample of `n` utterances (all of them when fewer), in manifest order.
pub fn sample_utterances(manifest: &CorpusManifest, n: usize, seed: u64) -> CorpusManifest {
    let mut idx: Vec<usize> = (0..manifest.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    idx.sort_unstable();
    CorpusManifest {
        records: idx
            .into_iter()
            .map(|i| manifest.records[i].clone())
            .collect(),
        split_tag: manifest.split_tag,
        base_dir: manifest.base_dir.clone(),
    }
}
