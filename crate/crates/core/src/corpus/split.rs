use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusManifest, SplitTag};
use crate::{Error, Result};

/// Split a manifest into train and test parts by an hour budget.
///
/// Utterances are shuffled with `seed`; every speaker that has at least two
/// utterances contributes its first shuffled utterance to train, then the
/// shuffled order is walked greedily, adding to train while the train total is
/// below `train_hours`. The train total therefore overshoots the budget by
/// less than one utterance. Both outputs keep the input record order.
pub fn split_corpus(
    manifest: &CorpusManifest,
    train_hours: f64,
    seed: u64,
) -> Result<(CorpusManifest, CorpusManifest)> {
    let total = manifest.total_hours();
    if !(train_hours > 0.0 && train_hours < total) {
        return Err(Error::InsufficientData(format!(
            "train_hours {train_hours} must be in (0, {total})"
        )));
    }
    let per_speaker = manifest.records.iter().fold(BTreeMap::new(), |mut m, r| {
        *m.entry(r.speaker_id.as_str()).or_insert(0usize) += 1;
        m
    });
    if per_speaker.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 speakers".into()));
    }

    let mut order: Vec<usize> = (0..manifest.records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let budget_s = train_hours * 3600.0;
    let mut in_train = vec![false; order.len()];
    let mut train_s = 0.0;
    let mut covered = std::collections::HashSet::new();
    for &i in &order {
        let r = &manifest.records[i];
        if per_speaker[r.speaker_id.as_str()] >= 2 && covered.insert(r.speaker_id.as_str()) {
            in_train[i] = true;
            train_s += r.duration_s;
        }
    }
    for &i in &order {
        if train_s >= budget_s {
            break;
        }
        if !in_train[i] {
            in_train[i] = true;
            train_s += manifest.records[i].duration_s;
        }
    }
    let max_dur = manifest
        .records
        .iter()
        .map(|r| r.duration_s)
        .fold(0.0, f64::max);
    if train_s > budget_s + max_dur {
        return Err(Error::InsufficientData(format!(
            "speaker coverage alone needs {:.4} h, over the {train_hours} h budget",
            train_s / 3600.0
        )));
    }

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, r) in manifest.records.iter().enumerate() {
        if in_train[i] {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    if test.is_empty() {
        return Err(Error::InsufficientData(
            "nothing left for the test split".into(),
        ));
    }
    let base = manifest.base_dir.clone();
    Ok((
        CorpusManifest {
            records: train,
            split_tag: SplitTag::Train,
            base_dir: base.clone(),
        },
        CorpusManifest {
            records: test,
            split_tag: SplitTag::Test,
            base_dir: base,
        },
    ))
}
