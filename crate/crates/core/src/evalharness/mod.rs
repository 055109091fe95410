//! Objective evaluation: MOS aggregation, word error rate, speaker
//! embeddings with cosine cross-similarity and a 2-D projection, and report
//! rendering. Learned evaluators are external adapters; each has an
//! in-process fallback so the pipeline runs without them.

mod adapters;
mod embed;
mod mos;
mod report;
mod wer;

use std::collections::BTreeMap;

pub use adapters::{
    run_asr_adapter, run_embedding_adapter, run_mos_adapter, sample_utterances, AdapterOutput,
    Evaluator,
};
pub use embed::{
    average_embeddings, builtin_embed, cosine_similarity, cross_similarity, project_2d,
    EmbeddingSet, SimilarityMatrix, BUILTIN_DIM, BUILTIN_TAG, MIN_EMBED_SECONDS,
};
pub use mos::{aggregate_mos, builtin_mos, MosReport, Z95};
pub use report::{
    render_report, ProjectedPoint, ReportInputs, SpeakerSimReport, REFERENCE_MOS,
    REFERENCE_SIM_MEAN, REFERENCE_SIM_MIXED, REFERENCE_SIM_SYNTH_REAL, REFERENCE_WER, REPORT_FILES,
};
pub use wer::{corpus_wer, edit_counts, wer, words, EditCounts, UtteranceWer, WerReport};

use crate::Result;

/// Per-utterance embeddings of one set, keyed by speaker.
pub type SpeakerEmbeddings = BTreeMap<String, EmbeddingSet>;

/// Average each speaker's embeddings, cross-compare set A with set B, and
/// project every utterance embedding of both sets to 2-D.
pub fn speaker_similarity(
    set_a: &SpeakerEmbeddings,
    set_b: &SpeakerEmbeddings,
    utterance_ids: &BTreeMap<String, Vec<String>>,
) -> Result<SpeakerSimReport> {
    let avg = |s: &SpeakerEmbeddings| -> Result<BTreeMap<String, Vec<f64>>> {
        s.iter()
            .map(|(k, v)| Ok((k.clone(), average_embeddings(v)?)))
            .collect()
    };
    let matrix = cross_similarity(&avg(set_a)?, &avg(set_b)?)?;
    let mut meta = Vec::new();
    let mut points = Vec::new();
    for (tag, set) in [("A", set_a), ("B", set_b)] {
        for (speaker, e) in set {
            let ids = utterance_ids.get(&format!("{tag}:{speaker}"));
            for (k, v) in e.vectors.iter().enumerate() {
                let utt = ids
                    .and_then(|i| i.get(k))
                    .cloned()
                    .unwrap_or_else(|| k.to_string());
                meta.push((tag.to_string(), speaker.clone(), utt));
                points.push(v.clone());
            }
        }
    }
    let projection = project_2d(&points)?
        .into_iter()
        .zip(meta)
        .map(|(c, (set, speaker, utterance))| ProjectedPoint {
            set,
            speaker,
            utterance,
            x: c[0],
            y: c[1],
        })
        .collect();
    let (min, max) = matrix.range();
    let mean = matrix.mean();
    Ok(SpeakerSimReport {
        matrix,
        projection,
        min,
        max,
        mean,
    })
}

#[cfg(test)]
mod tests;
