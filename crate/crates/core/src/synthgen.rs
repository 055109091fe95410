//! Synthetic dataset generation from sentence lists and a finetuned
//! checkpoint, plus the bookkeeping around it: sample-rate conversion,
//! demographics and speaker selection.
//!
//! Output layout for a job writing to `out`:
//!
//! ```text
//! out/<sr>/<speaker>/<speaker>_<idx>.wav
//! out/<sr>/manifest.jsonl      audio paths relative to out/<sr>
//! out/demographics.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acoustic::forward_infer;
use crate::corpus::{
    normalize_text, tokenize, CorpusManifest, SplitTag, UtteranceRecord, GRAPHEME_TOKENSET,
};
use crate::dsp::{read_wav, resample, write_wav, Waveform};
use crate::par::Exec;
use crate::trainer::load_checkpoint;
use crate::vocoder::{batch_render, BatchOpts, VocoderSpec};
use crate::{fsutil, Error, Result};

/// Rate of the generated audio.
pub const OUTPUT_RATE: u32 = 22050;
/// Rates a generated dataset can be converted to.
pub const CONVERSION_RATES: [u32; 2] = [16000, 22050];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceList {
    pub sentences: Vec<String>,
    pub source_tag: String,
}

impl SentenceList {
    pub fn new(sentences: Vec<String>, source_tag: impl Into<String>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::InsufficientData("sentence list is empty".into()));
        }
        for (i, s) in sentences.iter().enumerate() {
            normalize_text(s).map_err(|e| Error::Text(format!("sentence {}: {e}", i + 1)))?;
        }
        Ok(Self {
            sentences,
            source_tag: source_tag.into(),
        })
    }

    /// One sentence per line, blank lines skipped.
    pub fn load(path: &Path, source_tag: &str) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|e| Error::Text(format!("{}: {e}", path.display())))?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
            source_tag,
        )
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationJob {
    pub checkpoint: PathBuf,
    pub speakers: Vec<String>,
    pub sentences: SentenceList,
    pub vocoder: VocoderSpec,
    /// Rates to publish; 22050 Hz is always produced.
    pub output_rates: Vec<u32>,
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "one")]
    pub pace: f64,
    /// The job fails when more than this fraction of utterances fail.
    #[serde(default)]
    pub max_failure_fraction: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub n_speakers: usize,
    pub hours: f64,
    pub n_utterances: usize,
    pub per_speaker_minutes: f64,
}

impl Demographics {
    pub fn from_totals(n_speakers: usize, hours: f64, n_utterances: usize) -> Result<Self> {
        if n_speakers == 0 {
            return Err(Error::InsufficientData("no speakers".into()));
        }
        Ok(Self {
            n_speakers,
            hours,
            n_utterances,
            per_speaker_minutes: hours * 60.0 / n_speakers as f64,
        })
    }

    pub fn per_speaker_hours(&self) -> f64 {
        self.per_speaker_minutes / 60.0
    }
}

pub fn compute_demographics(manifest: &CorpusManifest) -> Result<Demographics> {
    if manifest.is_empty() {
        return Err(Error::InsufficientData("manifest is empty".into()));
    }
    Demographics::from_totals(
        manifest.speakers().len(),
        manifest.total_hours(),
        manifest.len(),
    )
}

/// The `n` speakers with the most audio, most first; ties go to the
/// lexically smaller label.
pub fn rank_speakers_by_hours(manifest: &CorpusManifest, n: usize) -> Vec<String> {
    let mut v: Vec<(String, f64)> = manifest.seconds_per_speaker().into_iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().take(n).map(|(s, _)| s).collect()
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    /// The 22050 Hz manifest.
    pub manifest: CorpusManifest,
    /// Other requested rates.
    pub converted: BTreeMap<u32, CorpusManifest>,
    pub demographics: Demographics,
    /// `(utterance id, reason)` for every item that could not be produced.
    pub failures: Vec<(String, String)>,
}

pub fn utterance_id(speaker: &str, idx: usize) -> String {
    format!("{speaker}_{idx:04}")
}

pub fn generate_dataset(job: &GenerationJob, exec: Exec) -> Result<GeneratedDataset> {
    job.vocoder.validate()?;
    if job.speakers.is_empty() {
        return Err(Error::Config("generation job lists no speakers".into()));
    }
    if let Some(r) = job
        .output_rates
        .iter()
        .find(|r| !CONVERSION_RATES.contains(r))
    {
        return Err(Error::Config(format!(
            "output rate {r} not in {CONVERSION_RATES:?}"
        )));
    }
    let bundle = load_checkpoint(&job.checkpoint)?;
    let model = &bundle.model;
    for s in &job.speakers {
        model.speakers.row_of(s)?;
    }
    let tokens = job
        .sentences
        .sentences
        .iter()
        .map(|s| tokenize(&normalize_text(s)?, GRAPHEME_TOKENSET))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = (0..job.speakers.len())
        .flat_map(|s| (0..tokens.len()).map(move |i| (s, i)))
        .collect();

    let mels = exec.map(&pairs, |_, &(s, i)| {
        forward_infer(model, &tokens[i], &job.speakers[s], job.pace, 0.0)
    });
    let mut failures = Vec::new();
    let mut ok_mels = Vec::new();
    let mut ok_pairs = Vec::new();
    for (p, m) in pairs.iter().zip(mels) {
        match m {
            Ok(m) => {
                ok_mels.push(m);
                ok_pairs.push(*p);
            }
            Err(e) => failures.push((utterance_id(&job.speakers[p.0], p.1), e.to_string())),
        }
    }
    let rendered = batch_render(
        &ok_mels,
        &job.vocoder,
        job.seed,
        &BatchOpts {
            exec,
            fail_fast: false,
        },
    )?;
    if let Some(e) = rendered.error {
        return Err(e);
    }

    let root = job.out_dir.join(OUTPUT_RATE.to_string());
    let mut records = Vec::new();
    for (&(s, i), r) in ok_pairs.iter().zip(rendered.results) {
        let speaker = &job.speakers[s];
        let id = utterance_id(speaker, i);
        let w = match r.and_then(|w| to_rate(w, OUTPUT_RATE).map_err(|e| e.to_string())) {
            Ok(w) => w,
            Err(e) => {
                failures.push((id, e));
                continue;
            }
        };
        let rel = Path::new(speaker).join(format!("{id}.wav"));
        write_wav(&root.join(&rel), &w)?;
        records.push(UtteranceRecord {
            id,
            audio_path: rel,
            transcript: job.sentences.sentences[i].clone(),
            speaker_id: speaker.clone(),
            duration_s: w.duration_s(),
            sample_rate: OUTPUT_RATE,
        });
    }
    let total = pairs.len();
    if failures.len() as f64 > job.max_failure_fraction * total as f64 {
        return Err(Error::Batch {
            failed: failures.len(),
            total,
            details: failures
                .iter()
                .map(|(id, e)| format!("{id}: {e}"))
                .collect::<Vec<_>>()
                .join("; "),
        });
    }
    let manifest = CorpusManifest::new(records, SplitTag::Synth, &root)?;
    manifest.save(&root.join("manifest.jsonl"))?;
    let demographics = compute_demographics(&manifest)?;
    fsutil::write_atomic(
        &job.out_dir.join("demographics.json"),
        serde_json::to_string_pretty(&demographics)
            .expect("serializes")
            .as_bytes(),
    )?;
    let mut converted = BTreeMap::new();
    for &r in job.output_rates.iter().filter(|&&r| r != OUTPUT_RATE) {
        converted.insert(
            r,
            convert_dataset_rate(&manifest, r, &job.out_dir.join(r.to_string()), exec)?,
        );
    }
    Ok(GeneratedDataset {
        manifest,
        converted,
        demographics,
        failures,
    })
}

fn to_rate(w: Waveform, sr: u32) -> Result<Waveform> {
    if w.sample_rate == sr {
        Ok(w)
    } else {
        resample(&w, sr)
    }
}

/// Resample every utterance into `out_root`, keeping relative paths, and
/// write `out_root/manifest.jsonl`. The source files are left alone.
pub fn convert_dataset_rate(
    manifest: &CorpusManifest,
    target_sr: u32,
    out_root: &Path,
    exec: Exec,
) -> Result<CorpusManifest> {
    if !CONVERSION_RATES.contains(&target_sr) {
        return Err(Error::Config(format!(
            "target rate {target_sr} not in {CONVERSION_RATES:?}"
        )));
    }
    let records = exec
        .map(&manifest.records, |_, r| -> Result<UtteranceRecord> {
            let w = to_rate(read_wav(&manifest.resolve_audio(r))?, target_sr)?;
            let rel = if r.audio_path.is_absolute() {
                PathBuf::from(r.audio_path.file_name().unwrap_or_default())
            } else {
                r.audio_path.clone()
            };
            write_wav(&out_root.join(&rel), &w)?;
            Ok(UtteranceRecord {
                audio_path: rel,
                duration_s: w.duration_s(),
                sample_rate: target_sr,
                ..r.clone()
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let out = CorpusManifest::new(records, manifest.split_tag, out_root)?;
    out.save(&out_root.join("manifest.jsonl"))?;
    Ok(out)
}
