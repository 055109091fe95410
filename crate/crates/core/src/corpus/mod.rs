//! Corpus manifests, text front-end and train/test splitting.

mod split;
mod text;
pub mod toy;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{fsutil, Error, Result};

pub use split::split_corpus;
pub use text::{detokenize, normalize_text, tokenize, TokenSequence, Tokenset, GRAPHEME_TOKENSET};

/// Sample rates accepted anywhere in the pipeline.
pub const SUPPORTED_RATES: [u32; 3] = [16000, 22050, 24000];

/// One utterance. Field names on disk follow the JSON-lines manifest format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub id: String,
    pub audio_path: PathBuf,
    #[serde(rename = "text")]
    pub transcript: String,
    #[serde(rename = "speaker")]
    pub speaker_id: String,
    pub duration_s: f64,
    pub sample_rate: u32,
}

impl UtteranceRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::InvalidRecord {
            id: self.id.clone(),
            msg,
        };
        if self.id.is_empty() {
            return Err(bad("empty id".into()));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(bad(format!(
                "duration_s must be > 0, got {}",
                self.duration_s
            )));
        }
        if !SUPPORTED_RATES.contains(&self.sample_rate) {
            return Err(bad(format!("unsupported sample_rate {}", self.sample_rate)));
        }
        normalize_text(&self.transcript).map_err(|e| bad(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    Synth,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
            SplitTag::Synth => "synth",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub records: Vec<UtteranceRecord>,
    pub split_tag: SplitTag,
    /// Directory that relative `audio_path`s are resolved against.
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingAudio {
    #[default]
    Error,
    WarnAndDrop,
    /// Do not look at the filesystem at all.
    Ignore,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub split_tag: SplitTag,
    pub missing_audio: MissingAudio,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            split_tag: SplitTag::Train,
            missing_audio: MissingAudio::Error,
        }
    }
}

impl CorpusManifest {
    pub fn new(
        records: Vec<UtteranceRecord>,
        split_tag: SplitTag,
        base_dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        let m = Self {
            records,
            split_tag,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            r.validate()?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(())
    }

    pub fn total_seconds(&self) -> f64 {
        self.records.iter().map(|r| r.duration_s).sum()
    }

    pub fn total_hours(&self) -> f64 {
        self.total_seconds() / 3600.0
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve_audio(&self, rec: &UtteranceRecord) -> PathBuf {
        if rec.audio_path.is_absolute() {
            rec.audio_path.clone()
        } else {
            self.base_dir.join(&rec.audio_path)
        }
    }

    /// Speaker labels in sorted order.
    pub fn speakers(&self) -> Vec<String> {
        self.seconds_per_speaker().into_keys().collect()
    }

    pub fn seconds_per_speaker(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.speaker_id.clone()).or_insert(0.0) += r.duration_s;
        }
        out
    }

    /// Canonical JSON-lines serialization: one object per line, keys in
    /// manifest order, `\n` line endings, trailing newline.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_jsonl().as_bytes())
    }

    /// Short content hash used to tie checkpoints to the data they saw.
    pub fn fingerprint(&self) -> String {
        fsutil::sha256_hex(self.to_jsonl().as_bytes())[..16].to_string()
    }
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    load_manifest_with(path, LoadOptions::default())
}

pub fn load_manifest_with(path: &Path, opts: LoadOptions) -> Result<CorpusManifest> {
    let bytes = fsutil::read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::ManifestLine {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("not UTF-8: {e}"),
    })?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, path, base_dir, opts)
}

pub(crate) fn parse_manifest(
    text: &str,
    path: &Path,
    base_dir: PathBuf,
    opts: LoadOptions,
) -> Result<CorpusManifest> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: UtteranceRecord = serde_json::from_str(line).map_err(|e| Error::ManifestLine {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        rec.validate()?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        if opts.missing_audio != MissingAudio::Ignore {
            let audio = if rec.audio_path.is_absolute() {
                rec.audio_path.clone()
            } else {
                base_dir.join(&rec.audio_path)
            };
            if !audio.is_file() {
                if opts.missing_audio == MissingAudio::Error {
                    return Err(Error::InvalidRecord {
                        id: rec.id,
                        msg: format!("audio file {} not found", audio.display()),
                    });
                }
                log::warn!(
                    "dropping {}: audio file {} not found",
                    rec.id,
                    audio.display()
                );
                continue;
            }
        }
        records.push(rec);
    }
    Ok(CorpusManifest {
        records,
        split_tag: opts.split_tag,
        base_dir,
    })
}
