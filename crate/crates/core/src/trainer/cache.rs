//! On-disk feature cache, one file per utterance.
//!
//! ```text
//! "CTTSFEAT" | u32 version | u32 header_len | JSON header
//!            | f64 mel values | f64 f0 | u8 voiced     (all little-endian)
//! ```
//!
//! The header carries a content key: SHA-256 over the WAV bytes, the
//! transcript, the speaker, the mel configuration and the F0 search range.
//! An entry is reused only when its key matches, so editing any of those
//! rebuilds exactly the affected items.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::features::{featurize, FeatureSet, TrainItem, F0_SEARCH_HZ};
use crate::corpus::{CorpusManifest, TokenSequence, UtteranceRecord};
use crate::dsp::{decode_wav, MelCfg, MelSpectrogram, PitchContour};
use crate::par::Exec;
use crate::{fsutil, Error, Result};

const MAGIC: &[u8; 8] = b"CTTSFEAT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    key: String,
    id: String,
    speaker: String,
    tokens: TokenSequence,
    n_frames: usize,
    mel_cfg: MelCfg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub rebuilt: usize,
    pub reused: usize,
}

pub fn cache_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.ctft"))
}

fn item_key(rec: &UtteranceRecord, wav: &[u8], cfg: &MelCfg) -> String {
    let mut h = Sha256::new();
    h.update(wav);
    for part in [&rec.transcript, &rec.speaker_id] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.update(serde_json::to_vec(cfg).expect("serializes"));
    h.update(F0_SEARCH_HZ.0.to_le_bytes());
    h.update(F0_SEARCH_HZ.1.to_le_bytes());
    hex::encode(h.finalize())
}

fn encode(item: &TrainItem, key: &str) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        key: key.to_string(),
        id: item.id.clone(),
        speaker: item.speaker.clone(),
        tokens: item.tokens.clone(),
        n_frames: item.mel.n_frames,
        mel_cfg: item.mel.cfg,
    })
    .expect("serializes");
    let mut out = Vec::with_capacity(
        16 + header.len()
            + 8 * (item.mel.values.len() + item.pitch.n_frames())
            + item.pitch.n_frames(),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in item.mel.values.iter().chain(&item.pitch.f0_hz) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(item.pitch.voiced.iter().map(|&v| u8::from(v)));
    out
}

fn decode(bytes: &[u8]) -> Result<(String, TrainItem)> {
    let bad = |m: &str| Error::Checkpoint(format!("feature cache: {m}"));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("version {version}, expected {VERSION}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let header: Header = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| bad("truncated header"))
        .and_then(|h| serde_json::from_slice(h).map_err(|e| bad(&e.to_string())))?;
    let n_mel = header.n_frames * header.mel_cfg.n_mels;
    let body = &bytes[16 + hlen..];
    if body.len() != 8 * (n_mel + header.n_frames) + header.n_frames {
        return Err(bad("body length mismatch"));
    }
    let floats: Vec<f64> = body[..8 * (n_mel + header.n_frames)]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let voiced = body[8 * (n_mel + header.n_frames)..]
        .iter()
        .map(|&b| b != 0)
        .collect();
    let mel = MelSpectrogram::new(floats[..n_mel].to_vec(), header.n_frames, header.mel_cfg)?;
    let item = TrainItem {
        id: header.id,
        speaker: header.speaker,
        tokens: header.tokens,
        mel,
        pitch: PitchContour {
            f0_hz: floats[n_mel..].to_vec(),
            voiced,
        },
    };
    Ok((header.key, item))
}

fn cached(path: &Path, key: &str) -> Option<TrainItem> {
    let bytes = std::fs::read(path).ok()?;
    match decode(&bytes) {
        Ok((k, item)) if k == key => Some(item),
        _ => None,
    }
}

/// Featurize `corpus` through the cache in `dir`, rebuilding only entries
/// whose content key changed. Errors name the failing utterance.
pub fn build_feature_cache(
    corpus: &CorpusManifest,
    cfg: &MelCfg,
    dir: &Path,
    exec: Exec,
) -> Result<(FeatureSet, CacheStats)> {
    cfg.validate()?;
    let results = exec.map(&corpus.records, |_, r| -> Result<(TrainItem, bool)> {
        let audio = corpus.resolve_audio(r);
        let wav = fsutil::read(&audio)?;
        let key = item_key(r, &wav, cfg);
        let path = cache_path(dir, &r.id);
        if let Some(item) = cached(&path, &key) {
            return Ok((item, false));
        }
        let w = decode_wav(&wav)
            .map_err(|e| Error::Audio(format!("{} ({}): {e}", r.id, audio.display())))?;
        let item =
            featurize(&r.id, &r.speaker_id, &r.transcript, &w, cfg).map_err(|e| match e {
                Error::Io { .. } | Error::Audio(_) => e,
                other => Error::InvalidRecord {
                    id: r.id.clone(),
                    msg: other.to_string(),
                },
            })?;
        fsutil::write_atomic(&path, &encode(&item, &key))?;
        Ok((item, true))
    });
    let mut stats = CacheStats::default();
    let mut items = Vec::with_capacity(results.len());
    for r in results {
        let (item, rebuilt) = r?;
        if rebuilt {
            stats.rebuilt += 1;
        } else {
            stats.reused += 1;
        }
        items.push(item);
    }
    Ok((
        FeatureSet {
            items,
            fingerprint: corpus.fingerprint(),
        },
        stats,
    ))
}

/// Read a prepared cache without touching audio. Missing or stale-format
/// entries are an error naming the first one; content freshness is the
/// job of [`build_feature_cache`].
pub fn load_feature_cache(corpus: &CorpusManifest, dir: &Path) -> Result<FeatureSet> {
    let items = corpus
        .records
        .iter()
        .map(|r| {
            let path = cache_path(dir, &r.id);
            let (_, item) = decode(&fsutil::read(&path)?)?;
            if item.id != r.id || item.speaker != r.speaker_id {
                return Err(Error::Checkpoint(format!(
                    "feature cache {} does not belong to {}",
                    path.display(),
                    r.id
                )));
            }
            Ok(item)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSet {
        items,
        fingerprint: corpus.fingerprint(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SplitTag;
    use crate::dsp::{write_wav, Waveform};
    use crate::trainer::extract_features;

    fn corpus(dir: &Path) -> CorpusManifest {
        let recs = (0..3)
            .map(|i| {
                let w = Waveform::clipped(
                    (0..11025).map(|n| {
                        0.3 * (2.0 * std::f64::consts::PI * (150.0 + 50.0 * i as f64) * n as f64
                            / 22050.0)
                            .sin()
                    }),
                    22050,
                );
                write_wav(&dir.join(format!("u{i}.wav")), &w).unwrap();
                UtteranceRecord {
                    id: format!("u{i}"),
                    audio_path: format!("u{i}.wav").into(),
                    transcript: "a cab".into(),
                    speaker_id: "s".into(),
                    duration_s: 0.5,
                    sample_rate: 22050,
                }
            })
            .collect();
        CorpusManifest::new(recs, SplitTag::Train, dir).unwrap()
    }

    #[test]
    fn rebuilds_only_changed_items() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(dir.path());
        let cfg = MelCfg::for_rate(22050);
        let cache = dir.path().join("cache");
        let (a, s) = build_feature_cache(&c, &cfg, &cache, Exec::Sequential).unwrap();
        assert_eq!(
            s,
            CacheStats {
                rebuilt: 3,
                reused: 0
            }
        );
        assert_eq!(a, extract_features(&c, &cfg, Exec::Sequential).unwrap());
        let (b, s) = build_feature_cache(&c, &cfg, &cache, Exec::Sequential).unwrap();
        assert_eq!(
            s,
            CacheStats {
                rebuilt: 0,
                reused: 3
            }
        );
        assert_eq!(a, b);
        assert_eq!(load_feature_cache(&c, &cache).unwrap(), a);

        let mut c2 = c.clone();
        c2.records[1].transcript = "a bad cab".into();
        let (_, s) = build_feature_cache(&c2, &cfg, &cache, Exec::Sequential).unwrap();
        assert_eq!(
            s,
            CacheStats {
                rebuilt: 1,
                reused: 2
            }
        );
    }

    #[test]
    fn corrupt_wav_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(dir.path());
        std::fs::write(dir.path().join("u2.wav"), b"RIFFjunk").unwrap();
        let err = build_feature_cache(
            &c,
            &MelCfg::for_rate(22050),
            &dir.path().join("cache"),
            Exec::Sequential,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Audio(_)));
        assert!(err.to_string().contains("u2"), "{err}");
        assert!(load_feature_cache(&c, &dir.path().join("nowhere")).is_err());
    }
}
