use crate::corpus::{normalize_text, tokenize, CorpusManifest, TokenSequence, GRAPHEME_TOKENSET};
use crate::dsp::{
    extract_f0, mel_spectrogram, read_wav, resample, MelCfg, MelSpectrogram, PitchContour, Waveform,
};
use crate::par::Exec;
use crate::{Error, Result};

/// F0 search range used for training targets.
pub const F0_SEARCH_HZ: (f64, f64) = (60.0, 600.0);

/// Everything the model needs from one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub id: String,
    pub speaker: String,
    pub tokens: TokenSequence,
    pub mel: MelSpectrogram,
    pub pitch: PitchContour,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub items: Vec<TrainItem>,
    pub fingerprint: String,
}

impl FeatureSet {
    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.items.iter().map(|i| i.speaker.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Mel, F0 contour and tokens for one waveform; audio at another rate is
/// resampled to `cfg.sample_rate` first.
pub fn featurize(
    id: &str,
    speaker: &str,
    transcript: &str,
    audio: &Waveform,
    cfg: &MelCfg,
) -> Result<TrainItem> {
    let w = if audio.sample_rate == cfg.sample_rate {
        audio.clone()
    } else {
        resample(audio, cfg.sample_rate)?
    };
    let tokens = tokenize(&normalize_text(transcript)?, GRAPHEME_TOKENSET)?;
    let mel = mel_spectrogram(&w, cfg)?;
    let fmax = F0_SEARCH_HZ.1.min(cfg.sample_rate as f64 / 4.0);
    let pitch = extract_f0(&w, cfg, F0_SEARCH_HZ.0, fmax)?;
    if mel.n_frames < tokens.token_ids.len() {
        return Err(Error::NoAlignment {
            n_tokens: tokens.token_ids.len(),
            n_frames: mel.n_frames,
        });
    }
    Ok(TrainItem {
        id: id.to_string(),
        speaker: speaker.to_string(),
        tokens,
        mel,
        pitch,
    })
}

/// Featurize a whole manifest, in manifest order.
pub fn extract_features(corpus: &CorpusManifest, cfg: &MelCfg, exec: Exec) -> Result<FeatureSet> {
    cfg.validate()?;
    let items = exec
        .map(&corpus.records, |_, r| {
            let w = read_wav(&corpus.resolve_audio(r))?;
            featurize(&r.id, &r.speaker_id, &r.transcript, &w, cfg)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSet {
        items,
        fingerprint: corpus.fingerprint(),
    })
}
