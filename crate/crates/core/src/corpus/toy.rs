//! Procedural speech-like corpus with known alignments.
//!
//! Every grapheme becomes a segment of whole mel frames: vowels and voiced
//! consonants are harmonic stacks shaped by two letter-specific formants,
//! the remaining consonants are shaped noise, and spaces and punctuation are
//! near-silence. Each speaker has a base F0 and a formant scale; the F0 glides
//! down slowly across the utterance. Because segments are frame-aligned, the
//! per-token frame counts are exact duration targets.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    normalize_text, tokenize, CorpusManifest, SplitTag, UtteranceRecord, GRAPHEME_TOKENSET,
};
use crate::aligner::DurationTargets;
use crate::dsp::{write_wav, MelCfg, Waveform};
use crate::{fsutil, Result};

const WORDS: [&str; 24] = [
    "a", "cat", "sat", "on", "the", "mat", "we", "see", "blue", "sky", "i", "like", "to", "play",
    "ball", "red", "sun", "run", "fun", "go", "home", "now", "my", "dog",
];

/// Base F0 of the adult voices, all inside 70 to 250 Hz.
pub const ADULT_F0_HZ: [f64; 4] = [95.0, 125.0, 160.0, 200.0];
/// Base F0 of the child voices, all inside 200 to 500 Hz.
pub const CHILD_F0_HZ: [f64; 4] = [260.0, 320.0, 380.0, 440.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyCfg {
    pub utterances_per_speaker: usize,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for ToyCfg {
    fn default() -> Self {
        Self {
            utterances_per_speaker: 50,
            sample_rate: 22050,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyVoice {
    pub label: String,
    pub f0_hz: f64,
    pub formant_scale: f64,
}

pub fn adult_voices() -> Vec<ToyVoice> {
    voices("adult", &ADULT_F0_HZ, 1.0)
}

pub fn child_voices() -> Vec<ToyVoice> {
    voices("child", &CHILD_F0_HZ, 1.2)
}

fn voices(prefix: &str, f0: &[f64], scale: f64) -> Vec<ToyVoice> {
    f0.iter()
        .enumerate()
        .map(|(i, &f)| ToyVoice {
            label: format!("{prefix}_{}", i + 1),
            f0_hz: f,
            formant_scale: scale * (1.0 + 0.04 * i as f64),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyUtterance {
    pub text: String,
    pub audio: Waveform,
    /// Frames per token of the normalized text.
    pub durations: DurationTargets,
}

/// Random two- or three-word sentence.
pub fn toy_sentence(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(2..=3);
    let words: Vec<&str> = (0..n)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
        .collect();
    format!("{}.", words.join(" "))
}

/// `n` seeded four- to six-word sentences over the toy vocabulary, long
/// enough for utterance-level measurements such as speaker embeddings.
pub fn toy_prompts(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = rng.gen_range(4..=6);
            let words: Vec<&str> = (0..k)
                .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
                .collect();
            format!("{}.", words.join(" "))
        })
        .collect()
}

fn is_vowel_like(c: char) -> bool {
    "aeiouylmnrwbdgvz".contains(c)
}

fn frames_for(c: char) -> u32 {
    match c {
        'a' | 'e' | 'i' | 'o' | 'u' | 'y' => 6,
        ' ' => 2,
        '.' | ',' | '?' => 3,
        _ => 3,
    }
}

/// Two formant frequencies per letter, spread over 300..3000 Hz.
fn formants(c: char) -> (f64, f64) {
    let k = (c as u32).wrapping_sub('a' as u32) as f64;
    (
        300.0 + 37.0 * ((k * 7.0) % 26.0),
        900.0 + 80.0 * ((k * 11.0) % 26.0),
    )
}

fn envelope(f: f64, f1: f64, f2: f64) -> f64 {
    let bump = |c: f64, w: f64| (-(f - c).powi(2) / (2.0 * w * w)).exp();
    0.15 + bump(f1, 150.0) + 0.7 * bump(f2, 250.0)
}

/// Render `text` (normalized on the way in) in `voice`.
pub fn synthesize_toy(
    text: &str,
    voice: &ToyVoice,
    sample_rate: u32,
    rng: &mut impl Rng,
) -> Result<ToyUtterance> {
    let text = normalize_text(text)?;
    let tokens = tokenize(&text, GRAPHEME_TOKENSET)?;
    let hop = MelCfg::for_rate(sample_rate).hop_length;
    let sr = sample_rate as f64;
    let chars: Vec<char> = text.chars().collect();
    let durations: Vec<u32> = chars.iter().map(|&c| frames_for(c)).collect();
    let total: usize = durations.iter().map(|&d| d as usize).sum::<usize>() * hop;
    let mut out = Vec::with_capacity(total);
    let mut phase = 0.0;
    let mut n = 0usize;
    for (&c, &d) in chars.iter().zip(&durations) {
        let len = d as usize * hop;
        let (f1, f2) = formants(c);
        let (f1, f2) = (f1 * voice.formant_scale, f2 * voice.formant_scale);
        for i in 0..len {
            // Short ramps at segment edges avoid clicks.
            let edge = ((i.min(len - 1 - i) as f64) / 64.0).min(1.0);
            let s = if c.is_ascii_alphabetic() && is_vowel_like(c) {
                let f0 = voice.f0_hz * (1.0 - 0.08 * n as f64 / total as f64);
                phase += 2.0 * PI * f0 / sr;
                let n_harm = ((4000.0 / f0) as usize).max(1);
                let mut acc = 0.0;
                for h in 1..=n_harm {
                    acc += envelope(h as f64 * f0, f1, f2) * (h as f64 * phase).sin();
                }
                0.25 * acc / (n_harm as f64).sqrt()
            } else if c.is_ascii_alphabetic() {
                rng.gen_range(-0.08..0.08)
            } else {
                rng.gen_range(-1e-3..1e-3)
            };
            out.push(s * edge);
            n += 1;
        }
    }
    let audio = Waveform::clipped(out, sample_rate);
    debug_assert_eq!(tokens.token_ids.len(), durations.len());
    Ok(ToyUtterance {
        text,
        audio,
        durations: DurationTargets { durations },
    })
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub adults: CorpusManifest,
    pub children: CorpusManifest,
}

/// Write `<out>/wavs/<speaker>_<nnn>.wav`, `adults.jsonl`, `children.jsonl`
/// and `alignments.jsonl` (id and per-token frame counts).
pub fn generate_toy_corpus(out: &Path, cfg: &ToyCfg) -> Result<ToyCorpus> {
    let mut align = String::new();
    let mut build = |vs: Vec<ToyVoice>, tag: u64| -> Result<CorpusManifest> {
        let mut records = Vec::new();
        for (vi, v) in vs.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (tag << 32) ^ vi as u64);
            for k in 0..cfg.utterances_per_speaker {
                let text = toy_sentence(&mut rng);
                let u = synthesize_toy(&text, v, cfg.sample_rate, &mut rng)?;
                let id = format!("{}_{:03}", v.label, k);
                let rel = Path::new("wavs").join(format!("{id}.wav"));
                write_wav(&out.join(&rel), &u.audio)?;
                align.push_str(
                    &serde_json::json!({"id": id, "durations": u.durations.durations}).to_string(),
                );
                align.push('\n');
                records.push(UtteranceRecord {
                    id,
                    audio_path: rel,
                    transcript: u.text,
                    speaker_id: v.label.clone(),
                    duration_s: u.audio.duration_s(),
                    sample_rate: cfg.sample_rate,
                });
            }
        }
        CorpusManifest::new(records, SplitTag::Train, out)
    };
    let adults = build(adult_voices(), 1)?;
    let children = build(child_voices(), 2)?;
    adults.save(&out.join("adults.jsonl"))?;
    children.save(&out.join("children.jsonl"))?;
    fsutil::write_atomic(&out.join("alignments.jsonl"), align.as_bytes())?;
    Ok(ToyCorpus { adults, children })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{extract_f0, mel_spectrogram};

    #[test]
    fn durations_cover_the_mel_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = &adult_voices()[1];
        for _ in 0..10 {
            let s = toy_sentence(&mut rng);
            let u = synthesize_toy(&s, v, 22050, &mut rng).unwrap();
            let mel = mel_spectrogram(&u.audio, &MelCfg::default()).unwrap();
            assert_eq!(mel.n_frames, u.durations.total_frames());
            assert_eq!(u.durations.durations.len(), u.text.chars().count());
        }
    }

    #[test]
    fn voices_have_their_pitch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for v in adult_voices().iter().chain(&child_voices()) {
            let u = synthesize_toy("we see blue sky", v, 22050, &mut rng).unwrap();
            let pc = extract_f0(&u.audio, &MelCfg::default(), 60.0, 600.0).unwrap();
            let mut f = pc.voiced_values();
            f.sort_by(f64::total_cmp);
            let med = f[f.len() / 2];
            assert!((med - v.f0_hz).abs() < 0.1 * v.f0_hz, "{} {med}", v.label);
        }
        assert!(ADULT_F0_HZ.iter().all(|f| (70.0..=250.0).contains(f)));
        assert!(CHILD_F0_HZ.iter().all(|f| (200.0..=500.0).contains(f)));
    }

    #[test]
    fn corpus_files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_toy_corpus(
            dir.path(),
            &ToyCfg {
                utterances_per_speaker: 2,
                ..ToyCfg::default()
            },
        )
        .unwrap();
        assert_eq!(c.adults.len(), 8);
        assert_eq!(c.children.speakers().len(), 4);
        let reloaded = crate::corpus::load_manifest(&dir.path().join("children.jsonl")).unwrap();
        assert_eq!(reloaded.records, c.children.records);
        let lines = std::fs::read_to_string(dir.path().join("alignments.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 16);
    }
}
