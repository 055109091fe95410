//! FastPitch-style parallel acoustic model.
//!
//! Token embeddings plus the speaker's embedding row plus sinusoidal positions
//! feed a stack of feed-forward transformer blocks (post-norm multi-head
//! self-attention, then two kernel-3 convolutions). Duration and pitch
//! predictors (two conv/ReLU/LayerNorm layers and a linear head) read the
//! encoder output. A kernel-3 convolution embeds the per-token pitch and is
//! added to the encoder output, which the length regulator repeats by token
//! durations before a second transformer stack and a linear mel projection.
//!
//! During training the durations come from the jointly learned aligner:
//! distance attention between convolutional encodings of the token
//! embeddings and the target mel, trained with the forward-sum loss, with a
//! Viterbi pass giving hard durations.

mod model;
pub mod tape;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::aligner::{AlignmentPosterior, DurationTargets};
use crate::dsp::{MelCfg, PitchContour};
use crate::{Error, Result};

pub use model::{
    forward_backward, forward_infer, forward_infer_detailed, forward_train, InferOutput,
};
pub use tape::Mat;

/// Conv kernel width used everywhere in the model.
pub const KERNEL: usize = 3;
/// Standard deviation of the noise added to new speaker rows.
pub const NEW_SPEAKER_SIGMA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub mel: f64,
    pub duration: f64,
    pub pitch: f64,
    pub align: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mel: 1.0,
            duration: 1.0,
            pitch: 1.0,
            align: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelCfg {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub n_mels: usize,
    pub speaker_embed_dim: usize,
    pub max_speakers: usize,
    pub dropout: f64,
    /// Pitch is modelled as `(f0 - mean) / std` on voiced tokens and 0 on
    /// unvoiced ones.
    pub pitch_mean_hz: f64,
    pub pitch_std_hz: f64,
    #[serde(default)]
    pub loss_weights: LossWeights,
}

impl Default for ModelCfg {
    fn default() -> Self {
        Self {
            vocab_size: 31,
            d_model: 32,
            n_enc_layers: 2,
            n_dec_layers: 2,
            n_heads: 2,
            ff_dim: 64,
            n_mels: 80,
            speaker_embed_dim: 32,
            max_speakers: 16,
            dropout: 0.1,
            pitch_mean_hz: 200.0,
            pitch_std_hz: 100.0,
            loss_weights: LossWeights::default(),
        }
    }
}

impl ModelCfg {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model cfg: {m}")));
        if self.vocab_size == 0
            || self.d_model == 0
            || self.n_heads == 0
            || self.ff_dim == 0
            || self.n_mels == 0
        {
            return bad("sizes must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.speaker_embed_dim != self.d_model {
            return bad(format!(
                "speaker_embed_dim {} must equal d_model {} (additive conditioning)",
                self.speaker_embed_dim, self.d_model
            ));
        }
        if self.max_speakers == 0 {
            return bad("max_speakers must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.pitch_std_hz > 0.0) {
            return bad("pitch_std_hz must be positive".into());
        }
        Ok(())
    }
}

/// Named, ordered trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Mat>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, m: Mat) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(m);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Mat] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Mat] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

pub const SPEAKER_TABLE: &str = "speaker_table";

/// Maps speaker labels to rows of the `speaker_table` parameter.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpeakerTable {
    pub id_map: BTreeMap<String, usize>,
}

impl SpeakerTable {
    pub fn row_of(&self, label: &str) -> Result<usize> {
        self.id_map
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownSpeaker(label.to_string()))
    }

    pub fn len(&self) -> usize {
        self.id_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_map.is_empty()
    }

    /// Labels ordered by row.
    pub fn labels(&self) -> Vec<String> {
        let mut v: Vec<_> = self.id_map.iter().collect();
        v.sort_by_key(|(_, &r)| r);
        v.into_iter().map(|(l, _)| l.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModelState {
    pub cfg: ModelCfg,
    pub params: ParamSet,
    pub speakers: SpeakerTable,
    pub mel_cfg: MelCfg,
    /// Seeds that produced the current parameters, oldest first.
    pub seed_lineage: Vec<u64>,
}

impl AcousticModelState {
    pub fn speaker_embeddings(&self) -> &Mat {
        self.params
            .get(SPEAKER_TABLE)
            .expect("speaker table exists")
    }

    /// Assign table rows, in order, to labels on a fresh model.
    pub fn register_speakers(&mut self, labels: &[String]) -> Result<()> {
        for l in labels {
            if self.speakers.id_map.contains_key(l) {
                return Err(Error::DuplicateSpeaker(l.clone()));
            }
            let row = self.speakers.len();
            if row >= self.cfg.max_speakers {
                return Err(Error::Config(format!(
                    "speaker table full ({} rows); use add_speakers to grow it",
                    self.cfg.max_speakers
                )));
            }
            self.speakers.id_map.insert(l.clone(), row);
        }
        Ok(())
    }
}

/// Weights draw from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` with `fan_in` the
/// weight's row count (input features times kernel width for convolutions);
/// embedding tables use `fan_in = d_model`; biases and LayerNorm shifts start
/// at 0 and LayerNorm gains at 1. Tensors are drawn in construction order
/// from one ChaCha8 stream seeded with `seed`.
pub fn init_model(cfg: &ModelCfg, seed: u64) -> Result<AcousticModelState> {
    cfg.validate()?;
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        ps: ParamSet::new(),
    };
    let d = cfg.d_model;
    b.uniform("tok_emb", cfg.vocab_size, d, d);
    b.uniform(SPEAKER_TABLE, cfg.max_speakers, d, d);
    for l in 0..cfg.n_enc_layers {
        b.block(&format!("enc.{l}"), d, cfg.ff_dim);
    }
    for p in ["dur", "pitch"] {
        b.linear(&format!("{p}.conv1"), KERNEL * d, d);
        b.norm(&format!("{p}.ln1"), d);
        b.linear(&format!("{p}.conv2"), KERNEL * d, d);
        b.norm(&format!("{p}.ln2"), d);
        b.linear(&format!("{p}.proj"), d, 1);
    }
    b.linear("pitch_emb", KERNEL, d);
    for l in 0..cfg.n_dec_layers {
        b.block(&format!("dec.{l}"), d, cfg.ff_dim);
    }
    b.linear("mel_proj", d, cfg.n_mels);
    b.linear("align.key_conv", KERNEL * d, d);
    b.linear("align.key_proj", d, d);
    b.linear("align.query_conv", KERNEL * cfg.n_mels, d);
    b.linear("align.query_proj", d, d);
    let ps = b.ps;

    Ok(AcousticModelState {
        cfg: cfg.clone(),
        params: ps,
        speakers: SpeakerTable::default(),
        mel_cfg: MelCfg {
            n_mels: cfg.n_mels,
            ..MelCfg::default()
        },
        seed_lineage: vec![seed],
    })
}

struct Builder {
    rng: ChaCha8Rng,
    ps: ParamSet,
}

impl Builder {
    fn uniform(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let data = (0..rows * cols)
            .map(|_| dist.sample(&mut self.rng))
            .collect();
        self.ps.push(name, Mat::from_vec(rows, cols, data));
    }

    fn linear(&mut self, name: &str, fan_in: usize, out: usize) {
        self.uniform(&format!("{name}.w"), fan_in, out, fan_in);
        self.ps.push(format!("{name}.b"), Mat::zeros(1, out));
    }

    fn norm(&mut self, name: &str, c: usize) {
        self.ps.push(format!("{name}.g"), Mat::filled(1, c, 1.0));
        self.ps.push(format!("{name}.b"), Mat::zeros(1, c));
    }

    fn block(&mut self, p: &str, d: usize, ff: usize) {
        for proj in ["q", "k", "v", "o"] {
            self.linear(&format!("{p}.attn.{proj}"), d, d);
        }
        self.norm(&format!("{p}.ln1"), d);
        self.linear(&format!("{p}.ff1"), KERNEL * d, ff);
        self.linear(&format!("{p}.ff2"), KERNEL * ff, d);
        self.norm(&format!("{p}.ln2"), d);
    }
}

/// Register new speakers. Each new row is the mean of the registered rows plus
/// `N(0, NEW_SPEAKER_SIGMA^2)` noise; the table grows when it is full.
/// Existing rows are not touched.
pub fn add_speakers(
    state: &AcousticModelState,
    new_labels: &[String],
    seed: u64,
) -> Result<AcousticModelState> {
    let mut seen = std::collections::HashSet::new();
    for l in new_labels {
        if state.speakers.id_map.contains_key(l) || !seen.insert(l) {
            return Err(Error::DuplicateSpeaker(l.clone()));
        }
    }
    let mut out = state.clone();
    let d = state.cfg.d_model;
    let table = state.speaker_embeddings();
    let registered: Vec<usize> = state.speakers.id_map.values().copied().collect();
    let mut mean = vec![0.0; d];
    if !registered.is_empty() {
        for &r in &registered {
            for (m, v) in mean.iter_mut().zip(table.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= registered.len() as f64);
    }
    let needed = state.speakers.len() + new_labels.len();
    if needed > table.rows {
        let t = out.params.get_mut(SPEAKER_TABLE).expect("speaker table");
        t.data.resize(needed * d, 0.0);
        t.rows = needed;
        out.cfg.max_speakers = needed;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NEW_SPEAKER_SIGMA).expect("valid sigma");
    let t = out.params.get_mut(SPEAKER_TABLE).expect("speaker table");
    for (k, label) in new_labels.iter().enumerate() {
        let row = state.speakers.len() + k;
        for (dst, m) in t.row_mut(row).iter_mut().zip(&mean) {
            *dst = m + noise.sample(&mut rng);
        }
        out.speakers.id_map.insert(label.clone(), row);
    }
    out.seed_lineage.push(seed);
    Ok(out)
}

/// Repeat row `t` of `token_reps` `durations[t]` times, in order.
pub fn length_regulate(token_reps: &Mat, durations: &DurationTargets) -> Result<Mat> {
    if durations.durations.len() != token_reps.rows {
        return Err(Error::Shape(format!(
            "{} durations for {} token rows",
            durations.durations.len(),
            token_reps.rows
        )));
    }
    let idx = model::frame_to_token(durations);
    let mut out = Mat::zeros(idx.len(), token_reps.cols);
    for (r, &t) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(token_reps.row(t));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PitchTarget {
    /// One F0 value in Hz per token, 0 for unvoiced tokens.
    PerToken(Vec<f64>),
    /// Frame-level contour, averaged per token with the aligner's durations.
    PerFrame(PitchContour),
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOpts {
    /// Enables dropout with masks drawn from this seed.
    pub dropout_seed: Option<u64>,
    /// Use these durations instead of the aligner's Viterbi path.
    pub fixed_durations: Option<DurationTargets>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mel_mse: f64,
    pub duration: f64,
    pub pitch: f64,
    /// Forward-sum loss divided by the number of frames.
    pub align: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.mel * self.mel_mse
            + w.duration * self.duration
            + w.pitch * self.pitch
            + w.align * self.align
    }
}

#[derive(Debug, Clone)]
pub struct TrainBatchOutput {
    pub pred_mel: Mat,
    pub pred_log_durations: Vec<f64>,
    /// Normalized pitch, see [`ModelCfg::pitch_mean_hz`].
    pub pred_pitch: Vec<f64>,
    pub alignment: AlignmentPosterior,
    pub durations: DurationTargets,
    pub losses: LossBreakdown,
}
