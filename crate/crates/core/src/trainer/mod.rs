//! Two-stage training driver: pretrain on the adult corpus, then resume on
//! the child corpus with the step counter (and so the learning-rate schedule)
//! carrying on where pretraining stopped.
//!
//! Each optimizer step draws `batch_size` utterances from a per-epoch seeded
//! permutation, computes per-utterance gradients (in parallel when enabled),
//! sums them in batch order, averages, clips to a global norm and applies a
//! LAMB update (Adam-style moments, decoupled weight decay and a per-tensor
//! trust ratio). Batch order and dropout masks depend only on the seed and
//! the step, so training N steps in one go or with a checkpoint at K and a
//! resume gives bit-identical parameters and losses.

mod cache;
mod checkpoint;
mod curve;
mod features;

use std::path::PathBuf;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acoustic::{
    add_speakers, forward_backward, init_model, AcousticModelState, ForwardOpts, LossBreakdown,
    Mat, ModelCfg, PitchTarget,
};
use crate::corpus::CorpusManifest;
use crate::dsp::MelCfg;
use crate::par::Exec;
use crate::{Error, Result};

pub use cache::{build_feature_cache, cache_path, load_feature_cache, CacheStats};
pub use checkpoint::{
    checkpoint_path, decode_checkpoint, encode_checkpoint, latest_checkpoint, load_checkpoint,
    save_checkpoint, FORMAT_VERSION,
};
pub use curve::{
    early_stop_check, early_stop_row, smooth, LossCurve, LossRow, CSV_HEADER, SMOOTHING_WINDOW,
};
pub use features::{extract_features, featurize, FeatureSet, TrainItem, F0_SEARCH_HZ};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.98;
pub const ADAM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCfg {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub max_steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub grad_clip_norm: f64,
}

impl Default for TrainCfg {
    fn default() -> Self {
        Self {
            base_lr: 0.1,
            weight_decay: 1e-6,
            warmup_steps: 2000,
            max_steps: 1000,
            batch_size: 8,
            seed: 0,
            checkpoint_every: 0,
            grad_clip_norm: 1000.0,
        }
    }
}

impl TrainCfg {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train cfg: {m}")));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be > 0");
        }
        if self.warmup_steps < 1 {
            return bad("warmup_steps must be >= 1");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be > 0");
        }
        if !(self.weight_decay >= 0.0) || !(self.grad_clip_norm > 0.0) {
            return bad("weight_decay must be >= 0 and grad_clip_norm > 0");
        }
        Ok(())
    }
}

/// Noam-style warmup: linear rise to `base_lr` at `warmup_steps`, then
/// inverse square-root decay.
pub fn lr_at_step(step: u64, cfg: &TrainCfg) -> f64 {
    let s = step.max(1) as f64;
    let w = cfg.warmup_steps as f64;
    cfg.base_lr * w.sqrt() * (s.powf(-0.5)).min(s * w.powf(-1.5))
}

/// First and second moments, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl OptimizerState {
    pub fn zeros_like(model: &AcousticModelState) -> Self {
        let z: Vec<Mat> = model
            .params
            .tensors()
            .iter()
            .map(|t| Mat::zeros(t.rows, t.cols))
            .collect();
        Self { m: z.clone(), v: z }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointBundle {
    pub model: AcousticModelState,
    pub optimizer: OptimizerState,
    /// Optimizer steps taken so far, across stages.
    pub step: u64,
    /// Value of `step` when the current stage began.
    pub stage_start: u64,
    pub train_cfg: TrainCfg,
    pub corpus_fingerprint: String,
}

/// Loss history of the stage, kept in the checkpoint directory.
pub const STAGE_CURVE_FILE: &str = "loss.csv";

#[derive(Debug, Clone, Default)]
pub struct TrainOpts {
    pub exec: Exec,
    /// Where periodic checkpoints go; `None` keeps them in memory only.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: CheckpointBundle,
    pub curve: LossCurve,
}

/// Featurize `corpus` and pretrain a fresh model on it.
pub fn pretrain(
    corpus: &CorpusManifest,
    model_cfg: &ModelCfg,
    train_cfg: &TrainCfg,
) -> Result<TrainOutcome> {
    let opts = TrainOpts::default();
    let feats = extract_features(corpus, &MelCfg::default(), opts.exec)?;
    pretrain_features(&feats, model_cfg, train_cfg, &opts)
}

pub fn pretrain_features(
    feats: &FeatureSet,
    model_cfg: &ModelCfg,
    train_cfg: &TrainCfg,
    opts: &TrainOpts,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    if feats.is_empty() {
        return Err(Error::InsufficientData(
            "pretraining corpus is empty".into(),
        ));
    }
    let mut model = init_model(model_cfg, train_cfg.seed)?;
    model.mel_cfg = feats.items[0].mel.cfg;
    check_features(&model, feats)?;
    model.register_speakers(&feats.speakers())?;
    let bundle = CheckpointBundle {
        optimizer: OptimizerState::zeros_like(&model),
        model,
        step: 0,
        stage_start: 0,
        train_cfg: train_cfg.clone(),
        corpus_fingerprint: feats.fingerprint.clone(),
    };
    run_stage(bundle, feats, opts)
}

/// Featurize `child_corpus` and continue training `ckpt` on it.
pub fn finetune(
    ckpt: &CheckpointBundle,
    child_corpus: &CorpusManifest,
    train_cfg: &TrainCfg,
) -> Result<TrainOutcome> {
    let opts = TrainOpts::default();
    if child_corpus.is_empty() {
        return Err(Error::InsufficientData("finetuning corpus is empty".into()));
    }
    let feats = extract_features(child_corpus, &ckpt.model.mel_cfg, opts.exec)?;
    finetune_features(ckpt, &feats, train_cfg, &opts)
}

/// Speakers unknown to the checkpoint are added with [`add_speakers`]; the
/// optimizer moments of the grown speaker table start at zero for new rows.
pub fn finetune_features(
    ckpt: &CheckpointBundle,
    feats: &FeatureSet,
    train_cfg: &TrainCfg,
    opts: &TrainOpts,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    if feats.is_empty() {
        return Err(Error::InsufficientData("finetuning corpus is empty".into()));
    }
    check_features(&ckpt.model, feats)?;
    let new: Vec<String> = feats
        .speakers()
        .into_iter()
        .filter(|s| !ckpt.model.speakers.id_map.contains_key(s))
        .collect();
    let mut bundle = ckpt.clone();
    if !new.is_empty() {
        bundle.model = add_speakers(&ckpt.model, &new, train_cfg.seed)?;
        for (i, t) in bundle.model.params.tensors().iter().enumerate() {
            for mom in [&mut bundle.optimizer.m[i], &mut bundle.optimizer.v[i]] {
                if mom.rows != t.rows {
                    mom.data.resize(t.data.len(), 0.0);
                    mom.rows = t.rows;
                }
            }
        }
    }
    bundle.stage_start = bundle.step;
    bundle.train_cfg = train_cfg.clone();
    bundle.corpus_fingerprint = feats.fingerprint.clone();
    run_stage(bundle, feats, opts)
}

/// Continue an interrupted stage from a periodic checkpoint up to
/// `stage_start + max_steps`, with the stage's own config and data.
pub fn resume(
    ckpt: &CheckpointBundle,
    feats: &FeatureSet,
    opts: &TrainOpts,
) -> Result<TrainOutcome> {
    if feats.fingerprint != ckpt.corpus_fingerprint {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained on corpus {} but features come from {}",
            ckpt.corpus_fingerprint, feats.fingerprint
        )));
    }
    check_features(&ckpt.model, feats)?;
    run_stage(ckpt.clone(), feats, opts)
}

fn check_features(model: &AcousticModelState, feats: &FeatureSet) -> Result<()> {
    for it in &feats.items {
        if let Some(&t) = it
            .tokens
            .token_ids
            .iter()
            .find(|&&t| t as usize >= model.cfg.vocab_size)
        {
            return Err(Error::Config(format!(
                "utterance {} has token id {t} but the model vocabulary has {} entries",
                it.id, model.cfg.vocab_size
            )));
        }
        if it.mel.cfg != model.mel_cfg {
            return Err(Error::Config(format!(
                "utterance {} uses a different mel configuration than the model",
                it.id
            )));
        }
    }
    Ok(())
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Utterance indices for the `local`-th step (1-based) of a stage.
pub fn batch_indices(n_items: usize, batch_size: usize, seed: u64, local: u64) -> Vec<usize> {
    let start = (local - 1) as usize * batch_size;
    let mut cached: Option<(usize, Vec<usize>)> = None;
    (start..start + batch_size)
        .map(|g| {
            let epoch = g / n_items;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut perm: Vec<usize> = (0..n_items).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(
                    mix(seed ^ mix(epoch as u64)),
                ));
                cached = Some((epoch, perm));
            }
            cached.as_ref().expect("permutation cached").1[g % n_items]
        })
        .collect()
}

fn run_stage(
    mut bundle: CheckpointBundle,
    feats: &FeatureSet,
    opts: &TrainOpts,
) -> Result<TrainOutcome> {
    let cfg = bundle.train_cfg.clone();
    let end = bundle.stage_start + cfg.max_steps;
    let mut curve = LossCurve::new();
    // Full stage history next to the checkpoints: rows an earlier run wrote
    // up to the step being resumed from, then this run's rows.
    let mut history = LossCurve::new();
    if let Some(dir) = &opts.checkpoint_dir {
        if let Ok(prev) = LossCurve::load(&dir.join(STAGE_CURVE_FILE)) {
            for r in prev
                .rows()
                .iter()
                .filter(|r| r.step > bundle.stage_start && r.step <= bundle.step)
            {
                history.push(*r)?;
            }
        }
    }
    while bundle.step < end {
        let step = bundle.step + 1;
        let (losses, lr) = train_step(&mut bundle, feats, &cfg, step, opts.exec)?;
        curve.push(LossRow::new(step, &losses, lr))?;
        if step.is_multiple_of(50) || step == end {
            info!(
                "step {step}: total {:.4} mel {:.4} lr {lr:.2e}",
                losses.total, losses.mel_mse
            );
        }
        if let Some(dir) = &opts.checkpoint_dir {
            if step == end
                || (cfg.checkpoint_every > 0 && step.is_multiple_of(cfg.checkpoint_every))
            {
                save_checkpoint(&bundle, &checkpoint_path(dir, step))?;
                let mut full = history.clone();
                full.extend(&curve)?;
                full.save(&dir.join(STAGE_CURVE_FILE))?;
            }
        }
    }
    Ok(TrainOutcome { bundle, curve })
}

fn train_step(
    bundle: &mut CheckpointBundle,
    feats: &FeatureSet,
    cfg: &TrainCfg,
    step: u64,
    exec: Exec,
) -> Result<(LossBreakdown, f64)> {
    let local = step - bundle.stage_start;
    let idx = batch_indices(feats.len(), cfg.batch_size, cfg.seed, local);
    let model = &bundle.model;
    let results = exec.map(&idx, |j, &i| {
        let it = &feats.items[i];
        let opts = ForwardOpts {
            dropout_seed: Some(mix(cfg.seed ^ mix(step ^ mix(j as u64)))),
            fixed_durations: None,
        };
        forward_backward(
            model,
            &it.tokens,
            &it.speaker,
            &it.mel,
            &PitchTarget::PerFrame(it.pitch.clone()),
            &opts,
        )
    });

    let b = idx.len() as f64;
    let mut grads: Vec<Mat> = model
        .params
        .tensors()
        .iter()
        .map(|t| Mat::zeros(t.rows, t.cols))
        .collect();
    let mut losses = LossBreakdown::default();
    for r in results {
        let (out, g) = r.map_err(|e| match e {
            Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { step },
            e => e,
        })?;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.data.iter_mut().zip(&gi.data).for_each(|(a, x)| *a += x);
        }
        let l = out.losses;
        losses.mel_mse += l.mel_mse / b;
        losses.duration += l.duration / b;
        losses.pitch += l.pitch / b;
        losses.align += l.align / b;
        losses.total += l.total / b;
    }
    if !losses.total.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    let norm = grads.iter().map(|g| g.sum_sq()).sum::<f64>().sqrt() / b;
    if !norm.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    let scale = if norm > cfg.grad_clip_norm {
        cfg.grad_clip_norm / norm
    } else {
        1.0
    } / b;
    let lr = lr_at_step(step, cfg);
    lamb_update(bundle, &grads, scale, lr, cfg.weight_decay, step);
    bundle.step = step;
    Ok((losses, lr))
}

fn lamb_update(bundle: &mut CheckpointBundle, grads: &[Mat], scale: f64, lr: f64, wd: f64, t: u64) {
    let bc1 = 1.0 - BETA1.powf(t as f64);
    let bc2 = 1.0 - BETA2.powf(t as f64);
    let opt = &mut bundle.optimizer;
    for (i, p) in bundle.model.params.tensors_mut().iter_mut().enumerate() {
        let (m, v) = (&mut opt.m[i].data, &mut opt.v[i].data);
        let mut update = Vec::with_capacity(p.data.len());
        for k in 0..p.data.len() {
            let g = grads[i].data[k] * scale;
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
            update.push((m[k] / bc1) / ((v[k] / bc2).sqrt() + ADAM_EPS) + wd * p.data[k]);
        }
        let pn = p.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        let un = update.iter().map(|x| x * x).sum::<f64>().sqrt();
        let trust = if pn > 0.0 && un > 0.0 { pn / un } else { 1.0 };
        for (x, u) in p.data.iter_mut().zip(&update) {
            *x -= lr * trust * u;
        }
    }
}
