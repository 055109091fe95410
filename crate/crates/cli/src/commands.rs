//! One function per pipeline stage. Each reads its upstream artifacts from
//! the run directory, delegates to the core crate and returns a JSON summary
//! of what it wrote, which ends up in the stage's run record.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ctts_core::corpus::toy::{generate_toy_corpus, toy_prompts, ToyCfg};
use ctts_core::corpus::{load_manifest, load_manifest_with, CorpusManifest, LoadOptions, SplitTag};
use ctts_core::evalharness::Evaluator;
use ctts_core::evalharness::{
    aggregate_mos, corpus_wer, render_report, run_asr_adapter, run_embedding_adapter,
    run_mos_adapter, sample_utterances, speaker_similarity, EmbeddingSet, MosReport, ReportInputs,
    SpeakerEmbeddings, SpeakerSimReport, WerReport, BUILTIN_TAG,
};
use ctts_core::par::Exec;
use ctts_core::synthgen::{generate_dataset, GenerationJob, SentenceList, OUTPUT_RATE};
use ctts_core::trainer::{
    build_feature_cache, finetune_features, latest_checkpoint, load_checkpoint, load_feature_cache,
    pretrain_features, resume, FeatureSet, LossCurve, TrainOpts, TrainOutcome, STAGE_CURVE_FILE,
};
use ctts_core::{fsutil, Error};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{RunConfig, TEMPLATE};
use crate::error::CliError;

type Res<T> = Result<T, CliError>;

/// Fixed layout under `out_dir`.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            root: cfg.out_dir.clone(),
        }
    }
    pub fn features(&self, set: &str) -> PathBuf {
        self.root.join("features").join(set)
    }
    pub fn pretrain(&self) -> PathBuf {
        self.root.join("pretrain")
    }
    pub fn finetune(&self) -> PathBuf {
        self.root.join("finetune")
    }
    pub fn synth(&self) -> PathBuf {
        self.root.join("synth")
    }
    pub fn synth_manifest(&self) -> PathBuf {
        self.synth()
            .join(OUTPUT_RATE.to_string())
            .join("manifest.jsonl")
    }
    pub fn evaluation(&self) -> PathBuf {
        self.root.join("eval").join("evaluation.json")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }
}

pub fn exec_of(cfg: &RunConfig) -> Exec {
    if cfg.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

const SETS: [&str; 2] = ["adult", "child"];

fn manifest_of(cfg: &RunConfig, set: &str) -> Res<CorpusManifest> {
    let path = if set == "adult" {
        &cfg.data.adult_manifest
    } else {
        &cfg.data.child_manifest
    };
    Ok(load_manifest(path)?)
}

pub fn prepare(cfg: &RunConfig) -> Res<Value> {
    let lay = Layout::new(cfg);
    let mut out = serde_json::Map::new();
    for set in SETS {
        let m = manifest_of(cfg, set)?;
        let (feats, stats) = build_feature_cache(&m, &cfg.mel, &lay.features(set), exec_of(cfg))?;
        info!(
            "{set}: {} items, {} rebuilt, {} up to date",
            feats.len(),
            stats.rebuilt,
            stats.reused
        );
        out.insert(
            set.into(),
            json!({"items": feats.len(), "rebuilt": stats.rebuilt, "reused": stats.reused, "fingerprint": feats.fingerprint}),
        );
    }
    Ok(Value::Object(out))
}

fn features(cfg: &RunConfig, set: &str) -> Res<FeatureSet> {
    let m = manifest_of(cfg, set)?;
    load_feature_cache(&m, &Layout::new(cfg).features(set)).map_err(|e| {
        CliError::MissingUpstream(format!(
            "{set} features are missing or incomplete ({e}); run prepare"
        ))
    })
}

/// Checkpoint to resume the stage in `dir` from, if it holds an unfinished one.
fn resumable(dir: &Path, pretraining: bool) -> Res<Option<ctts_core::trainer::CheckpointBundle>> {
    let Some(p) = latest_checkpoint(dir)? else {
        return Ok(None);
    };
    let b = load_checkpoint(&p)?;
    let same_stage = (b.stage_start == 0) == pretraining;
    Ok((same_stage && b.step < b.stage_start + b.train_cfg.max_steps).then_some(b))
}

fn clear_stage(dir: &Path) -> Res<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

fn stage_summary(dir: &Path, out: &TrainOutcome, resumed_from: Option<u64>) -> Res<Value> {
    let curve = LossCurve::load(&dir.join(STAGE_CURVE_FILE))?;
    let ckpt = latest_checkpoint(dir)?.expect("stage wrote a final checkpoint");
    Ok(json!({
        "checkpoint": ckpt,
        "loss_curve": dir.join(STAGE_CURVE_FILE),
        "step": out.bundle.step,
        "stage_start": out.bundle.stage_start,
        "resumed_from": resumed_from,
        "rows": curve.len(),
        "final_total_loss": curve.rows().last().map(|r| r.total),
        "speakers": out.bundle.model.speakers.labels(),
    }))
}

fn train_opts(cfg: &RunConfig, dir: &Path) -> TrainOpts {
    TrainOpts {
        exec: exec_of(cfg),
        checkpoint_dir: Some(dir.to_path_buf()),
    }
}

pub fn pretrain(cfg: &RunConfig, resume_run: bool) -> Res<Value> {
    let feats = features(cfg, "adult")?;
    let dir = Layout::new(cfg).pretrain();
    let opts = train_opts(cfg, &dir);
    if resume_run {
        if let Some(b) = resumable(&dir, true)? {
            info!("resuming pretraining from step {}", b.step);
            let out = resume(&b, &feats, &opts)?;
            return stage_summary(&dir, &out, Some(b.step));
        }
    }
    clear_stage(&dir)?;
    let out = pretrain_features(&feats, &cfg.model, &cfg.pretrain, &opts)?;
    stage_summary(&dir, &out, None)
}

pub fn finetune(cfg: &RunConfig, resume_run: bool) -> Res<Value> {
    let lay = Layout::new(cfg);
    let pre = latest_checkpoint(&lay.pretrain())?.ok_or_else(|| {
        CliError::MissingUpstream(format!(
            "finetune needs a pretrained checkpoint in {}; run pretrain first",
            lay.pretrain().display()
        ))
    })?;
    let feats = features(cfg, "child")?;
    let dir = lay.finetune();
    let opts = train_opts(cfg, &dir);
    if resume_run {
        if let Some(b) = resumable(&dir, false)? {
            info!("resuming finetuning from step {}", b.step);
            let out = resume(&b, &feats, &opts)?;
            return stage_summary(&dir, &out, Some(b.step));
        }
    }
    let base = load_checkpoint(&pre)?;
    clear_stage(&dir)?;
    let out = finetune_features(&base, &feats, &cfg.finetune, &opts)?;
    let mut v = stage_summary(&dir, &out, None)?;
    v["pretrained_checkpoint"] = json!(pre);
    Ok(v)
}

pub fn synthesize(cfg: &RunConfig) -> Res<Value> {
    let lay = Layout::new(cfg);
    let ckpt = latest_checkpoint(&lay.finetune())?.ok_or_else(|| {
        CliError::MissingUpstream(format!(
            "synthesize needs a finetuned checkpoint in {}; run finetune first",
            lay.finetune().display()
        ))
    })?;
    let speakers = if cfg.synthesize.speakers.is_empty() {
        manifest_of(cfg, "child")?.speakers()
    } else {
        cfg.synthesize.speakers.clone()
    };
    let tag = cfg.synthesize.sentences.file_stem().map_or_else(
        || "sentences".to_string(),
        |s| s.to_string_lossy().into_owned(),
    );
    let job = GenerationJob {
        checkpoint: ckpt.clone(),
        speakers,
        sentences: SentenceList::load(&cfg.synthesize.sentences, &tag)?,
        vocoder: cfg.synthesize.vocoder.clone(),
        output_rates: cfg.synthesize.output_rates.clone(),
        seed: cfg.seed,
        out_dir: lay.synth(),
        pace: cfg.synthesize.pace,
        max_failure_fraction: cfg.synthesize.max_failure_fraction,
    };
    let ds = generate_dataset(&job, exec_of(cfg))?;
    for (id, e) in &ds.failures {
        warn!("{id}: {e}");
    }
    Ok(json!({
        "checkpoint": ckpt,
        "manifest": lay.synth_manifest(),
        "utterances": ds.manifest.len(),
        "converted": ds.converted.keys().collect::<Vec<_>>(),
        "demographics": ds.demographics,
        "failures": ds.failures,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemEval {
    pub name: String,
    pub n_utterances: usize,
    pub mos: MosReport,
    pub wer: WerReport,
}

/// Everything `report` needs, written by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub seed: u64,
    pub sample_size: usize,
    pub systems: Vec<SystemEval>,
    pub similarity: SpeakerSimReport,
    /// `"<system>/<metric>"` to per-utterance failure reasons.
    pub failures: BTreeMap<String, BTreeMap<String, String>>,
}

pub const REAL_SYSTEM: &str = "Real child speech";
pub const SYNTH_SYSTEM: &str = "Synthetic child speech";

fn evaluator_tag(e: &Evaluator) -> &str {
    match e {
        Evaluator::Builtin => BUILTIN_TAG,
        Evaluator::External(c) => &c.command,
    }
}

pub fn evaluate(cfg: &RunConfig) -> Res<Value> {
    let lay = Layout::new(cfg);
    let synth_path = lay.synth_manifest();
    if !synth_path.exists() {
        return Err(CliError::MissingUpstream(format!(
            "evaluate needs a synthetic dataset at {}; run synthesize first",
            synth_path.display()
        )));
    }
    let synth = load_manifest_with(
        &synth_path,
        LoadOptions {
            split_tag: SplitTag::Synth,
            ..LoadOptions::default()
        },
    )?;
    let real = match &cfg.evaluate.real_manifest {
        Some(p) => load_manifest_with(
            p,
            LoadOptions {
                split_tag: SplitTag::Test,
                ..LoadOptions::default()
            },
        )?,
        None => manifest_of(cfg, "child")?,
    };
    let exec = exec_of(cfg);
    let ev = &cfg.evaluate;
    let mut systems = Vec::new();
    let mut failures = BTreeMap::new();
    let mut embeddings: [(SpeakerEmbeddings, BTreeMap<String, Vec<String>>); 2] =
        Default::default();
    for (k, (name, m)) in [(REAL_SYSTEM, &real), (SYNTH_SYSTEM, &synth)]
        .into_iter()
        .enumerate()
    {
        let sample = sample_utterances(m, ev.sample_size, cfg.seed);
        info!("{name}: scoring {} utterances", sample.len());
        let mut record = |metric: &str, f: BTreeMap<String, String>| {
            if !f.is_empty() {
                warn!("{name}: {} {metric} failures", f.len());
                failures.insert(format!("{name}/{metric}"), f);
            }
        };

        let mos = run_mos_adapter(&sample, &ev.mos, exec)?;
        record("mos", mos.failures);
        let mos = aggregate_mos(&mos.values.into_values().collect::<Vec<_>>())?;

        let asr = run_asr_adapter(&sample, &ev.asr, exec)?;
        record("asr", asr.failures);
        let pairs: Vec<(String, String, String)> = sample
            .records
            .iter()
            .filter_map(|r| {
                asr.values
                    .get(&r.id)
                    .map(|h| (r.id.clone(), r.transcript.clone(), h.clone()))
            })
            .collect();
        let wer = corpus_wer(&pairs)?;

        let emb = run_embedding_adapter(&sample, &ev.embedding, exec)?;
        record("embedding", emb.failures);
        let tag = if k == 0 { "A" } else { "B" };
        let (sets, ids) = &mut embeddings[k];
        for r in &sample.records {
            if let Some(v) = emb.values.get(&r.id) {
                sets.entry(r.speaker_id.clone())
                    .or_insert_with(|| EmbeddingSet {
                        speaker: r.speaker_id.clone(),
                        encoder_tag: evaluator_tag(&ev.embedding).to_string(),
                        vectors: Vec::new(),
                    })
                    .vectors
                    .push(v.clone());
                ids.entry(format!("{tag}:{}", r.speaker_id))
                    .or_default()
                    .push(r.id.clone());
            }
        }
        systems.push(SystemEval {
            name: name.to_string(),
            n_utterances: sample.len(),
            mos,
            wer,
        });
    }
    let [(set_a, mut ids), (set_b, ids_b)] = embeddings;
    ids.extend(ids_b);
    let similarity = speaker_similarity(&set_a, &set_b, &ids)?;
    let e = Evaluation {
        seed: cfg.seed,
        sample_size: ev.sample_size,
        systems,
        similarity,
        failures,
    };
    let path = lay.evaluation();
    fsutil::write_atomic(
        &path,
        serde_json::to_string_pretty(&e)
            .expect("serializes")
            .as_bytes(),
    )?;
    Ok(json!({
        "evaluation": path,
        "systems": e.systems.iter().map(|s| json!({
            "name": s.name, "mos": s.mos.display(), "wer": s.wer.wer, "n": s.n_utterances
        })).collect::<Vec<_>>(),
        "similarity": {"min": e.similarity.min, "max": e.similarity.max, "mean": e.similarity.mean},
        "failed_items": e.failures.values().map(BTreeMap::len).sum::<usize>(),
    }))
}

pub fn report(cfg: &RunConfig) -> Res<Value> {
    let lay = Layout::new(cfg);
    let path = lay.evaluation();
    if !path.exists() {
        return Err(CliError::MissingUpstream(format!(
            "report needs evaluation results at {}; run evaluate first",
            path.display()
        )));
    }
    let e: Evaluation = serde_json::from_slice(&fsutil::read(&path)?)
        .map_err(|err| Error::Checkpoint(format!("{}: {err}", path.display())))?;
    let inputs = ReportInputs {
        mos: e
            .systems
            .iter()
            .map(|s| (s.name.clone(), s.mos.clone()))
            .collect(),
        wer: e
            .systems
            .iter()
            .map(|s| (s.name.clone(), s.wer.clone()))
            .collect(),
        similarity: Some(e.similarity),
        seed: e.seed,
        sample_size: e.sample_size,
    };
    let files = render_report(&lay.report(), &inputs)?;
    Ok(json!({ "files": files }))
}

/// Write a procedurally generated corpus, a prompt list and a starter config.
pub fn toy_corpus(out: &Path, utterances: usize, seed: u64, prompts: usize) -> Res<Value> {
    let c = generate_toy_corpus(
        out,
        &ToyCfg {
            utterances_per_speaker: utterances,
            seed,
            ..ToyCfg::default()
        },
    )?;
    let sentences = toy_prompts(prompts, seed ^ 0x5eed);
    fsutil::write_atomic(
        &out.join("sentences.txt"),
        (sentences.join("\n") + "\n").as_bytes(),
    )?;
    let cfg_path = out.join("config.toml");
    let wrote_config = !cfg_path.exists();
    if wrote_config {
        fsutil::write_atomic(&cfg_path, TEMPLATE.as_bytes())?;
    } else {
        info!("{} exists; left unchanged", cfg_path.display());
    }
    Ok(json!({
        "adults": c.adults.len(),
        "children": c.children.len(),
        "sentences": sentences.len(),
        "config": cfg_path,
        "wrote_config": wrote_config,
    }))
}
