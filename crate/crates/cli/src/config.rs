//! Run configuration: one TOML document covering every stage.

use std::path::{Path, PathBuf};

use ctts_core::acoustic::ModelCfg;
use ctts_core::dsp::MelCfg;
use ctts_core::evalharness::Evaluator;
use ctts_core::synthgen::CONVERSION_RATES;
use ctts_core::trainer::TrainCfg;
use ctts_core::vocoder::VocoderSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for vocoding and evaluation sampling; training stages carry their own.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Force single-threaded execution.
    #[serde(default)]
    pub sequential: bool,
    pub data: DataCfg,
    #[serde(default)]
    pub mel: MelCfg,
    #[serde(default)]
    pub model: ModelCfg,
    #[serde(default)]
    pub pretrain: TrainCfg,
    #[serde(default)]
    pub finetune: TrainCfg,
    pub synthesize: SynthCfg,
    #[serde(default)]
    pub evaluate: EvalCfg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataCfg {
    /// Pretraining corpus manifest (JSON lines).
    pub adult_manifest: PathBuf,
    /// Finetuning corpus manifest.
    pub child_manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCfg {
    /// Speakers to synthesize; empty means every finetuning speaker.
    #[serde(default)]
    pub speakers: Vec<String>,
    /// Text file, one sentence per line.
    pub sentences: PathBuf,
    #[serde(default)]
    pub output_rates: Vec<u32>,
    #[serde(default = "one")]
    pub pace: f64,
    #[serde(default)]
    pub max_failure_fraction: f64,
    #[serde(default)]
    pub vocoder: VocoderSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalCfg {
    /// Utterances sampled per system.
    pub sample_size: usize,
    /// Real speech compared against the synthetic set; defaults to the
    /// finetuning corpus.
    pub real_manifest: Option<PathBuf>,
    pub mos: Evaluator,
    pub asr: Evaluator,
    pub embedding: Evaluator,
}

impl Default for EvalCfg {
    fn default() -> Self {
        Self {
            sample_size: 120,
            real_manifest: None,
            mos: Evaluator::Builtin,
            asr: Evaluator::Builtin,
            embedding: Evaluator::Builtin,
        }
    }
}

fn one() -> f64 {
    1.0
}

impl RunConfig {
    /// Parse `text`, apply `key.path=value` overrides, resolve relative paths
    /// against `base` and validate.
    pub fn parse(
        text: &str,
        overrides: &[(String, String)],
        base: &Path,
    ) -> Result<Self, CliError> {
        let mut doc: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for (key, raw) in overrides {
            set_path(&mut doc, key, parse_value(raw))?;
        }
        let mut cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let abs = std::path::absolute(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides, abs.parent().unwrap_or(Path::new("/")))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        fix(&mut self.data.adult_manifest);
        fix(&mut self.data.child_manifest);
        fix(&mut self.synthesize.sentences);
        if let Some(p) = &mut self.evaluate.real_manifest {
            fix(p);
        }
        if let VocoderSpec::External { exchange_dir, .. } = &mut self.synthesize.vocoder {
            fix(exchange_dir);
        }
        for e in [
            &mut self.evaluate.mos,
            &mut self.evaluate.asr,
            &mut self.evaluate.embedding,
        ] {
            if let Evaluator::External(c) = e {
                fix(&mut c.exchange_dir);
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let core = |r: ctts_core::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
        core(self.mel.validate())?;
        core(self.model.validate())?;
        core(
            self.pretrain
                .validate()
                .map_err(|e| ctts_core::Error::Config(format!("pretrain: {e}"))),
        )?;
        core(
            self.finetune
                .validate()
                .map_err(|e| ctts_core::Error::Config(format!("finetune: {e}"))),
        )?;
        core(self.synthesize.vocoder.validate())?;
        let bad = |m: String| Err(CliError::Config(m));
        if self.model.n_mels != self.mel.n_mels {
            return bad(format!(
                "model.n_mels {} differs from mel.n_mels {}",
                self.model.n_mels, self.mel.n_mels
            ));
        }
        if let Some(r) = self
            .synthesize
            .output_rates
            .iter()
            .find(|r| !CONVERSION_RATES.contains(r))
        {
            return bad(format!(
                "synthesize.output_rates: {r} not in {CONVERSION_RATES:?}"
            ));
        }
        if !(self.synthesize.pace > 0.0 && self.synthesize.pace.is_finite()) {
            return bad("synthesize.pace must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.synthesize.max_failure_fraction) {
            return bad("synthesize.max_failure_fraction must be in [0, 1]".into());
        }
        if self.evaluate.sample_size < 2 {
            return bad("evaluate.sample_size must be at least 2".into());
        }
        for (name, e) in [
            ("mos", &self.evaluate.mos),
            ("asr", &self.evaluate.asr),
            ("embedding", &self.evaluate.embedding),
        ] {
            if let Evaluator::External(c) = e {
                if c.command.trim().is_empty() {
                    return bad(format!("evaluate.{name}: command is empty"));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// TOML literal if it parses as one, otherwise a plain string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let mut t = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key}: {p} is not a table")))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Split `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

pub const TEMPLATE: &str = r#"# ctts run configuration. Relative paths resolve against this file's directory.
# Every key can be overridden on the command line with --set key.path=value.

seed = 1                      # vocoder and evaluation sampling seed
out_dir = "run"               # all artifacts go here
sequential = false            # true forces single-threaded execution

[data]
adult_manifest = "adults.jsonl"     # pretraining corpus (JSON lines)
child_manifest = "children.jsonl"   # finetuning corpus

[mel]
sample_rate = 22050
n_fft = 1024
win_length = 1024
hop_length = 256
n_mels = 80
fmin = 0.0
fmax = 8000.0

[model]
vocab_size = 31
d_model = 32
n_enc_layers = 2
n_dec_layers = 2
n_heads = 2
ff_dim = 64
n_mels = 80
speaker_embed_dim = 32        # must equal d_model
max_speakers = 16
dropout = 0.1
pitch_mean_hz = 200.0
pitch_std_hz = 100.0

[model.loss_weights]
mel = 1.0
duration = 1.0
pitch = 1.0
align = 1.0

[pretrain]
base_lr = 0.02
weight_decay = 1e-6
warmup_steps = 100
max_steps = 500
batch_size = 8
seed = 1
checkpoint_every = 100        # 0 keeps only the final checkpoint
grad_clip_norm = 1000.0

[finetune]
base_lr = 0.02
weight_decay = 1e-6
warmup_steps = 100
max_steps = 300
batch_size = 8
seed = 1
checkpoint_every = 100
grad_clip_norm = 1000.0

[synthesize]
speakers = []                 # empty: every finetuning speaker
sentences = "sentences.txt"   # one sentence per line
output_rates = [22050, 16000]
pace = 1.0
max_failure_fraction = 0.0
vocoder = { kind = "griffinlim", iterations = 32 }
# vocoder = { kind = "external", command = "my_vocoder {dir} {ids}", exchange_dir = "vocoder_io", timeout_s = 600 }

[evaluate]
sample_size = 120
# real_manifest = "children_test.jsonl"   # defaults to data.child_manifest
mos = { kind = "builtin" }
asr = { kind = "builtin" }    # the builtin ASR echoes reference transcripts
embedding = { kind = "builtin" }
# asr = { kind = "external", command = "my_asr {dir}", exchange_dir = "asr_io", timeout_s = 600 }
"#;

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(extra: &[(&str, &str)]) -> Result<RunConfig, CliError> {
        let ov: Vec<(String, String)> = extra
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        RunConfig::parse(TEMPLATE, &ov, Path::new("/base"))
    }

    #[test]
    fn template_parses_and_resolves_paths() {
        let c = parse(&[]).unwrap();
        assert_eq!(c.out_dir, Path::new("/base/run"));
        assert_eq!(c.data.adult_manifest, Path::new("/base/adults.jsonl"));
        assert_eq!(c.pretrain.max_steps, 500);
        assert_eq!(c.evaluate.asr, Evaluator::Builtin);
        let again = RunConfig::parse(&c.to_toml(), &[], Path::new("/elsewhere")).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn overrides_follow_config_paths() {
        let c = parse(&[
            ("pretrain.max_steps", "7"),
            ("seed", "42"),
            ("out_dir", "/tmp/x"),
            ("synthesize.speakers", "[\"a\"]"),
        ])
        .unwrap();
        assert_eq!((c.pretrain.max_steps, c.seed), (7, 42));
        assert_eq!(c.out_dir, Path::new("/tmp/x"));
        assert_eq!(c.synthesize.speakers, ["a"]);
        let c = parse(&[("evaluate.real_manifest", "real.jsonl")]).unwrap();
        assert_eq!(
            c.evaluate.real_manifest.unwrap(),
            Path::new("/base/real.jsonl")
        );
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for (k, v) in [
            ("pretrain.batch_size", "0"),
            ("model.n_mels", "40"),
            ("synthesize.output_rates", "[44100]"),
            ("evaluate.sample_size", "1"),
            ("unknown_key", "1"),
            ("model.colour", "\"red\""),
            ("seed", "\"x\""),
        ] {
            assert!(
                matches!(parse(&[(k, v)]), Err(CliError::Config(_))),
                "{k}={v}"
            );
        }
        assert!(parse_override("novalue").is_err());
        assert_eq!(
            parse_override("a.b = 3").unwrap(),
            ("a.b".into(), "3".into())
        );
    }
}
