//! Mel-to-waveform rendering: the built-in Griffin-Lim reference or an
//! external neural vocoder.
//!
//! External exchange: each mel goes to `<dir>/<id>.melb` (see
//! [`crate::dsp::encode_mel_block`]), the command runs once for the whole
//! batch with `{dir}` and `{ids}` placeholders, and must leave a mono PCM16
//! `<dir>/<id>.wav` per id.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dsp::{griffin_lim, read_wav, write_mel_block, MelSpectrogram, Waveform};
use crate::external::{run_adapter, AdapterCommand};
use crate::par::Exec;
use crate::{Error, Result};

pub const DEFAULT_GL_ITERATIONS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum VocoderSpec {
    GriffinLim {
        iterations: usize,
    },
    External {
        command: String,
        exchange_dir: PathBuf,
        #[serde(default = "default_timeout")]
        timeout_s: f64,
    },
}

fn default_timeout() -> f64 {
    600.0
}

impl Default for VocoderSpec {
    fn default() -> Self {
        VocoderSpec::GriffinLim {
            iterations: DEFAULT_GL_ITERATIONS,
        }
    }
}

impl VocoderSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            VocoderSpec::GriffinLim { iterations: 0 } => Err(Error::Config(
                "griffin-lim needs at least one iteration".into(),
            )),
            VocoderSpec::External { command, .. } if command.trim().is_empty() => {
                Err(Error::Config("external vocoder command is empty".into()))
            }
            _ => Ok(()),
        }
    }
}

pub fn render(m: &MelSpectrogram, spec: &VocoderSpec, seed: u64) -> Result<Waveform> {
    let mut out = batch_render(std::slice::from_ref(m), spec, seed, &BatchOpts::default())?;
    match out.results.pop().expect("one item") {
        Ok(w) => Ok(w),
        Err(msg) => Err(out.error.unwrap_or(Error::External {
            msg,
            diagnostics: String::new(),
        })),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BatchOpts {
    pub exec: Exec,
    /// Stop after the first failed item instead of rendering the rest.
    pub fail_fast: bool,
}

/// Per-item outcomes in input order.
#[derive(Debug)]
pub struct BatchRender {
    pub results: Vec<std::result::Result<Waveform, String>>,
    /// Set when the whole batch failed at once (external command error).
    pub error: Option<Error>,
}

impl BatchRender {
    pub fn failures(&self) -> Vec<(usize, &str)> {
        self.results
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().err().map(|e| (i, e.as_str())))
            .collect()
    }

    /// All waveforms, or an aggregate error naming every failed index.
    pub fn into_result(self) -> Result<Vec<Waveform>> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let total = self.results.len();
        let f = self.failures();
        if !f.is_empty() {
            let details = f
                .iter()
                .map(|(i, m)| format!("item {i}: {m}"))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::Batch {
                failed: f.len(),
                total,
                details,
            });
        }
        Ok(self
            .results
            .into_iter()
            .map(|r| r.expect("no failures"))
            .collect())
    }
}

/// Item `k` is rendered with seed `seed + k`. Outputs do not depend on the
/// execution mode.
pub fn batch_render(
    mels: &[MelSpectrogram],
    spec: &VocoderSpec,
    seed: u64,
    opts: &BatchOpts,
) -> Result<BatchRender> {
    spec.validate()?;
    match spec {
        VocoderSpec::GriffinLim { iterations } => {
            let results = if opts.fail_fast {
                let mut out = Vec::with_capacity(mels.len());
                for (k, m) in mels.iter().enumerate() {
                    let r = griffin_lim(m, *iterations, seed.wrapping_add(k as u64))
                        .map_err(|e| e.to_string());
                    let failed = r.is_err();
                    out.push(r);
                    if failed {
                        break;
                    }
                }
                out
            } else {
                opts.exec.map(mels, |k, m| {
                    griffin_lim(m, *iterations, seed.wrapping_add(k as u64))
                        .map_err(|e| e.to_string())
                })
            };
            Ok(BatchRender {
                results,
                error: None,
            })
        }
        VocoderSpec::External {
            command,
            exchange_dir,
            timeout_s,
        } => {
            let ids: Vec<String> = (0..mels.len()).map(|k| format!("mel_{k:05}")).collect();
            for (id, m) in ids.iter().zip(mels) {
                let wav = exchange_dir.join(format!("{id}.wav"));
                if wav.exists() {
                    std::fs::remove_file(&wav).map_err(|e| Error::io(&wav, e))?;
                }
                write_mel_block(&exchange_dir.join(format!("{id}.melb")), m)?;
            }
            let cmd = AdapterCommand {
                command: command.clone(),
                exchange_dir: exchange_dir.clone(),
                timeout_s: *timeout_s,
            };
            if let Err(e) = run_adapter(&cmd, &ids) {
                let msg = e.to_string();
                return Ok(BatchRender {
                    results: mels.iter().map(|_| Err(msg.clone())).collect(),
                    error: Some(e),
                });
            }
            let results = ids
                .iter()
                .zip(mels)
                .map(|(id, m)| read_output(&exchange_dir.join(format!("{id}.wav")), m))
                .collect();
            Ok(BatchRender {
                results,
                error: None,
            })
        }
    }
}

fn read_output(
    path: &std::path::Path,
    m: &MelSpectrogram,
) -> std::result::Result<Waveform, String> {
    if !path.exists() {
        return Err(format!("vocoder wrote no {}", path.display()));
    }
    let w = read_wav(path).map_err(|e| e.to_string())?;
    let hop = m.cfg.hop_length;
    let expected = m.n_frames * hop;
    if w.len() + hop < expected || w.len() > expected + hop {
        return Err(format!(
            "{} has {} samples, expected {expected} +/- {hop}",
            path.display(),
            w.len()
        ));
    }
    Ok(w)
}
