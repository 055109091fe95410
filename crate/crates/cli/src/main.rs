mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use ctts_core::fsutil;
use serde_json::{json, Value};

use config::{parse_override, RunConfig, TEMPLATE};
use error::CliError;

#[derive(Parser)]
#[command(name = "ctts", version, about = "Child TTS transfer-learning pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Same as --set seed=N.
    #[arg(long)]
    seed: Option<u64>,
    /// Same as --set out_dir=PATH, relative to the working directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override any config value by its dotted path, e.g. pretrain.max_steps=50.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    set: Vec<(String, String)>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the feature caches for both corpora.
    Prepare(Common),
    /// Train a fresh model on the adult corpus.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Continue from the latest unfinished checkpoint instead of restarting.
        #[arg(long)]
        resume: bool,
    },
    /// Continue training the pretrained model on the child corpus.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
    },
    /// Generate the synthetic dataset.
    Synthesize(Common),
    /// Score real and synthetic speech.
    Evaluate(Common),
    /// Render report tables from the evaluation results.
    Report(Common),
    /// All stages in order.
    Run(Common),
    /// Write a procedurally generated toy corpus with a starter config.
    ToyCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        utterances: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Number of synthesis prompts written to sentences.txt.
        #[arg(long, default_value_t = 10)]
        prompts: usize,
    },
    /// Print a commented configuration template.
    ConfigTemplate,
}

fn load(c: &Common) -> Result<RunConfig, CliError> {
    let mut ov = c.set.clone();
    if let Some(s) = c.seed {
        ov.push(("seed".into(), s.to_string()));
    }
    if let Some(d) = &c.out_dir {
        let abs = std::env::current_dir()
            .map(|cwd| cwd.join(d))
            .unwrap_or_else(|_| d.clone());
        ov.push((
            "out_dir".into(),
            toml::Value::String(abs.to_string_lossy().into_owned()).to_string(),
        ));
    }
    RunConfig::load(&c.config, &ov)
}

/// Run one stage and write `runs/<stage>.json` next to its outputs.
fn stage(
    name: &str,
    cfg: &RunConfig,
    f: impl FnOnce(&RunConfig) -> Result<Value, CliError>,
) -> Result<(), CliError> {
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let t = Instant::now();
    log::info!("{name}: starting");
    let outputs = f(cfg)?;
    let config_toml = cfg.to_toml();
    let record = json!({
        "command": name,
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": fsutil::sha256_hex(config_toml.as_bytes()),
        "config": cfg,
        "seeds": {"run": cfg.seed, "pretrain": cfg.pretrain.seed, "finetune": cfg.finetune.seed},
        "exec": format!("{:?}", commands::exec_of(cfg)),
        "started_unix_s": started,
        "wall_time_s": t.elapsed().as_secs_f64(),
        "outputs": outputs,
    });
    let path = commands::Layout::new(cfg)
        .runs()
        .join(format!("{name}.json"));
    fsutil::write_atomic(
        &path,
        serde_json::to_string_pretty(&record)
            .expect("serializes")
            .as_bytes(),
    )?;
    log::info!("{name}: done in {:.1} s", t.elapsed().as_secs_f64());
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Prepare(c) => stage("prepare", &load(&c)?, commands::prepare),
        Cmd::Pretrain { common, resume } => stage("pretrain", &load(&common)?, |cfg| {
            commands::pretrain(cfg, resume)
        }),
        Cmd::Finetune { common, resume } => stage("finetune", &load(&common)?, |cfg| {
            commands::finetune(cfg, resume)
        }),
        Cmd::Synthesize(c) => stage("synthesize", &load(&c)?, commands::synthesize),
        Cmd::Evaluate(c) => stage("evaluate", &load(&c)?, commands::evaluate),
        Cmd::Report(c) => stage("report", &load(&c)?, commands::report),
        Cmd::Run(c) => {
            let cfg = load(&c)?;
            stage("prepare", &cfg, commands::prepare)?;
            stage("pretrain", &cfg, |cfg| commands::pretrain(cfg, false))?;
            stage("finetune", &cfg, |cfg| commands::finetune(cfg, false))?;
            stage("synthesize", &cfg, commands::synthesize)?;
            stage("evaluate", &cfg, commands::evaluate)?;
            stage("report", &cfg, commands::report)
        }
        Cmd::ToyCorpus {
            out,
            utterances,
            seed,
            prompts,
        } => {
            let v = commands::toy_corpus(&out, utterances, seed, prompts)?;
            println!("{}", serde_json::to_string_pretty(&v).expect("serializes"));
            Ok(())
        }
        Cmd::ConfigTemplate => {
            print!("{TEMPLATE}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
