//! Running external adapter commands.
//!
//! A command template is run with `sh -c` after substituting `{dir}` (the
//! exchange directory) and `{ids}` (a file listing one item id per line),
//! both shell-quoted. The environment is passed through unchanged. Output is
//! captured so failures can carry the command's diagnostics.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::{fsutil, Error, Result};

/// Longest stderr excerpt kept in an error.
const DIAGNOSTIC_LIMIT: usize = 4000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterCommand {
    pub command: String,
    pub exchange_dir: PathBuf,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    600.0
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.to_string_lossy().replace('\'', r"'\''"))
}

pub fn expand_template(template: &str, dir: &Path, ids_file: &Path) -> String {
    template
        .replace("{dir}", &shell_quote(dir))
        .replace("{ids}", &shell_quote(ids_file))
}

#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub stdout: String,
    pub stderr: String,
}

/// Write `ids` to `<dir>/ids.txt`, run the expanded template and wait at most
/// `timeout_s` seconds.
pub fn run_adapter(cmd: &AdapterCommand, ids: &[String]) -> Result<CommandOutput> {
    let dir = &cmd.exchange_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ids_file = dir.join("ids.txt");
    let mut list = ids.join("\n");
    list.push('\n');
    fsutil::write_atomic(&ids_file, list.as_bytes())?;
    run_shell(
        &expand_template(&cmd.command, dir, &ids_file),
        cmd.timeout_s,
    )
}

pub fn run_shell(command: &str, timeout_s: f64) -> Result<CommandOutput> {
    let mut cmd = Command::new("sh");
    cmd.arg("-c").arg(command);
    // Own process group, so a timeout can stop the command's children too.
    #[cfg(unix)]
    std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
    let mut child = cmd
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::External {
            msg: format!("cannot start `{command}`: {e}"),
            diagnostics: String::new(),
        })?;
    let drain = |mut r: Box<dyn Read + Send>| {
        std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = r.read_to_end(&mut buf);
            String::from_utf8_lossy(&buf).into_owned()
        })
    };
    let out = drain(Box::new(child.stdout.take().expect("piped stdout")));
    let err = drain(Box::new(child.stderr.take().expect("piped stderr")));
    let deadline = Instant::now() + Duration::from_secs_f64(timeout_s.max(0.0));
    let status = loop {
        match child.try_wait() {
            Ok(Some(s)) => break Some(s),
            Ok(None) if Instant::now() >= deadline => {
                #[cfg(unix)]
                let _ = Command::new("kill")
                    .args(["-KILL", "--", &format!("-{}", child.id())])
                    .stderr(Stdio::null())
                    .status();
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                return Err(Error::External {
                    msg: format!("waiting for `{command}`: {e}"),
                    diagnostics: String::new(),
                })
            }
        }
    };
    let stdout = out.join().unwrap_or_default();
    let mut stderr = err.join().unwrap_or_default();
    if stderr.len() > DIAGNOSTIC_LIMIT {
        let mut cut = stderr.len() - DIAGNOSTIC_LIMIT;
        while !stderr.is_char_boundary(cut) {
            cut += 1;
        }
        stderr = stderr[cut..].to_string();
    }
    match status {
        None => Err(Error::External {
            msg: format!("`{command}` timed out after {timeout_s} s"),
            diagnostics: stderr,
        }),
        Some(s) if !s.success() => Err(Error::External {
            msg: format!("`{command}` exited with {s}"),
            diagnostics: stderr,
        }),
        Some(_) => Ok(CommandOutput { stdout, stderr }),
    }
}

/// One line of `<dir>/batch.jsonl` for evaluator adapters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub id: String,
    pub wav: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

/// One line of `<dir>/result.jsonl`; exactly one payload field is expected,
/// depending on the adapter kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultItem {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Write `batch.jsonl`, run the adapter and return `result.jsonl` rows in
/// batch order. Every batch id must come back exactly once.
pub fn exchange(cmd: &AdapterCommand, items: &[BatchItem]) -> Result<Vec<ResultItem>> {
    let dir = &cmd.exchange_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut batch = String::new();
    for it in items {
        batch.push_str(&serde_json::to_string(it).expect("batch item serializes"));
        batch.push('\n');
    }
    fsutil::write_atomic(&dir.join("batch.jsonl"), batch.as_bytes())?;
    let result_path = dir.join("result.jsonl");
    if result_path.exists() {
        std::fs::remove_file(&result_path).map_err(|e| Error::io(&result_path, e))?;
    }
    let ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
    let out = run_adapter(cmd, &ids)?;
    let text = std::fs::read_to_string(&result_path).map_err(|e| Error::External {
        msg: format!(
            "adapter produced no readable {}: {e}",
            result_path.display()
        ),
        diagnostics: out.stderr.clone(),
    })?;
    let mut by_id = std::collections::HashMap::new();
    for (n, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let r: ResultItem = serde_json::from_str(line).map_err(|e| Error::External {
            msg: format!("result.jsonl line {}: {e}", n + 1),
            diagnostics: out.stderr.clone(),
        })?;
        if by_id.insert(r.id.clone(), r).is_some() {
            return Err(Error::External {
                msg: format!("result.jsonl repeats id {}", line),
                diagnostics: out.stderr.clone(),
            });
        }
    }
    let missing: Vec<&str> = ids
        .iter()
        .filter(|i| !by_id.contains_key(*i))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::External {
            msg: format!(
                "adapter returned no result for id(s): {}",
                missing.join(", ")
            ),
            diagnostics: out.stderr,
        });
    }
    Ok(ids
        .iter()
        .map(|i| by_id.remove(i).expect("checked above"))
        .collect())
}
