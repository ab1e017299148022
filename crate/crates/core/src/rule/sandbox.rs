//! Out-of-process execution for `script` rules.
//!
//! The sandbox is an external command (for example `python3 shim.py`). The
//! host appends the path of a file holding the rule source to its arguments
//! and speaks this protocol:
//!
//! - stdin: a header line `N`, then `N` lines `value<TAB>index`
//! - stdout: exactly `N` lines, each `0` or `1`
//! - stderr: free-form diagnostics
//! - exit code: 0 ok, 2 syntax error, 3 runtime error
//!
//! Values are written in the shortest decimal form that parses back to the
//! same `f64`. Every line ends with `\n`.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::{ExecStatus, ExecutionOutcome};
use crate::data::LabelSequence;
use crate::error::{Error, Result};
use crate::preprocess::Chunk;

pub const EXIT_OK: i32 = 0;
pub const EXIT_SYNTAX_ERROR: i32 = 2;
pub const EXIT_RUNTIME_ERROR: i32 = 3;

const MAX_DIAGNOSTIC_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxConfig {
    /// Program and leading arguments. The rule source path is appended.
    pub command: Vec<String>,
}

impl SandboxConfig {
    pub fn new<I, S>(command: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SandboxConfig {
            command: command.into_iter().map(Into::into).collect(),
        }
    }
}

/// Frames a chunk as protocol input.
pub fn encode_request(chunk: &Chunk) -> String {
    let mut out = String::with_capacity(16 + chunk.len() * 16);
    out.push_str(&chunk.len().to_string());
    out.push('\n');
    for (value, index) in chunk.rows() {
        out.push_str(&value.to_string());
        out.push('\t');
        out.push_str(&index.to_string());
        out.push('\n');
    }
    out
}

/// Parses protocol input back into `(value, index)` rows.
pub fn decode_request(text: &str) -> std::result::Result<Vec<(f64, usize)>, String> {
    let mut lines = text.split_terminator('\n');
    let header = lines.next().ok_or("missing header line")?;
    let n: usize = header
        .parse()
        .map_err(|e| format!("bad header {header:?}: {e}"))?;
    let rows = lines
        .map(|line| {
            let (v, i) = line
                .split_once('\t')
                .ok_or_else(|| format!("row without tab: {line:?}"))?;
            let v = v.parse::<f64>().map_err(|e| format!("bad value {v:?}: {e}"))?;
            let i = i.parse::<usize>().map_err(|e| format!("bad index {i:?}: {e}"))?;
            Ok((v, i))
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    if rows.len() != n {
        return Err(format!("header says {n} rows, found {}", rows.len()));
    }
    Ok(rows)
}

/// Parses sandbox output. Anything but exactly `expected` lines of `0`/`1`
/// is a protocol violation.
pub fn decode_response(stdout: &str, expected: usize) -> std::result::Result<LabelSequence, String> {
    let mut labels = Vec::with_capacity(expected);
    for (i, line) in stdout.split_terminator('\n').enumerate() {
        match line.trim_end_matches('\r') {
            "0" => labels.push(false),
            "1" => labels.push(true),
            other => return Err(format!("output line {}: expected 0 or 1, got {other:?}", i + 1)),
        }
    }
    if labels.len() != expected {
        return Err(format!(
            "rule produced {} label(s) for {expected} input point(s)",
            labels.len()
        ));
    }
    Ok(LabelSequence::new(labels))
}

/// Runs `source` on `chunk` in a fresh sandbox process.
///
/// Returns `Err` only when the sandbox itself cannot be started; every rule
/// failure is reported through the outcome status.
pub fn run(config: &SandboxConfig, source: &str, chunk: &Chunk, timeout: Duration) -> Result<ExecutionOutcome> {
    let (program, args) = config
        .command
        .split_first()
        .ok_or_else(|| Error::Sandbox("empty sandbox command".into()))?;

    let mut src_file = tempfile::Builder::new()
        .prefix("rule-")
        .suffix(".src")
        .tempfile()
        .map_err(|e| Error::Sandbox(format!("cannot stage rule source: {e}")))?;
    src_file
        .write_all(source.as_bytes())
        .and_then(|()| src_file.flush())
        .map_err(|e| Error::Sandbox(format!("cannot stage rule source: {e}")))?;
    let src_path: PathBuf = src_file.path().to_path_buf();

    let started = Instant::now();
    let mut command = Command::new(program);
    command
        .args(args)
        .arg(&src_path)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .env_clear()
        .env("PATH", std::env::var_os("PATH").unwrap_or_default());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        command.process_group(0);
    }
    let mut child = command
        .spawn()
        .map_err(|e| Error::Sandbox(format!("cannot start `{program}`: {e}")))?;

    let input = encode_request(chunk);
    let mut stdin = child.stdin.take().expect("piped stdin");
    let writer = thread::spawn(move || {
        // A rule may exit without reading its input; the broken pipe is not an error.
        let _ = stdin.write_all(input.as_bytes());
    });
    let stdout_limit = 4 * chunk.len() + 1024;
    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");
    let out_reader = thread::spawn(move || read_capped(&mut stdout, stdout_limit));
    let err_reader = thread::spawn(move || read_capped(&mut stderr, MAX_DIAGNOSTIC_BYTES));

    let status = child
        .wait_timeout(timeout)
        .map_err(|e| Error::Sandbox(format!("waiting for sandbox: {e}")))?;
    let status = match status {
        Some(status) => status,
        None => {
            kill_tree(&mut child);
            // Reader threads end once every holder of the pipes is gone.
            drop((writer, out_reader, err_reader));
            return Ok(ExecutionOutcome::failed(
                ExecStatus::Timeout,
                format!("rule exceeded the {:.3}s timeout", timeout.as_secs_f64()),
                started.elapsed(),
            ));
        }
    };
    // Stray descendants would keep the pipes open.
    kill_group(&child);
    let _ = writer.join();
    let (out, out_overflow) = out_reader.join().unwrap_or_default();
    let (err, _) = err_reader.join().unwrap_or_default();
    let wall_time = started.elapsed();
    let diagnostic = String::from_utf8_lossy(&err).into_owned();
    drop(src_file);

    let outcome = match status.code() {
        Some(EXIT_OK) => {
            if out_overflow {
                ExecutionOutcome::failed(
                    ExecStatus::ProtocolError,
                    format!("rule output exceeded {stdout_limit} bytes"),
                    wall_time,
                )
            } else {
                match std::str::from_utf8(&out)
                    .map_err(|e| format!("output is not UTF-8: {e}"))
                    .and_then(|text| decode_response(text, chunk.len()))
                {
                    Ok(labels) => ExecutionOutcome::ok(labels, wall_time),
                    Err(msg) => ExecutionOutcome::failed(
                        ExecStatus::ProtocolError,
                        join_diagnostic(&msg, &diagnostic),
                        wall_time,
                    ),
                }
            }
        }
        Some(EXIT_SYNTAX_ERROR) => ExecutionOutcome::failed(
            ExecStatus::SyntaxError,
            non_empty(diagnostic, "sandbox reported a syntax error"),
            wall_time,
        ),
        Some(code) => ExecutionOutcome::failed(
            ExecStatus::RuntimeError,
            non_empty(diagnostic, &format!("sandbox exited with code {code}")),
            wall_time,
        ),
        None => ExecutionOutcome::failed(
            ExecStatus::RuntimeError,
            non_empty(diagnostic, "sandbox terminated by a signal"),
            wall_time,
        ),
    };
    Ok(outcome)
}

fn kill_group(child: &std::process::Child) {
    #[cfg(unix)]
    if let Ok(pid) = i32::try_from(child.id()) {
        // SAFETY: signals only the process group created for this child.
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
    }
}

fn kill_tree(child: &mut std::process::Child) {
    kill_group(child);
    let _ = child.kill();
    let _ = child.wait();
}

fn read_capped(reader: &mut impl Read, limit: usize) -> (Vec<u8>, bool) {
    let mut kept = Vec::new();
    let mut overflow = false;
    let mut buf = [0u8; 8192];
    loop {
        match reader.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                let room = limit.saturating_sub(kept.len());
                if n > room {
                    overflow = true;
                }
                kept.extend_from_slice(&buf[..n.min(room)]);
            }
        }
    }
    (kept, overflow)
}

fn non_empty(text: String, fallback: &str) -> String {
    if text.trim().is_empty() {
        fallback.to_string()
    } else {
        text
    }
}

fn join_diagnostic(message: &str, stderr: &str) -> String {
    if stderr.trim().is_empty() {
        message.to_string()
    } else {
        format!("{message}\n{stderr}")
    }
}
