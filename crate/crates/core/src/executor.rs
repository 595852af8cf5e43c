//! Program execution: a subprocess sandbox speaking the runner wire protocol,
//! and a scripted executor for offline runs.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composer::Program;

/// Printed by the runner once it is ready to receive source.
pub const READY_LINE: &str = "##PROCALC_READY##";
/// Prefix of the runner's single reply line.
pub const RESULT_SENTINEL: &str = "##PROCALC_RESULT##";
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
pub const MIN_TIMEOUT_MS: u64 = 100;
pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);
pub const ARTIFACT_DIR_ENV: &str = "PROCALC_ARTIFACT_DIR";
pub const NETWORK_ENV: &str = "PROCALC_NETWORK_ALLOWED";

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("execution script exhausted after {calls} call(s)")]
    ScriptExhausted { calls: usize },
    #[error("wall timeout {0} ms is below the {MIN_TIMEOUT_MS} ms minimum")]
    InvalidLimits(u64),
    #[error("script line {line}: {reason}")]
    ScriptFormat { line: usize, reason: String },
    #[error("no recorded execution for program {0}")]
    Unrecorded(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Success,
    RuntimeError,
    Timeout,
    SetupError,
}

impl ExecStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecStatus::Success => "success",
            ExecStatus::RuntimeError => "runtime_error",
            ExecStatus::Timeout => "timeout",
            ExecStatus::SetupError => "setup_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub file: String,
    pub line: u32,
    pub symbol: String,
    #[serde(default)]
    pub code_context: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExceptionInfo {
    pub type_name: String,
    pub message: String,
    /// Deepest frame first.
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    pub stdout: String,
    pub stderr: String,
    pub exception: Option<ExceptionInfo>,
    pub artifacts: Vec<String>,
    pub duration_ms: u64,
}

impl ExecutionResult {
    pub fn success(stdout: impl Into<String>) -> Self {
        Self {
            status: ExecStatus::Success,
            stdout: stdout.into(),
            stderr: String::new(),
            exception: None,
            artifacts: Vec::new(),
            duration_ms: 0,
        }
    }

    pub fn runtime_error(type_name: impl Into<String>, message: impl Into<String>, frames: Vec<Frame>) -> Self {
        Self {
            status: ExecStatus::RuntimeError,
            stdout: String::new(),
            stderr: String::new(),
            exception: Some(ExceptionInfo { type_name: type_name.into(), message: message.into(), frames }),
            artifacts: Vec::new(),
            duration_ms: 0,
        }
    }

    fn setup_error(reason: impl Into<String>, duration_ms: u64) -> Self {
        Self {
            status: ExecStatus::SetupError,
            stdout: String::new(),
            stderr: reason.into(),
            exception: None,
            artifacts: Vec::new(),
            duration_ms,
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == ExecStatus::Success
    }

    /// Status and exception must agree.
    pub fn is_well_formed(&self) -> bool {
        (self.status == ExecStatus::RuntimeError) == self.exception.is_some()
            && self
                .exception
                .as_ref()
                .is_none_or(|e| e.frames.iter().all(|f| f.line >= 1))
    }

    /// One-line description used in traces and history digests.
    pub fn summary(&self) -> String {
        match &self.exception {
            Some(e) => format!("{}: {}", e.type_name, e.message),
            None if self.status == ExecStatus::Success => {
                format!("success in {} ms, {} artifact(s)", self.duration_ms, self.artifacts.len())
            }
            None => format!("{} after {} ms", self.status.as_str(), self.duration_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SandboxLimits {
    pub wall_timeout_ms: u64,
    pub artifact_dir: PathBuf,
    pub network_allowed: bool,
}

impl SandboxLimits {
    pub fn new(artifact_dir: impl Into<PathBuf>) -> Self {
        Self { wall_timeout_ms: DEFAULT_TIMEOUT_MS, artifact_dir: artifact_dir.into(), network_allowed: false }
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if self.wall_timeout_ms < MIN_TIMEOUT_MS {
            return Err(ExecError::InvalidLimits(self.wall_timeout_ms));
        }
        Ok(())
    }
}

pub trait Executor: Send + Sync {
    fn execute(&self, program: &Program, limits: &SandboxLimits) -> Result<ExecutionResult, ExecError>;
}

/// Runs each program in a fresh runner process.
#[derive(Debug, Clone)]
pub struct SandboxExecutor {
    program: PathBuf,
    args: Vec<String>,
}

impl SandboxExecutor {
    /// `program args...` must start a runner that prints [`READY_LINE`],
    /// reads source until EOF and replies with one [`RESULT_SENTINEL`] line.
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self { program: program.into(), args }
    }
}

enum Event {
    Line(String),
    Eof,
}

fn kill(child: &mut Child) {
    let _ = child.kill();
    let _ = child.wait();
}

fn ms_since(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

impl Executor for SandboxExecutor {
    fn execute(&self, program: &Program, limits: &SandboxLimits) -> Result<ExecutionResult, ExecError> {
        limits.validate()?;
        std::fs::create_dir_all(&limits.artifact_dir)?;
        let artifact_dir = limits.artifact_dir.canonicalize()?;
        let started = Instant::now();
        let mut child = match Command::new(&self.program)
            .args(&self.args)
            .current_dir(&artifact_dir)
            .env(ARTIFACT_DIR_ENV, &artifact_dir)
            .env(NETWORK_ENV, if limits.network_allowed { "1" } else { "0" })
            .env("MPLBACKEND", "Agg")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
        {
            Ok(c) => c,
            Err(e) => {
                return Ok(ExecutionResult::setup_error(
                    format!("cannot start runner {}: {e}", self.program.display()),
                    ms_since(started),
                ))
            }
        };

        let (tx, rx) = mpsc::channel();
        let stdout = child.stdout.take().expect("stdout piped");
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(Event::Line(l)).is_err() {
                            return;
                        }
                    }
                    Err(_) => break,
                }
            }
            let _ = tx.send(Event::Eof);
        });
        let mut stderr_pipe = child.stderr.take().expect("stderr piped");
        let stderr_thread = thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr_pipe.read_to_string(&mut s);
            s
        });

        // handshake
        let handshake_deadline = started + HANDSHAKE_TIMEOUT;
        loop {
            let wait = handshake_deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(wait) {
                Ok(Event::Line(l)) if l.trim_end() == READY_LINE => break,
                Ok(Event::Line(_)) => continue,
                Ok(Event::Eof) | Err(mpsc::RecvTimeoutError::Disconnected) => {
                    kill(&mut child);
                    let err = stderr_thread.join().unwrap_or_default();
                    return Ok(ExecutionResult::setup_error(
                        format!("runner exited before the ready line: {}", err.trim()),
                        ms_since(started),
                    ));
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    kill(&mut child);
                    return Ok(ExecutionResult::setup_error(
                        format!("no ready line within {} s", HANDSHAKE_TIMEOUT.as_secs()),
                        ms_since(started),
                    ));
                }
            }
        }

        let run_started = Instant::now();
        let deadline = run_started + Duration::from_millis(limits.wall_timeout_ms);
        {
            let mut stdin = child.stdin.take().expect("stdin piped");
            // a runner that dies early shows up below as a missing reply
            let _ = stdin.write_all(program.source.as_bytes());
        }

        let mut reply: Option<String> = None;
        loop {
            let wait = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(wait) {
                Ok(Event::Line(l)) => {
                    if let Some(rest) = l.strip_prefix(RESULT_SENTINEL) {
                        reply = Some(rest.to_string());
                    }
                }
                Ok(Event::Eof) | Err(mpsc::RecvTimeoutError::Disconnected) => break,
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    kill(&mut child);
                    let duration_ms = ms_since(run_started);
                    tracing::debug!(duration_ms, "runner killed on wall timeout");
                    return Ok(ExecutionResult {
                        status: ExecStatus::Timeout,
                        stdout: String::new(),
                        stderr: stderr_thread.join().unwrap_or_default(),
                        exception: None,
                        artifacts: Vec::new(),
                        duration_ms,
                    });
                }
            }
        }
        // stdout closed; the process should be exiting
        let _ = child.wait();
        let stderr = stderr_thread.join().unwrap_or_default();
        let Some(reply) = reply else {
            return Ok(ExecutionResult::setup_error(
                format!("runner produced no reply line: {}", stderr.trim()),
                ms_since(run_started),
            ));
        };
        let mut result: ExecutionResult = match serde_json::from_str(reply.trim()) {
            Ok(r) => r,
            Err(e) => {
                return Ok(ExecutionResult::setup_error(format!("malformed reply line: {e}"), ms_since(run_started)))
            }
        };
        if !result.is_well_formed() {
            return Ok(ExecutionResult::setup_error(
                "reply status and exception disagree",
                ms_since(run_started),
            ));
        }
        result.artifacts = collect_existing(&result.artifacts, &artifact_dir);
        Ok(result)
    }
}

/// Keeps only reported artifacts that exist inside `dir`, as paths relative
/// to it.
fn collect_existing(reported: &[String], dir: &Path) -> Vec<String> {
    let Ok(root) = dir.canonicalize() else { return Vec::new() };
    let mut out: Vec<String> = reported
        .iter()
        .filter_map(|a| {
            let p = Path::new(a);
            let full = if p.is_absolute() { p.to_path_buf() } else { root.join(p) };
            let full = full.canonicalize().ok()?;
            if !full.is_file() {
                return None;
            }
            let rel = full.strip_prefix(&root).ok()?;
            Some(rel.to_string_lossy().into_owned())
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Returns scripted results in order, regardless of the program.
#[derive(Debug)]
pub struct FixtureExecutor {
    script: Mutex<VecDeque<ExecutionResult>>,
    calls: AtomicUsize,
}

impl FixtureExecutor {
    pub fn new(script: Vec<ExecutionResult>) -> Self {
        Self { script: Mutex::new(script.into()), calls: AtomicUsize::new(0) }
    }

    /// One wire-format result per non-blank line.
    pub fn from_jsonl(text: &str) -> Result<Self, ExecError> {
        let mut script = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ExecutionResult = serde_json::from_str(line)
                .map_err(|e| ExecError::ScriptFormat { line: i + 1, reason: e.to_string() })?;
            if !r.is_well_formed() {
                return Err(ExecError::ScriptFormat {
                    line: i + 1,
                    reason: "status and exception disagree".into(),
                });
            }
            script.push(r);
        }
        Ok(Self::new(script))
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().expect("script lock").len()
    }
}

impl Executor for FixtureExecutor {
    fn execute(&self, _program: &Program, _limits: &SandboxLimits) -> Result<ExecutionResult, ExecError> {
        let calls = self.calls.fetch_add(1, Ordering::SeqCst);
        self.script
            .lock()
            .expect("script lock")
            .pop_front()
            .ok_or(ExecError::ScriptExhausted { calls })
    }
}

/// One line of a recorded-execution file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedRun {
    pub program_id: String,
    pub result: ExecutionResult,
}

/// Answers each program with the result recorded for its id, so outcomes
/// depend on what the program is rather than on call order.
#[derive(Debug, Default)]
pub struct RecordedExecutor {
    runs: std::collections::HashMap<String, ExecutionResult>,
    calls: AtomicUsize,
}

impl RecordedExecutor {
    pub fn new(runs: impl IntoIterator<Item = RecordedRun>) -> Self {
        Self { runs: runs.into_iter().map(|r| (r.program_id, r.result)).collect(), calls: AtomicUsize::new(0) }
    }

    /// One [`RecordedRun`] per non-blank line; later lines win.
    pub fn from_jsonl(text: &str) -> Result<Self, ExecError> {
        let mut runs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: RecordedRun = serde_json::from_str(line)
                .map_err(|e| ExecError::ScriptFormat { line: i + 1, reason: e.to_string() })?;
            if !r.result.is_well_formed() {
                return Err(ExecError::ScriptFormat { line: i + 1, reason: "status and exception disagree".into() });
            }
            runs.push(r);
        }
        Ok(Self::new(runs))
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Executor for RecordedExecutor {
    fn execute(&self, program: &Program, _limits: &SandboxLimits) -> Result<ExecutionResult, ExecError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.runs.get(&program.program_id).cloned().ok_or_else(|| ExecError::Unrecorded(program.program_id.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prog() -> Program {
        Program::new("print(1)", Vec::new(), 0, crate::composer::Origin::Generated)
    }

    #[test]
    fn fixture_returns_script_in_order_unmodified() {
        let fail = ExecutionResult::runtime_error("ZeroDivisionError", "division by zero", vec![]);
        let ok = ExecutionResult::success("2\n");
        let ex = FixtureExecutor::new(vec![fail.clone(), ok.clone()]);
        let limits = SandboxLimits::new("/tmp");
        assert_eq!(ex.execute(&prog(), &limits).unwrap(), fail);
        assert_eq!(ex.execute(&prog(), &limits).unwrap(), ok);
        assert!(matches!(ex.execute(&prog(), &limits), Err(ExecError::ScriptExhausted { calls: 2 })));
        assert_eq!(ex.call_count(), 3);
    }

    #[test]
    fn empty_script_exhausted_at_once() {
        let ex = FixtureExecutor::new(vec![]);
        assert!(matches!(
            ex.execute(&prog(), &SandboxLimits::new("/tmp")),
            Err(ExecError::ScriptExhausted { calls: 0 })
        ));
    }

    #[test]
    fn wire_format_round_trip() {
        let line = r#"{"status": "runtime_error", "stdout": "", "stderr": "", "exception": {"type_name": "ZeroDivisionError", "message": "division by zero", "frames": [{"file": "<program>", "line": 2, "symbol": "<module>", "code_context": "x = 1 / 0"}]}, "artifacts": [], "duration_ms": 3}"#;
        let r: ExecutionResult = serde_json::from_str(line).unwrap();
        assert_eq!(r.status, ExecStatus::RuntimeError);
        assert_eq!(r.exception.as_ref().unwrap().frames[0].line, 2);
        assert!(r.is_well_formed());
        let back: ExecutionResult = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        let null_exc = r#"{"status": "success", "stdout": "2\n", "stderr": "", "exception": null, "artifacts": [], "duration_ms": 1}"#;
        assert!(serde_json::from_str::<ExecutionResult>(null_exc).unwrap().is_well_formed());
    }

    #[test]
    fn inconsistent_status_rejected_in_scripts() {
        let bad = r#"{"status": "success", "stdout": "", "stderr": "", "exception": {"type_name": "E", "message": "", "frames": []}, "artifacts": [], "duration_ms": 0}"#;
        assert!(matches!(FixtureExecutor::from_jsonl(bad), Err(ExecError::ScriptFormat { line: 1, .. })));
    }

    #[test]
    fn recorded_runs_keyed_by_program() {
        let a = Program::new("print(1)\n", Vec::new(), 0, crate::composer::Origin::Generated);
        let b = Program::new("print(2)\n", Vec::new(), 0, crate::composer::Origin::Generated);
        let line = serde_json::to_string(&RecordedRun { program_id: b.program_id.clone(), result: ExecutionResult::success("2\n") }).unwrap();
        let ex = RecordedExecutor::from_jsonl(&line).unwrap();
        let limits = SandboxLimits::new("/tmp");
        assert_eq!(ex.execute(&b, &limits).unwrap().stdout, "2\n");
        assert_eq!(ex.execute(&b, &limits).unwrap().stdout, "2\n");
        assert!(matches!(ex.execute(&a, &limits), Err(ExecError::Unrecorded(id)) if id == a.program_id));
        assert_eq!(ex.call_count(), 3);
    }

    #[test]
    fn limits_minimum() {
        let mut l = SandboxLimits::new("/tmp");
        assert_eq!(l.wall_timeout_ms, 30_000);
        assert!(!l.network_allowed);
        l.wall_timeout_ms = 99;
        assert!(l.validate().is_err());
    }

    #[test]
    fn missing_runner_is_setup_error() {
        let dir = tempfile::tempdir().unwrap();
        let ex = SandboxExecutor::new("/nonexistent/runner-binary", vec![]);
        let r = ex.execute(&prog(), &SandboxLimits::new(dir.path())).unwrap();
        assert_eq!(r.status, ExecStatus::SetupError);
        assert!(r.exception.is_none());
    }

    #[test]
    fn artifacts_outside_dir_dropped() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("plot.png"), b"x").unwrap();
        let outside = tempfile::NamedTempFile::new().unwrap();
        let got = collect_existing(
            &[
                "plot.png".into(),
                "missing.png".into(),
                "../escape.png".into(),
                outside.path().to_string_lossy().into_owned(),
            ],
            dir.path(),
        );
        assert_eq!(got, ["plot.png"]);
    }
}
