//! Client side of the solver-runner protocol.
//!
//! A runner is invoked as `<runner> --code PATH --timeout SECS --scratch DIR`
//! and prints exactly one line `R2C_RESULT: {json}` on stdout.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RESULT_PREFIX: &str = "R2C_RESULT: ";
pub const TAIL_CHARS: usize = 2000;
/// Extra wall-clock allowance on top of the candidate timeout before the runner is killed.
pub const GRACE: Duration = Duration::from_secs(5);
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunnerStatus {
    Optimal,
    Infeasible,
    Error,
    Timeout,
    NoObjective,
    Other,
}

impl RunnerStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunnerStatus::Optimal => "optimal",
            RunnerStatus::Infeasible => "infeasible",
            RunnerStatus::Error => "error",
            RunnerStatus::Timeout => "timeout",
            RunnerStatus::NoObjective => "no_objective",
            RunnerStatus::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerResult {
    pub status: RunnerStatus,
    #[serde(default)]
    pub objective: Option<f64>,
    #[serde(default)]
    pub iis_constraints: Vec<String>,
    #[serde(default)]
    pub stdout_tail: String,
    #[serde(default)]
    pub stderr_tail: String,
}

impl RunnerResult {
    pub fn error(message: impl Into<String>) -> Self {
        RunnerResult {
            status: RunnerStatus::Error,
            objective: None,
            iis_constraints: vec![],
            stdout_tail: String::new(),
            stderr_tail: tail(&message.into()),
        }
    }

    pub fn optimal(objective: f64) -> Self {
        RunnerResult {
            status: RunnerStatus::Optimal,
            objective: Some(objective),
            iis_constraints: vec![],
            stdout_tail: String::new(),
            stderr_tail: String::new(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("runner printed no {RESULT_PREFIX:?} line")]
    NoResultLine,
    #[error("runner printed {0} result lines")]
    MultipleResultLines(usize),
    #[error("result line is not a valid record: {0}")]
    BadRecord(String),
    #[error("status optimal without objective")]
    OptimalWithoutObjective,
}

/// Last `TAIL_CHARS` characters of `s`.
pub fn tail(s: &str) -> String {
    let n = s.chars().count();
    s.chars().skip(n.saturating_sub(TAIL_CHARS)).collect()
}

/// Finds and decodes the single result line in a runner's stdout.
pub fn parse_result_line(stdout: &str) -> Result<RunnerResult, ProtocolError> {
    let lines: Vec<&str> = stdout.lines().filter(|l| l.starts_with(RESULT_PREFIX)).collect();
    match lines.len() {
        0 => Err(ProtocolError::NoResultLine),
        1 => {
            let r: RunnerResult = serde_json::from_str(&lines[0][RESULT_PREFIX.len()..])
                .map_err(|e| ProtocolError::BadRecord(e.to_string()))?;
            if r.status == RunnerStatus::Optimal && r.objective.is_none() {
                return Err(ProtocolError::OptimalWithoutObjective);
            }
            Ok(r)
        }
        n => Err(ProtocolError::MultipleResultLines(n)),
    }
}

pub fn format_result_line(result: &RunnerResult) -> String {
    format!("{RESULT_PREFIX}{}", serde_json::to_string(result).expect("plain record"))
}

/// Runs generated code and reports the outcome. Failures of the execution
/// machinery itself are reported as `status: error`, never as a panic.
pub trait Executor: Send + Sync {
    fn execute(&self, code: &str, scratch: &Path, timeout: Duration) -> RunnerResult;
}

/// Executes code through an external runner process.
#[derive(Debug)]
pub struct ShimExecutor {
    program: PathBuf,
    args: Vec<String>,
    grace: Duration,
    invocations: AtomicUsize,
}

impl ShimExecutor {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        ShimExecutor { program: program.into(), args: vec![], grace: GRACE, invocations: AtomicUsize::new(0) }
    }

    /// Arguments placed before the protocol flags, e.g. a script path for an interpreter.
    pub fn with_args(mut self, args: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.args = args.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::SeqCst)
    }

    fn run(&self, code_path: &Path, scratch: &Path, timeout: Duration) -> Result<RunnerResult, String> {
        let mut cmd = Command::new(&self.program);
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
        let mut child = cmd
            .args(&self.args)
            .arg("--code")
            .arg(code_path)
            .arg("--timeout")
            .arg(timeout.as_secs().max(1).to_string())
            .arg("--scratch")
            .arg(scratch)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| format!("cannot start runner {}: {e}", self.program.display()))?;

        let mut out = child.stdout.take().expect("piped");
        let mut err = child.stderr.take().expect("piped");
        let out_rx = drain(move |s| out.read_to_string(s));
        let err_rx = drain(move |s| err.read_to_string(s));

        let deadline = Instant::now() + timeout + self.grace;
        let mut killed = false;
        loop {
            match child.try_wait() {
                Ok(Some(_)) => break,
                Ok(None) if Instant::now() >= deadline => {
                    kill_group(child.id());
                    let _ = child.kill();
                    let _ = child.wait();
                    killed = true;
                    break;
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(10)),
                Err(e) => return Err(format!("waiting on runner: {e}")),
            }
        }
        // orphaned grandchildren may keep the pipes open; do not wait on them forever
        let wait = if killed { Duration::from_millis(500) } else { self.grace };
        let stdout = out_rx.recv_timeout(wait).unwrap_or_default();
        let stderr = err_rx.recv_timeout(wait).unwrap_or_default();
        if killed {
            return Ok(RunnerResult {
                status: RunnerStatus::Timeout,
                objective: None,
                iis_constraints: vec![],
                stdout_tail: tail(&stdout),
                stderr_tail: tail(&stderr),
            });
        }
        parse_result_line(&stdout).map_err(|e| format!("{e}\n{}", tail(&stderr)))
    }
}

fn drain<F>(read: F) -> mpsc::Receiver<String>
where
    F: FnOnce(&mut String) -> std::io::Result<usize> + Send + 'static,
{
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut s = String::new();
        let _ = read(&mut s);
        let _ = tx.send(s);
    });
    rx
}

#[cfg(unix)]
fn kill_group(pid: u32) {
    // the runner was started as leader of its own process group
    if let Ok(pgid) = libc::pid_t::try_from(pid) {
        if pgid > 1 {
            unsafe {
                libc::killpg(pgid, libc::SIGKILL);
            }
        }
    }
}

#[cfg(not(unix))]
fn kill_group(_pid: u32) {}

impl Executor for ShimExecutor {
    fn execute(&self, code: &str, scratch: &Path, timeout: Duration) -> RunnerResult {
        self.invocations.fetch_add(1, Ordering::SeqCst);
        if let Err(e) = std::fs::create_dir_all(scratch) {
            return RunnerResult::error(format!("cannot create scratch dir: {e}"));
        }
        let code_path = scratch.join("candidate.py");
        if let Err(e) = std::fs::write(&code_path, code) {
            return RunnerResult::error(format!("cannot write candidate: {e}"));
        }
        self.run(&code_path, scratch, timeout).unwrap_or_else(RunnerResult::error)
    }
}
