//! Client side of the code-runner sidecar protocol.
//!
//! The sidecar reads one JSON request per line on stdin and answers with one
//! JSON response per line on stdout:
//!
//! ```text
//! -> {"id": 1, "code": "result = topic.upper()", "scope": {"topic": "earth"}}
//! <- {"id": 1, "ok": true, "result": "EARTH", "stdout": ""}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::value::{Map, Value};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const SIDECAR_BINARY: &str = "pdl-code-runner";
pub const SIDECAR_ENV: &str = "PDL_CODE_RUNNER";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub id: i64,
    pub code: String,
    pub scope: Map,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecErrorInfo {
    #[serde(rename = "type")]
    pub kind: String,
    pub message: String,
    #[serde(default)]
    pub traceback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResponse {
    pub id: i64,
    pub ok: bool,
    #[serde(default)]
    pub result: Value,
    #[serde(default)]
    pub stdout: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ExecErrorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecOutput {
    pub result: Value,
    pub stdout: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodeError {
    #[error("{kind}: {message}")]
    Exec {
        kind: String,
        message: String,
        traceback: Option<String>,
    },
    #[error("code runner protocol error: {0}")]
    Protocol(String),
    #[error("code runner timed out after {0:?}")]
    Timeout(Duration),
    #[error("could not start code runner: {0}")]
    Spawn(String),
    #[error("no code runner available (set {SIDECAR_ENV} or install {SIDECAR_BINARY})")]
    Unavailable,
}

/// Executes embedded scripting code against a snapshot of the scope.
pub trait CodeRunner: Send {
    fn execute(&mut self, code: &str, scope: &Map) -> Result<ExecOutput, CodeError>;
}

/// Used when no sidecar is configured; every request fails.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoRunner;

impl CodeRunner for NoRunner {
    fn execute(&mut self, _code: &str, _scope: &Map) -> Result<ExecOutput, CodeError> {
        Err(CodeError::Unavailable)
    }
}

/// In-process runner backed by a closure; for tests and embedding.
pub struct FnRunner<F>(pub F);

impl<F> CodeRunner for FnRunner<F>
where
    F: FnMut(&str, &Map) -> Result<Value, CodeError> + Send,
{
    fn execute(&mut self, code: &str, scope: &Map) -> Result<ExecOutput, CodeError> {
        (self.0)(code, scope).map(|result| ExecOutput {
            result,
            stdout: String::new(),
        })
    }
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Session {
    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn close(self) {
        let Session {
            mut child, stdin, ..
        } = self;
        drop(stdin);
        let deadline = Instant::now() + Duration::from_secs(1);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = child.try_wait() {
                return;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        let _ = child.kill();
        let _ = child.wait();
    }
}

/// Runs requests through a long-lived sidecar process, one at a time.
///
/// A request that exceeds the timeout kills the sidecar; the next request
/// starts a fresh one.
pub struct SidecarRunner {
    program: PathBuf,
    args: Vec<String>,
    timeout: Duration,
    next_id: i64,
    session: Option<Session>,
}

impl SidecarRunner {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        SidecarRunner {
            program: program.into(),
            args: Vec::new(),
            timeout: DEFAULT_TIMEOUT,
            next_id: 1,
            session: None,
        }
    }

    pub fn with_args<S: Into<String>>(mut self, args: impl IntoIterator<Item = S>) -> Self {
        self.args = args.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// `PDL_CODE_RUNNER` (a command line split on whitespace) or
    /// `pdl-code-runner` on `PATH`.
    pub fn discover() -> Option<Self> {
        if let Ok(cmd) = std::env::var(SIDECAR_ENV) {
            let mut words = cmd.split_whitespace();
            let program = words.next()?;
            return Some(SidecarRunner::new(program).with_args(words));
        }
        let path = std::env::var_os("PATH")?;
        std::env::split_paths(&path)
            .map(|dir| dir.join(SIDECAR_BINARY))
            .find(|p| p.is_file())
            .map(SidecarRunner::new)
    }

    fn spawn(&self) -> Result<Session, CodeError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| CodeError::Spawn(format!("{}: {e}", self.program.display())))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Session {
            child,
            stdin,
            lines: rx,
        })
    }

    fn reset(&mut self) {
        if let Some(s) = self.session.take() {
            s.kill();
        }
    }

    /// Sends one request and waits for the matching response.
    pub fn request(&mut self, code: &str, scope: &Map) -> Result<ExecResponse, CodeError> {
        if self.session.is_none() {
            self.session = Some(self.spawn()?);
        }
        let id = self.next_id;
        self.next_id += 1;
        let req = ExecRequest {
            id,
            code: code.to_string(),
            scope: scope.clone(),
        };
        let mut line =
            serde_json::to_string(&req).map_err(|e| CodeError::Protocol(e.to_string()))?;
        line.push('\n');
        let session = self.session.as_mut().expect("session started");
        if let Err(e) = session
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| session.stdin.flush())
        {
            self.reset();
            return Err(CodeError::Protocol(format!("sidecar stdin closed: {e}")));
        }
        match session.lines.recv_timeout(self.timeout) {
            Ok(Ok(text)) => {
                let resp: ExecResponse = serde_json::from_str(&text)
                    .map_err(|e| CodeError::Protocol(format!("bad response line {text:?}: {e}")))?;
                if resp.id != id {
                    return Err(CodeError::Protocol(format!(
                        "response id {} does not match request id {id}",
                        resp.id
                    )));
                }
                Ok(resp)
            }
            Ok(Err(e)) => {
                self.reset();
                Err(CodeError::Protocol(e.to_string()))
            }
            Err(RecvTimeoutError::Timeout) => {
                self.reset();
                Err(CodeError::Timeout(self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.reset();
                Err(CodeError::Protocol("sidecar exited".into()))
            }
        }
    }
}

impl CodeRunner for SidecarRunner {
    fn execute(&mut self, code: &str, scope: &Map) -> Result<ExecOutput, CodeError> {
        let resp = self.request(code, scope)?;
        if resp.ok {
            Ok(ExecOutput {
                result: resp.result,
                stdout: resp.stdout,
            })
        } else {
            let info = resp.error.unwrap_or(ExecErrorInfo {
                kind: "unknown".into(),
                message: "sidecar reported failure without details".into(),
                traceback: None,
            });
            Err(CodeError::Exec {
                kind: info.kind,
                message: info.message,
                traceback: info.traceback,
            })
        }
    }
}

impl Drop for SidecarRunner {
    fn drop(&mut self) {
        if let Some(s) = self.session.take() {
            s.close();
        }
    }
}

/// Scope entries that can cross the process boundary (closures are dropped).
pub fn exportable_scope(scope: &Map) -> Map {
    scope
        .iter()
        .filter(|(_, v)| !matches!(v, Value::Function(_)))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}
