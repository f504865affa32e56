//! Newline-delimited JSON protocol exposing environments to other
//! processes over TCP or standard streams. One request line yields exactly
//! one response line. See `docs/protocol.md`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::env::{make_env, Action, Env, EnvConfig, EnvError, Environment};
use crate::presets::preset_config;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    BadJson,
    UnknownCmd,
    UnknownPreset,
    UnknownSession,
    NotReset,
    BadAction,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub code: ErrorCode,
    pub message: String,
}

impl WireError {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<EnvError> for WireError {
    fn from(e: EnvError) -> Self {
        let code = match &e {
            EnvError::NotReset => ErrorCode::NotReset,
            EnvError::DiscreteIndexOutOfRange { .. } | EnvError::BadAction(_) => ErrorCode::BadAction,
            EnvError::UnknownPreset(_) => ErrorCode::UnknownPreset,
            _ => ErrorCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Make {
        #[serde(default)]
        preset: Option<String>,
        #[serde(default)]
        config: Option<Box<EnvConfig>>,
    },
    Reset {
        session_id: u64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Step { session_id: u64, action: Value },
    Spaces { session_id: u64 },
    Close { session_id: u64 },
}

const COMMANDS: [&str; 5] = ["make", "reset", "step", "spaces", "close"];

/// A response line: `{"ok":true,"payload":...}` or `{"ok":false,"error":{...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl Response {
    pub fn success(payload: Value) -> Self {
        Self { ok: true, payload: Some(payload), error: None }
    }

    pub fn failure(error: WireError) -> Self {
        Self { ok: false, payload: None, error: Some(error) }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("responses serialize")
    }
}

/// Parses one request line, classifying failures by error code.
pub fn parse_request(line: &str) -> Result<Request, WireError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| WireError::new(ErrorCode::BadJson, format!("malformed JSON: {e}")))?;
    let cmd = value
        .as_object()
        .ok_or_else(|| WireError::new(ErrorCode::BadJson, "request must be a JSON object"))?
        .get("cmd")
        .ok_or_else(|| WireError::new(ErrorCode::UnknownCmd, "missing 'cmd'"))?;
    match cmd.as_str() {
        Some(c) if COMMANDS.contains(&c) => {}
        _ => return Err(WireError::new(ErrorCode::UnknownCmd, format!("unknown command {cmd}"))),
    }
    serde_json::from_value(value).map_err(|e| WireError::new(ErrorCode::BadJson, e.to_string()))
}

struct Session {
    env: Environment,
    last_used: Instant,
}

/// Sessions shared by every connection of one server.
pub struct Server {
    sessions: Mutex<HashMap<u64, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
    idle_timeout: Duration,
    output_root: Option<PathBuf>,
}

impl Server {
    pub fn new(idle_timeout: Duration, output_root: Option<PathBuf>) -> Self {
        Self { sessions: Mutex::new(HashMap::new()), next_id: AtomicU64::new(1), idle_timeout, output_root }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session table").len()
    }

    /// Closes and drops sessions idle for longer than the timeout.
    pub fn reap_idle(&self) -> usize {
        let now = Instant::now();
        let mut table = self.sessions.lock().expect("session table");
        let stale: Vec<u64> = table
            .iter()
            .filter(|(_, s)| {
                s.try_lock()
                    .map(|s| now.duration_since(s.last_used) > self.idle_timeout)
                    .unwrap_or(false)
            })
            .map(|(id, _)| *id)
            .collect();
        for id in &stale {
            if let Some(s) = table.remove(id) {
                if let Ok(mut s) = s.lock() {
                    let _ = s.env.close();
                }
            }
        }
        stale.len()
    }

    pub fn handle_line(&self, line: &str) -> String {
        let response = match parse_request(line) {
            Ok(request) => self.handle(request),
            Err(e) => Response::failure(e),
        };
        response.to_line()
    }

    pub fn handle(&self, request: Request) -> Response {
        match self.dispatch(request) {
            Ok(payload) => Response::success(payload),
            Err(e) => Response::failure(e),
        }
    }

    fn session(&self, id: u64) -> Result<Arc<Mutex<Session>>, WireError> {
        self.sessions
            .lock()
            .expect("session table")
            .get(&id)
            .cloned()
            .ok_or_else(|| WireError::new(ErrorCode::UnknownSession, format!("no session {id}")))
    }

    /// Runs `op` on a session; a panic inside drops only that session.
    fn with_session(
        &self,
        id: u64,
        op: impl FnOnce(&mut Environment) -> Result<Value, WireError>,
    ) -> Result<Value, WireError> {
        let session = self.session(id)?;
        let mut guard = match session.lock() {
            Ok(g) => g,
            Err(_) => {
                self.sessions.lock().expect("session table").remove(&id);
                return Err(WireError::new(ErrorCode::Internal, "session was lost"));
            }
        };
        guard.last_used = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| op(&mut guard.env)));
        drop(guard);
        result.unwrap_or_else(|_| {
            self.sessions.lock().expect("session table").remove(&id);
            Err(WireError::new(ErrorCode::Internal, "session failed and was closed"))
        })
    }

    fn dispatch(&self, request: Request) -> Result<Value, WireError> {
        match request {
            Request::Make { preset, config } => {
                let mut config = match (preset, config) {
                    (Some(name), None) => preset_config(&name)?,
                    (None, Some(c)) => *c,
                    _ => return Err(WireError::new(ErrorCode::BadJson, "make needs exactly one of 'preset' or 'config'")),
                };
                config.output_root = self.output_root.clone();
                let env = catch_unwind(AssertUnwindSafe(|| make_env(config)))
                    .map_err(|_| WireError::new(ErrorCode::Internal, "environment construction failed"))??;
                let payload = json!({
                    "session_id": 0,
                    "protocol_version": PROTOCOL_VERSION,
                    "observation_space": env.observation_space(),
                    "action_space": env.action_space(),
                });
                let id = self.next_id.fetch_add(1, Ordering::Relaxed);
                self.sessions
                    .lock()
                    .expect("session table")
                    .insert(id, Arc::new(Mutex::new(Session { env, last_used: Instant::now() })));
                let mut payload = payload;
                payload["session_id"] = json!(id);
                Ok(payload)
            }
            Request::Reset { session_id, seed } => self.with_session(session_id, |env| {
                let (observation, info) = env.reset(seed)?;
                Ok(json!({ "observation": observation, "info": info }))
            }),
            Request::Step { session_id, action } => {
                let action: Action = serde_json::from_value(action)
                    .map_err(|_| WireError::new(ErrorCode::BadAction, "action must be an index or a number array"))?;
                self.with_session(session_id, |env| {
                    let r = env.step(&action)?;
                    Ok(serde_json::to_value(r).expect("step results serialize"))
                })
            }
            Request::Spaces { session_id } => self.with_session(session_id, |env| {
                Ok(json!({ "observation_space": env.observation_space(), "action_space": env.action_space() }))
            }),
            Request::Close { session_id } => {
                let session = self
                    .sessions
                    .lock()
                    .expect("session table")
                    .remove(&session_id)
                    .ok_or_else(|| WireError::new(ErrorCode::UnknownSession, format!("no session {session_id}")))?;
                if let Ok(mut s) = session.lock() {
                    s.env.close()?;
                }
                Ok(json!({ "closed": true }))
            }
        }
    }

    /// Serves lines from `input` until end of stream.
    pub fn serve_stream(&self, input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            self.reap_idle();
            writeln!(output, "{}", self.handle_line(&line))?;
            output.flush()?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A TCP server running on background threads.
pub struct TcpServerHandle {
    pub addr: SocketAddr,
    pub server: Arc<Server>,
    stop: Arc<AtomicBool>,
    accept: Option<thread::JoinHandle<()>>,
}

impl TcpServerHandle {
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for TcpServerHandle {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_accepting();
        }
    }
}

/// Binds `addr` and serves each connection on its own thread.
pub fn serve_tcp(addr: &str, server: Arc<Server>) -> Result<TcpServerHandle, ServeError> {
    let listener = TcpListener::bind(addr).map_err(|source| ServeError::Bind { addr: addr.to_string(), source })?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));

    let reaper_server = Arc::downgrade(&server);
    let reaper_stop = stop.clone();
    let period = (server.idle_timeout / 4).clamp(Duration::from_millis(10), Duration::from_secs(5));
    thread::spawn(move || {
        while !reaper_stop.load(Ordering::SeqCst) {
            thread::sleep(period);
            match reaper_server.upgrade() {
                Some(s) => {
                    s.reap_idle();
                }
                None => break,
            }
        }
    });

    let accept_server = server.clone();
    let accept_stop = stop.clone();
    let accept = thread::spawn(move || {
        for stream in listener.incoming() {
            if accept_stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let server = accept_server.clone();
            thread::spawn(move || {
                let Ok(reader) = stream.try_clone() else { return };
                let _ = server.serve_stream(BufReader::new(reader), stream);
            });
        }
    });
    Ok(TcpServerHandle { addr: local, server, stop, accept: Some(accept) })
}

/// Minimal blocking client used by tests and tools.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        Ok(Self { reader: BufReader::new(stream.try_clone()?), writer: stream })
    }

    pub fn send_line(&mut self, line: &str) -> std::io::Result<Response> {
        writeln!(self.writer, "{line}")?;
        self.writer.flush()?;
        let mut reply = String::new();
        self.reader.read_line(&mut reply)?;
        serde_json::from_str(&reply).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn request(&mut self, request: &Value) -> std::io::Result<Response> {
        self.send_line(&request.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::StepResult;

    const PRESET: &str = "vtb-datacenter-mixed-continuous-stochastic-v1";

    fn server() -> Server {
        Server::new(DEFAULT_IDLE_TIMEOUT, None)
    }

    fn call(s: &Server, v: Value) -> Response {
        serde_json::from_str(&s.handle_line(&v.to_string())).unwrap()
    }

    fn make(s: &Server) -> u64 {
        let r = call(s, json!({"cmd": "make", "preset": PRESET}));
        assert!(r.ok, "{r:?}");
        let p = r.payload.unwrap();
        assert_eq!(p["protocol_version"], json!(1));
        p["session_id"].as_u64().unwrap()
    }

    fn code(r: &Response) -> ErrorCode {
        r.error.as_ref().unwrap().code
    }

    #[test]
    fn smoke_sequence() {
        let s = server();
        let id = make(&s);
        assert!(call(&s, json!({"cmd": "reset", "session_id": id, "seed": 1})).ok);
        for _ in 0..3 {
            let r = call(&s, json!({"cmd": "step", "session_id": id, "action": [21.0, 24.0]}));
            let step: StepResult = serde_json::from_value(r.payload.unwrap()).unwrap();
            assert!(!step.terminated && !step.truncated);
        }
        assert!(call(&s, json!({"cmd": "close", "session_id": id})).ok);
        assert_eq!(code(&call(&s, json!({"cmd": "spaces", "session_id": id}))), ErrorCode::UnknownSession);
    }

    #[test]
    fn error_codes() {
        let s = server();
        assert_eq!(code(&serde_json::from_str(&s.handle_line("{not json")).unwrap()), ErrorCode::BadJson);
        assert_eq!(code(&call(&s, json!({"cmd": "fly"}))), ErrorCode::UnknownCmd);
        assert_eq!(code(&call(&s, json!({"seed": 1}))), ErrorCode::UnknownCmd);
        assert_eq!(code(&call(&s, json!({"cmd": "make", "preset": "vtb-x-v1"}))), ErrorCode::UnknownPreset);
        let id = make(&s);
        assert_eq!(
            code(&call(&s, json!({"cmd": "step", "session_id": id, "action": [20.0, 23.0]}))),
            ErrorCode::NotReset
        );
        assert_eq!(code(&call(&s, json!({"cmd": "reset", "session_id": id, "extra": 1}))), ErrorCode::BadJson);
        call(&s, json!({"cmd": "reset", "session_id": id}));
        assert_eq!(code(&call(&s, json!({"cmd": "step", "session_id": id, "action": "hot"}))), ErrorCode::BadAction);
        assert_eq!(code(&call(&s, json!({"cmd": "step", "session_id": id, "action": 3}))), ErrorCode::BadAction);
        // The session survives errors.
        assert!(call(&s, json!({"cmd": "step", "session_id": id, "action": [20.0, 23.0]})).ok);
    }

    #[test]
    fn idle_sessions_are_reaped() {
        let s = Server::new(Duration::from_millis(0), None);
        make(&s);
        thread::sleep(Duration::from_millis(5));
        assert_eq!(s.reap_idle(), 1);
        assert_eq!(s.session_count(), 0);
    }

    #[test]
    fn stdio_mode_answers_every_line() {
        let s = server();
        let input = format!("{}\n\nnope\n", json!({"cmd": "make", "preset": PRESET}));
        let mut out = Vec::new();
        s.serve_stream(input.as_bytes(), &mut out).unwrap();
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("{\"ok\":true"));
        assert!(lines[1].contains("BAD_JSON"));
    }
}
