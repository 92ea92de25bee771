//! Subprocess embedders speaking newline-delimited JSON.
//!
//! The plugin writes one handshake line on startup, then answers each
//! request line with exactly one response line, in order. Standard error
//! is free-form and forwarded to the log. One request is in flight per
//! process; concurrency comes from pooling several processes.
//!
//! ```text
//! <- {"protocol":"dime-embedder/1","name":"clip-text","accepts":["text"],"output_dim":512,"space":"clip"}
//! -> {"id":"q1","text":"a dog"}
//! <- {"id":"q1","embedding":[0.12, ...]}
//! -> {"id":"q2","uri":"file:/tmp/x.jpg"}
//! <- {"id":"q2","error":"cannot decode image"}
//! ```

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::ops::{Deref, DerefMut};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ItemPayload, ModelDescriptor, PayloadKind};

pub const PROTOCOL: &str = "dime-embedder/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: String,
    pub name: String,
    pub accepts: BTreeSet<PayloadKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    pub output_dim: usize,
    pub space: String,
}

impl Handshake {
    /// Checks the declared capabilities against the registered model. The
    /// plugin's self-reported name is informational and not compared.
    pub fn check(&self, model: &ModelDescriptor) -> Result<()> {
        let mismatch = |what: String| Err(Error::HandshakeMismatch(format!("model {:?}: {what}", model.name)));
        if self.protocol != PROTOCOL {
            return mismatch(format!("protocol {:?}, expected {PROTOCOL:?}", self.protocol));
        }
        if self.output_dim != model.output_dim {
            return mismatch(format!("plugin output_dim {} vs registered {}", self.output_dim, model.output_dim));
        }
        if self.input_dim != model.input_dim {
            return mismatch(format!("plugin input_dim {:?} vs registered {:?}", self.input_dim, model.input_dim));
        }
        if self.accepts != model.accepts {
            return mismatch(format!("plugin accepts {:?} vs registered {:?}", self.accepts, model.accepts));
        }
        if self.space != model.space {
            return mismatch(format!("plugin space {:?} vs registered {:?}", self.space, model.space));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct Request<'a> {
    pub id: &'a str,
    #[serde(flatten)]
    pub payload: &'a ItemPayload,
}

#[derive(Debug, Deserialize)]
pub struct Response {
    pub id: String,
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PluginOptions {
    pub handshake_timeout: Duration,
    pub request_timeout: Duration,
}

impl Default for PluginOptions {
    fn default() -> Self {
        Self { handshake_timeout: Duration::from_secs(30), request_timeout: Duration::from_secs(120) }
    }
}

/// A running plugin process.
#[derive(Debug)]
pub struct PluginSession {
    model: ModelDescriptor,
    opts: PluginOptions,
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    handshake: Handshake,
    next_id: u64,
    alive: bool,
}

impl PluginSession {
    /// Spawns the model's command and validates its handshake line.
    pub fn launch(model: &ModelDescriptor, opts: &PluginOptions) -> Result<Self> {
        let command = model
            .command
            .as_deref()
            .ok_or_else(|| Error::LaunchError(format!("model {:?} has no command", model.name)))?;
        let argv = shlex::split(command)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::LaunchError(format!("cannot parse command {command:?}")))?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::LaunchError(format!("{command:?}: {e}")))?;

        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");

        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let name = model.name.clone();
        thread::spawn(move || {
            for line in BufReader::new(stderr).lines().map_while(|l| l.ok()) {
                log::debug!(target: "dime::plugin", "[{name}] {line}");
            }
        });

        let mut session = Self {
            model: model.clone(),
            opts: opts.clone(),
            child,
            stdin,
            lines,
            handshake: Handshake {
                protocol: String::new(),
                name: String::new(),
                accepts: BTreeSet::new(),
                input_dim: None,
                output_dim: 0,
                space: String::new(),
            },
            next_id: 1,
            alive: true,
        };
        let line = session.read_line(session.opts.handshake_timeout, "handshake")?;
        let handshake: Handshake = serde_json::from_str(&line)
            .map_err(|e| Error::HandshakeMismatch(format!("model {:?}: unparsable handshake: {e}", model.name)))?;
        handshake.check(model)?;
        session.handshake = handshake;
        Ok(session)
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    pub fn is_alive(&self) -> bool {
        self.alive
    }

    /// Replaces the process with a fresh one.
    pub fn relaunch(&mut self) -> Result<()> {
        *self = Self::launch(&self.model, &self.opts)?;
        Ok(())
    }

    fn read_line(&mut self, timeout: Duration, what: &str) -> Result<String> {
        match self.lines.recv_timeout(timeout) {
            Ok(line) => Ok(line),
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                Err(Error::PluginError(format!("model {:?}: timed out waiting for {what}", self.model.name)))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.kill();
                let status = self.child.wait().map(|s| s.to_string()).unwrap_or_default();
                Err(Error::PluginError(format!(
                    "model {:?}: plugin exited before {what} ({status})",
                    self.model.name
                )))
            }
        }
    }

    fn kill(&mut self) {
        self.alive = false;
        let _ = self.child.kill();
    }

    /// Sends one payload and waits for its embedding.
    pub fn embed(&mut self, payload: &ItemPayload) -> Result<Vec<f32>> {
        if !self.alive {
            return Err(Error::PluginError(format!("model {:?}: session is dead", self.model.name)));
        }
        let id = format!("q{}", self.next_id);
        self.next_id += 1;
        let mut line = serde_json::to_vec(&Request { id: &id, payload }).expect("request serializes");
        line.push(b'\n');
        if let Err(e) = self.stdin.write_all(&line).and_then(|_| self.stdin.flush()) {
            self.kill();
            return Err(Error::PluginError(format!("model {:?}: write failed: {e}", self.model.name)));
        }
        let reply = self.read_line(self.opts.request_timeout, "response")?;
        let resp: Response = match serde_json::from_str(&reply) {
            Ok(r) => r,
            Err(e) => {
                self.kill();
                return Err(Error::PluginError(format!("model {:?}: unparsable response: {e}", self.model.name)));
            }
        };
        if resp.id != id {
            self.kill();
            return Err(Error::PluginError(format!(
                "model {:?}: response id {:?} does not match request {id:?}",
                self.model.name, resp.id
            )));
        }
        match (resp.embedding, resp.error) {
            (_, Some(msg)) => Err(Error::PluginError(format!("model {:?}: {msg}", self.model.name))),
            (Some(values), None) => {
                if values.len() != self.model.output_dim {
                    return Err(Error::DimMismatch { expected: self.model.output_dim, actual: values.len() });
                }
                let out: Vec<f32> = values.iter().map(|&v| v as f32).collect();
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(Error::PluginError(format!("model {:?}: non-finite embedding", self.model.name)));
                }
                Ok(out)
            }
            (None, None) => {
                Err(Error::PluginError(format!("model {:?}: response has neither embedding nor error", self.model.name)))
            }
        }
    }
}

impl Drop for PluginSession {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Idle sessions for one model. Checkout hands out an idle session or
/// launches a new one; healthy sessions return to the pool on drop.
#[derive(Debug)]
pub struct PluginPool {
    model: ModelDescriptor,
    opts: PluginOptions,
    idle: Mutex<Vec<PluginSession>>,
    max_idle: usize,
}

impl PluginPool {
    pub fn new(model: ModelDescriptor, opts: PluginOptions, max_idle: usize) -> Self {
        Self { model, opts, idle: Mutex::new(Vec::new()), max_idle }
    }

    pub fn checkout(&self) -> Result<PooledSession<'_>> {
        let idle = self.idle.lock().expect("pool lock poisoned").pop();
        let session = match idle {
            Some(s) => s,
            None => PluginSession::launch(&self.model, &self.opts)?,
        };
        Ok(PooledSession { pool: self, session: Some(session) })
    }

    pub fn idle_count(&self) -> usize {
        self.idle.lock().expect("pool lock poisoned").len()
    }
}

pub struct PooledSession<'a> {
    pool: &'a PluginPool,
    session: Option<PluginSession>,
}

impl Deref for PooledSession<'_> {
    type Target = PluginSession;

    fn deref(&self) -> &PluginSession {
        self.session.as_ref().expect("session present until drop")
    }
}

impl DerefMut for PooledSession<'_> {
    fn deref_mut(&mut self) -> &mut PluginSession {
        self.session.as_mut().expect("session present until drop")
    }
}

impl Drop for PooledSession<'_> {
    fn drop(&mut self) {
        if let Some(session) = self.session.take() {
            if session.is_alive() {
                let mut idle = self.pool.idle.lock().expect("pool lock poisoned");
                if idle.len() < self.pool.max_idle {
                    idle.push(session);
                }
            }
        }
    }
}
