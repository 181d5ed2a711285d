//! Chat-completion clients: HTTP, on-disk stubs, recording and rate limiting.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chat::ChatMessage;
use crate::fsutil::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    /// Hex sha256 of the compact JSON body; names stub files.
    pub fn key(&self) -> String {
        let body = serde_json::to_vec(self).expect("chat requests always serialize");
        hex::encode(Sha256::digest(&body))
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("request failed: {0}")]
    Http(String),
    #[error("malformed response: {0}")]
    Response(String),
    #[error("no stub completion for request {key} in {dir}")]
    StubMissing { key: String, dir: PathBuf },
    #[error("auth token variable `{0}` is not set")]
    MissingToken(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        (**self).complete(request)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        (**self).complete(request)
    }
}

/// OpenAI-style `POST {base_url}{path}` with a bearer token read from an
/// environment variable.
#[derive(Debug)]
pub struct HttpChatClient {
    url: String,
    token_env: String,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(base_url: &str, path: &str, token_env: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        HttpChatClient {
            url: format!("{}{}", base_url.trim_end_matches('/'), path),
            token_env: token_env.to_owned(),
            agent: config.into(),
        }
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let token = std::env::var(&self.token_env)
            .map_err(|_| TransportError::MissingToken(self.token_env.clone()))?;
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {token}"))
            .send_json(request)
            .map_err(|e| TransportError::Http(e.to_string()))?;
        let body: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| TransportError::Response(e.to_string()))?;
        body.pointer("/choices/0/message/content")
            .and_then(serde_json::Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| TransportError::Response("missing choices[0].message.content".into()))
    }
}

/// Replays completions stored as `<request key>.txt`.
#[derive(Debug, Clone)]
pub struct StubClient {
    dir: PathBuf,
}

impl StubClient {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        StubClient { dir: dir.into() }
    }

    pub fn path_for(dir: &Path, request: &ChatRequest) -> PathBuf {
        dir.join(format!("{}.txt", request.key()))
    }
}

impl ChatClient for StubClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let path = Self::path_for(&self.dir, request);
        std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => TransportError::StubMissing {
                key: request.key(),
                dir: self.dir.clone(),
            },
            _ => TransportError::Io(e),
        })
    }
}

/// Forwards to `inner` and stores every completion in stub layout.
#[derive(Debug)]
pub struct RecordingClient<C> {
    inner: C,
    dir: PathBuf,
}

impl<C> RecordingClient<C> {
    pub fn new(inner: C, dir: impl Into<PathBuf>) -> Self {
        RecordingClient {
            inner,
            dir: dir.into(),
        }
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let text = self.inner.complete(request)?;
        write_atomic(&StubClient::path_for(&self.dir, request), text.as_bytes())?;
        Ok(text)
    }
}

#[derive(Debug, Default)]
struct Limits {
    in_flight: usize,
    started: VecDeque<Instant>,
}

/// Caps concurrent requests and requests started per rolling minute.
#[derive(Debug)]
pub struct RateLimitedClient<C> {
    inner: C,
    max_in_flight: usize,
    per_minute: Option<usize>,
    state: Mutex<Limits>,
    freed: Condvar,
}

const WINDOW: Duration = Duration::from_secs(60);

impl<C> RateLimitedClient<C> {
    pub fn new(inner: C, max_in_flight: usize, per_minute: Option<usize>) -> Self {
        RateLimitedClient {
            inner,
            max_in_flight: max_in_flight.max(1),
            per_minute: per_minute.filter(|n| *n > 0),
            state: Mutex::new(Limits::default()),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut st = self.state.lock().expect("limiter poisoned");
        loop {
            let now = Instant::now();
            while st.started.front().is_some_and(|t| now.duration_since(*t) >= WINDOW) {
                st.started.pop_front();
            }
            let wait = match self.per_minute {
                Some(cap) if st.started.len() >= cap => {
                    Some(WINDOW - now.duration_since(st.started[0]))
                }
                _ if st.in_flight >= self.max_in_flight => None,
                _ => break,
            };
            st = match wait {
                Some(d) => self.freed.wait_timeout(st, d).expect("limiter poisoned").0,
                None => self.freed.wait(st).expect("limiter poisoned"),
            };
        }
        st.in_flight += 1;
        st.started.push_back(Instant::now());
    }

    fn release(&self) {
        self.state.lock().expect("limiter poisoned").in_flight -= 1;
        self.freed.notify_all();
    }
}

impl<C: ChatClient> ChatClient for RateLimitedClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        self.acquire();
        let result = self.inner.complete(request);
        self.release();
        result
    }
}
