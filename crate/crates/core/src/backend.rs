//! Wire protocol and client for external NER model backends.
//!
//! Backends receive word tokens and answer with one IOB2 tag per token.
//! Two transports are supported: HTTP (`POST /v1/predict`, `GET /v1/health`)
//! and a child process speaking NDJSON over stdin/stdout. [`MockTransport`]
//! implements the reference mock rule in-process for tests.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotation::{Document, Sentence, Tag, TagSequence};
use crate::labels::{label_list_hash, LabelSet};

pub const PROTO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireSentence {
    pub text: String,
    pub tokens: Vec<WireToken>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub proto_version: u32,
    pub request_id: String,
    pub doc_id: String,
    pub language_code: String,
    pub sentences: Vec<WireSentence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireTags {
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub proto_version: u32,
    pub request_id: String,
    pub model_id: String,
    pub latency_ms: u64,
    pub sentences: Vec<WireTags>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub proto_version: u32,
    pub model_id: String,
    pub label_set_hash: String,
    pub labels: Vec<String>,
    pub max_batch: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub proto_version: u32,
    pub error: ErrorBody,
}

impl ErrorResponse {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        ErrorResponse {
            proto_version: PROTO_VERSION,
            error: ErrorBody {
                code: code.to_string(),
                message: message.into(),
            },
        }
    }
}

impl PredictRequest {
    /// Builds a request whose tokens carry document offsets. The request id
    /// is derived from the content, so resending the same request repeats it.
    pub fn new(doc: &Document, sentences: &[Sentence]) -> Self {
        let sentences: Vec<WireSentence> = sentences
            .iter()
            .map(|s| WireSentence {
                text: doc.slice(s.start, s.end).unwrap_or_default().to_string(),
                tokens: s
                    .tokens
                    .iter()
                    .map(|t| WireToken {
                        text: t.text.clone(),
                        start: t.start,
                        end: t.end,
                    })
                    .collect(),
            })
            .collect();
        let mut h = Sha256::new();
        h.update(doc.doc_id().as_bytes());
        h.update([0]);
        h.update(doc.language_code().as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(&sentences).expect("serializable"));
        let digest = hex::encode(h.finalize());
        PredictRequest {
            proto_version: PROTO_VERSION,
            request_id: digest[..16].to_string(),
            doc_id: doc.doc_id().to_string(),
            language_code: doc.language_code().to_string(),
            sentences,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Predict,
    Health,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Predict => "predict",
            Method::Health => "health",
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    /// Connection-level failure; worth retrying.
    #[error("{0}")]
    Unavailable(String),
    /// The backend answered with a structured error; never retried.
    #[error("backend error {}: {}", .0.code, .0.message)]
    Remote(ErrorBody),
}

/// Moves one JSON message to a backend and returns its JSON answer.
pub trait Transport: Send + Sync {
    fn call(&self, method: Method, body: &str) -> Result<String, TransportError>;
    fn describe(&self) -> String;
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempt(s): {detail}")]
    Unavailable { attempts: u32, detail: String },
    #[error("protocol error{}: {detail}", .sentence.map(|s| format!(" in sentence {s}")).unwrap_or_default())]
    Protocol { sentence: Option<usize>, detail: String },
    #[error("backend rejected request: {code}: {message}")]
    Rejected { code: String, message: String },
    #[error("label set mismatch (expected hash {expected}, backend {actual}); extra: {extra:?}; missing: {missing:?}")]
    LabelSetMismatch {
        expected: String,
        actual: String,
        extra: Vec<String>,
        missing: Vec<String>,
    },
}

fn protocol(sentence: Option<usize>, detail: impl Into<String>) -> BackendError {
    BackendError::Protocol {
        sentence,
        detail: detail.into(),
    }
}

/// Parses a backend answer that may be either `T` or an error object.
fn decode<T: for<'de> Deserialize<'de>>(raw: &str) -> Result<T, BackendError> {
    let value: serde_json::Value =
        serde_json::from_str(raw).map_err(|e| protocol(None, format!("invalid JSON: {e}")))?;
    if value.get("error").is_some() {
        let e: ErrorResponse =
            serde_json::from_value(value).map_err(|e| protocol(None, format!("malformed error: {e}")))?;
        return Err(BackendError::Rejected {
            code: e.error.code,
            message: e.error.message,
        });
    }
    serde_json::from_value(value).map_err(|e| protocol(None, format!("unexpected shape: {e}")))
}

/// Checks a response against its request and the agreed label set and
/// returns parsed tags per sentence.
pub fn validate_response(
    req: &PredictRequest,
    resp: &PredictResponse,
    labels: &LabelSet,
) -> Result<Vec<TagSequence>, BackendError> {
    if resp.proto_version != PROTO_VERSION {
        return Err(protocol(None, format!("unsupported proto_version {}", resp.proto_version)));
    }
    if resp.request_id != req.request_id {
        return Err(protocol(
            None,
            format!("request_id {:?} does not echo {:?}", resp.request_id, req.request_id),
        ));
    }
    if resp.sentences.len() != req.sentences.len() {
        return Err(protocol(
            None,
            format!("{} sentences answered for {} sent", resp.sentences.len(), req.sentences.len()),
        ));
    }
    let mut out = Vec::with_capacity(resp.sentences.len());
    for (k, (rs, qs)) in resp.sentences.iter().zip(&req.sentences).enumerate() {
        if rs.tags.len() != qs.tokens.len() {
            return Err(protocol(
                Some(k),
                format!("{} tags for {} tokens", rs.tags.len(), qs.tokens.len()),
            ));
        }
        let mut tags = Vec::with_capacity(rs.tags.len());
        for t in &rs.tags {
            let tag: Tag = t.parse().map_err(|_| protocol(Some(k), format!("malformed tag {t:?}")))?;
            if let Some(l) = tag.label() {
                if !labels.is_model_label(l) {
                    return Err(protocol(Some(k), format!("unknown label in tag {t:?}")));
                }
            }
            tags.push(tag);
        }
        out.push(tags);
    }
    Ok(out)
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut free = self.free.lock().expect("semaphore poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore poisoned");
        }
        *free -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Anything that can tag sentences of a document.
pub trait ModelBackend: Send + Sync {
    fn tag(&self, doc: &Document, sentences: &[Sentence]) -> Result<Vec<TagSequence>, BackendError>;
}

pub struct BackendClient {
    transport: Arc<dyn Transport>,
    labels: LabelSet,
    retries: u32,
    backoff: Duration,
    in_flight: Semaphore,
}

impl BackendClient {
    pub fn new(transport: Arc<dyn Transport>, labels: LabelSet) -> Self {
        BackendClient {
            transport,
            labels,
            retries: 3,
            backoff: Duration::from_millis(100),
            in_flight: Semaphore::new(8),
        }
    }

    pub fn with_retries(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.in_flight = Semaphore::new(n);
        self
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    /// Retries transport failures with exponential backoff; structured
    /// errors and malformed answers fail immediately.
    fn call(&self, method: Method, body: &str) -> Result<String, BackendError> {
        let _slot = self.in_flight.acquire();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.transport.call(method, body) {
                Ok(raw) => return Ok(raw),
                Err(TransportError::Remote(e)) => {
                    return Err(BackendError::Rejected {
                        code: e.code,
                        message: e.message,
                    })
                }
                Err(TransportError::Unavailable(detail)) => {
                    if attempt > self.retries {
                        return Err(BackendError::Unavailable {
                            attempts: attempt,
                            detail: format!("{}: {detail}", self.transport.describe()),
                        });
                    }
                    let wait = self.backoff * 2u32.saturating_pow(attempt - 1);
                    log::warn!(
                        "{} {} failed ({detail}); retry {attempt}/{} in {wait:?}",
                        self.transport.describe(),
                        method.name(),
                        self.retries
                    );
                    std::thread::sleep(wait);
                }
            }
        }
    }

    pub fn predict(&self, req: &PredictRequest) -> Result<(PredictResponse, Vec<TagSequence>), BackendError> {
        let body = serde_json::to_string(req).expect("serializable");
        let raw = self.call(Method::Predict, &body)?;
        let resp: PredictResponse = decode(&raw)?;
        let tags = validate_response(req, &resp, &self.labels)?;
        Ok((resp, tags))
    }

    /// Fetches backend metadata and fails unless its label set matches the
    /// model tier of the configured one.
    pub fn healthcheck(&self) -> Result<BackendInfo, BackendError> {
        let raw = self.call(Method::Health, "{}")?;
        let info: BackendInfo = decode(&raw)?;
        let expected = self.labels.model_label_hash();
        if info.label_set_hash != expected {
            let ours: BTreeSet<&str> = self.labels.model_labels().iter().map(String::as_str).collect();
            let theirs: BTreeSet<&str> = info.labels.iter().map(String::as_str).collect();
            return Err(BackendError::LabelSetMismatch {
                expected,
                actual: info.label_set_hash.clone(),
                extra: theirs.difference(&ours).map(|s| s.to_string()).collect(),
                missing: ours.difference(&theirs).map(|s| s.to_string()).collect(),
            });
        }
        Ok(info)
    }
}

impl ModelBackend for BackendClient {
    fn tag(&self, doc: &Document, sentences: &[Sentence]) -> Result<Vec<TagSequence>, BackendError> {
        if sentences.is_empty() {
            return Ok(Vec::new());
        }
        let req = PredictRequest::new(doc, sentences);
        Ok(self.predict(&req)?.1)
    }
}

pub struct HttpTransport {
    base: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        HttpTransport {
            base: base_url.trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Transport for HttpTransport {
    fn call(&self, method: Method, body: &str) -> Result<String, TransportError> {
        let res = match method {
            Method::Predict => self
                .agent
                .post(&format!("{}/v1/predict", self.base))
                .set("Content-Type", "application/json; charset=utf-8")
                .send_string(body),
            Method::Health => self.agent.get(&format!("{}/v1/health", self.base)).call(),
        };
        match res {
            Ok(r) => r.into_string().map_err(|e| TransportError::Unavailable(e.to_string())),
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().unwrap_or_default();
                match serde_json::from_str::<ErrorResponse>(&text) {
                    Ok(e) if code < 500 => Err(TransportError::Remote(e.error)),
                    _ => Err(TransportError::Unavailable(format!("HTTP {code}"))),
                }
            }
            Err(e) => Err(TransportError::Unavailable(e.to_string())),
        }
    }

    fn describe(&self) -> String {
        self.base.clone()
    }
}

struct ChildConn {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for ChildConn {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A pool of child processes, each answering one NDJSON line per request
/// line: `{"method": "predict"|"health", "params": {...}}`.
pub struct SubprocessTransport {
    program: String,
    args: Vec<String>,
    timeout: Duration,
    children: Vec<Mutex<Option<ChildConn>>>,
    next: AtomicUsize,
}

impl SubprocessTransport {
    pub fn new(program: impl Into<String>, args: Vec<String>, pool: usize, timeout: Duration) -> Self {
        SubprocessTransport {
            program: program.into(),
            args,
            timeout,
            children: (0..pool.max(1)).map(|_| Mutex::new(None)).collect(),
            next: AtomicUsize::new(0),
        }
    }

    fn spawn(&self) -> Result<ChildConn, TransportError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| TransportError::Unavailable(format!("spawn {}: {e}", self.program)))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = BufReader::new(child.stdout.take().expect("piped"));
        Ok(ChildConn { child, stdin, stdout })
    }

    fn exchange(conn: &mut ChildConn, line: &str) -> std::io::Result<String> {
        conn.stdin.write_all(line.as_bytes())?;
        conn.stdin.write_all(b"\n")?;
        conn.stdin.flush()?;
        let mut answer = String::new();
        if conn.stdout.read_line(&mut answer)? == 0 {
            return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "backend closed stdout"));
        }
        Ok(answer)
    }
}

impl Transport for SubprocessTransport {
    fn call(&self, method: Method, body: &str) -> Result<String, TransportError> {
        let params: serde_json::Value =
            serde_json::from_str(body).map_err(|e| TransportError::Unavailable(e.to_string()))?;
        let line = serde_json::json!({"method": method.name(), "params": params}).to_string();
        let idx = self.next.fetch_add(1, Ordering::Relaxed) % self.children.len();
        let mut slot = self.children[idx].lock().expect("child slot poisoned");
        if slot.is_none() {
            *slot = Some(self.spawn()?);
        }
        let started = Instant::now();
        let res = Self::exchange(slot.as_mut().expect("spawned"), &line);
        match res {
            Ok(answer) => {
                if started.elapsed() > self.timeout {
                    log::warn!("{} answered after {:?}", self.program, started.elapsed());
                }
                Ok(answer)
            }
            Err(e) => {
                // A broken child is replaced on the next call.
                *slot = None;
                Err(TransportError::Unavailable(format!("{}: {e}", self.program)))
            }
        }
    }

    fn describe(&self) -> String {
        format!("subprocess {}", self.program)
    }
}

/// Faults a [`MockTransport`] can inject.
#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    None,
    /// Fail this many calls at the transport level before answering.
    Unavailable(usize),
    /// Drop the last tag of the given sentence.
    ShortTags(usize),
    /// Advertise an additional label in health answers.
    ExtraLabel(String),
    /// Answer with a tag whose label is outside the label set.
    ForeignTag(usize, String),
}

/// In-process backend following the reference mock rule: a token found in
/// the gazetteer gets `B-<label>`, or `I-<label>` when the previous token
/// was tagged with the same label; every other token is `O`.
pub struct MockTransport {
    labels: LabelSet,
    gazetteer: HashMap<String, String>,
    fault: Fault,
    calls: AtomicUsize,
    failures_left: AtomicUsize,
    seen: Mutex<Vec<String>>,
}

pub const MOCK_MODEL_ID: &str = "mock-gazetteer-1";

/// Entries of the reference mock gazetteer.
pub const MOCK_GAZETTEER: &[(&str, &str)] = &[
    ("Linda", "PATIENT"),
    ("Martinez", "PATIENT"),
    ("John", "PATIENT"),
    ("Smith", "PATIENT"),
    ("Michael", "DOCTOR"),
    ("Brown", "DOCTOR"),
    ("Boston", "CITY"),
    ("Chicago", "CITY"),
    ("Germany", "COUNTRY"),
    ("Mercy", "HOSPITAL"),
    ("architect", "PROFESSION"),
    ("nurse", "PROFESSION"),
];

impl MockTransport {
    pub fn new(labels: LabelSet) -> Self {
        let gazetteer = MOCK_GAZETTEER
            .iter()
            .filter(|(_, l)| labels.is_model_label(l))
            .map(|(w, l)| (w.to_string(), l.to_string()))
            .collect();
        MockTransport {
            labels,
            gazetteer,
            fault: Fault::None,
            calls: AtomicUsize::new(0),
            failures_left: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn all_o(labels: LabelSet) -> Self {
        let mut m = Self::new(labels);
        m.gazetteer.clear();
        m
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        if let Fault::Unavailable(n) = fault {
            self.failures_left = AtomicUsize::new(n);
        }
        self.fault = fault;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Request ids received, in order, including repeats.
    pub fn seen_request_ids(&self) -> Vec<String> {
        self.seen.lock().expect("poisoned").clone()
    }

    /// Tags one token sequence by the mock rule.
    pub fn tag_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        let mut prev: Option<&str> = None;
        tokens
            .iter()
            .map(|t| match self.gazetteer.get(t.as_ref()) {
                Some(l) => {
                    let tag = if prev == Some(l.as_str()) {
                        format!("I-{l}")
                    } else {
                        format!("B-{l}")
                    };
                    prev = Some(l);
                    tag
                }
                None => {
                    prev = None;
                    "O".to_string()
                }
            })
            .collect()
    }

    /// Answer for a request body, as a backend would produce it.
    pub fn answer(&self, method: Method, body: &str) -> String {
        match method {
            Method::Health => {
                let mut labels: Vec<String> = self.labels.model_labels().to_vec();
                if let Fault::ExtraLabel(l) = &self.fault {
                    labels.push(l.clone());
                }
                let info = BackendInfo {
                    proto_version: PROTO_VERSION,
                    model_id: MOCK_MODEL_ID.into(),
                    label_set_hash: label_list_hash(labels.iter().map(String::as_str)),
                    labels,
                    max_batch: 64,
                };
                serde_json::to_string(&info).expect("serializable")
            }
            Method::Predict => {
                let value: serde_json::Value = match serde_json::from_str(body) {
                    Ok(v) => v,
                    Err(e) => return error_json("bad_request", e.to_string()),
                };
                if value.get("proto_version").and_then(|v| v.as_u64()) != Some(PROTO_VERSION as u64) {
                    return error_json("unsupported_version", "unsupported version");
                }
                let req: PredictRequest = match serde_json::from_value(value) {
                    Ok(r) => r,
                    Err(e) => return error_json("bad_request", e.to_string()),
                };
                self.seen.lock().expect("poisoned").push(req.request_id.clone());
                let mut sentences: Vec<WireTags> = req
                    .sentences
                    .iter()
                    .map(|s| WireTags {
                        tags: self.tag_tokens(&s.tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>()),
                    })
                    .collect();
                match &self.fault {
                    Fault::ShortTags(k) => {
                        if let Some(s) = sentences.get_mut(*k) {
                            s.tags.pop();
                        }
                    }
                    Fault::ForeignTag(k, l) => {
                        if let Some(t) = sentences.get_mut(*k).and_then(|s| s.tags.first_mut()) {
                            *t = format!("B-{l}");
                        }
                    }
                    _ => {}
                }
                let resp = PredictResponse {
                    proto_version: PROTO_VERSION,
                    request_id: req.request_id,
                    model_id: MOCK_MODEL_ID.into(),
                    latency_ms: 0,
                    sentences,
                };
                serde_json::to_string(&resp).expect("serializable")
            }
        }
    }
}

fn error_json(code: &str, message: impl Into<String>) -> String {
    serde_json::to_string(&ErrorResponse::new(code, message)).expect("serializable")
}

impl Transport for MockTransport {
    fn call(&self, method: Method, body: &str) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let left = self.failures_left.load(Ordering::SeqCst);
        if left > 0 {
            self.failures_left.store(left - 1, Ordering::SeqCst);
            // Record the id so tests can see the retry repeat it.
            if let Ok(r) = serde_json::from_str::<PredictRequest>(body) {
                self.seen.lock().expect("poisoned").push(r.request_id);
            }
            return Err(TransportError::Unavailable("injected failure".into()));
        }
        Ok(self.answer(method, body))
    }

    fn describe(&self) -> String {
        "mock".into()
    }
}

/// Transport that can never connect.
pub struct UnreachableTransport;

impl Transport for UnreachableTransport {
    fn call(&self, _: Method, _: &str) -> Result<String, TransportError> {
        Err(TransportError::Unavailable("connection refused".into()))
    }

    fn describe(&self) -> String {
        "unreachable".into()
    }
}
