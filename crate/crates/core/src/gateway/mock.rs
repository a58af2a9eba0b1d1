//! In-process mock of the chat-completion wire protocol.
//!
//! Serves scripted responses for known prompts, falls back to a
//! deterministic hash-based responder otherwise, and records enough about
//! incoming traffic (arrival times, concurrency high-water mark) for tests
//! to assert retry and parallelism behavior.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::prompt::{CONFIDENCE_INSTRUCTION, DEFENDER_TEMPLATE};
use crate::taxonomy::Taxonomy;

/// One scripted response. A request matches when every entry of
/// `require_substrings` occurs in the user message and, if `model` is set,
/// the request's model equals it. Rules are tried in order.
#[derive(Debug, Clone)]
pub struct MockRule {
    pub require_substrings: Vec<String>,
    pub model: Option<String>,
    pub response: String,
    pub status: u16,
}

impl MockRule {
    pub fn on(substrings: Vec<String>, response: impl Into<String>) -> Self {
        Self {
            require_substrings: substrings,
            model: None,
            response: response.into(),
            status: 200,
        }
    }

    fn matches(&self, model: &str, content: &str) -> bool {
        if let Some(m) = &self.model {
            if m != model {
                return false;
            }
        }
        self.require_substrings.iter().all(|s| content.contains(s))
    }
}

/// What to serve when no rule matches.
#[derive(Debug, Clone, Default)]
pub enum DefaultResponder {
    /// Deterministic content derived from a hash of (model, prompt):
    /// detector prompts get 1..=3 attack names (with scores when the prompt
    /// asks for them), defender prompts get the embedded original text back.
    #[default]
    HashEcho,
    Fixed(String),
    /// Respond with this HTTP status and body.
    Status(u16, String),
    /// Respond 200 with this body verbatim, skipping the completion wrapper.
    RawBody(String),
}

#[derive(Debug, Clone, Default)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    pub default: DefaultResponder,
    /// Fail the first `fail_first` requests with `fail_status` before
    /// serving anything; exercises client retry.
    pub fail_first: u32,
    pub fail_status: u16,
    /// Hold every response for this long; exercises client parallelism.
    pub delay_ms: u64,
}

impl MockScript {
    /// Script a detector that answers each `(attack_text, gold_names)` pair
    /// with exactly its gold attack names, in both plain and scored formats.
    /// Defender prompts fall through to the hash-echo default.
    pub fn perfect_detector<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<S>)>,
        S: Into<String>,
    {
        // The attacked text recurs inside defender prompts, so rules also
        // anchor on the detector instruction to match detector calls only.
        let head = "Identify any logical fallacies".to_string();
        let mut rules = Vec::new();
        for (text, names) in items {
            let text = text.into();
            let names: Vec<String> = names.into_iter().map(Into::into).collect();
            let scored = names
                .iter()
                .map(|n| format!("{n} - score: 9"))
                .collect::<Vec<_>>()
                .join("\n");
            let plain = names.join("\n");
            rules.push(MockRule::on(
                vec![head.clone(), text.clone(), CONFIDENCE_INSTRUCTION.to_string()],
                if scored.is_empty() { "none".to_string() } else { scored },
            ));
            rules.push(MockRule::on(
                vec![head.clone(), text],
                if plain.is_empty() { "none".to_string() } else { plain },
            ));
        }
        Self {
            rules,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ObservedRequest {
    pub model: String,
    pub content: String,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockStats {
    pub total_requests: usize,
    pub max_concurrent: usize,
}

struct MockState {
    script: MockScript,
    started: Instant,
    total: AtomicUsize,
    in_flight: AtomicUsize,
    high_water: AtomicUsize,
    observed: Mutex<Vec<ObservedRequest>>,
}

#[derive(Deserialize)]
struct IncomingRequest {
    #[serde(default)]
    model: String,
    #[serde(default)]
    messages: Vec<IncomingMessage>,
}

#[derive(Deserialize)]
struct IncomingMessage {
    #[serde(default)]
    content: String,
}

/// A running mock endpoint bound to a loopback port. Stops on drop.
pub struct MockServer {
    addr: SocketAddr,
    state: Arc<MockState>,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(script: MockScript) -> Self {
        let server =
            tiny_http::Server::http("127.0.0.1:0").expect("bind mock server on loopback");
        let addr = match server.server_addr() {
            tiny_http::ListenAddr::IP(a) => a,
            other => panic!("unexpected listen address {other:?}"),
        };
        let state = Arc::new(MockState {
            script,
            started: Instant::now(),
            total: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            high_water: AtomicUsize::new(0),
            observed: Mutex::new(Vec::new()),
        });
        let stop = Arc::new(AtomicBool::new(false));
        let accept_state = Arc::clone(&state);
        let accept_stop = Arc::clone(&stop);
        let accept_thread = std::thread::spawn(move || {
            while !accept_stop.load(Ordering::SeqCst) {
                match server.recv_timeout(Duration::from_millis(25)) {
                    Ok(Some(request)) => {
                        let st = Arc::clone(&accept_state);
                        std::thread::spawn(move || handle(request, st));
                    }
                    Ok(None) => {}
                    Err(_) => break,
                }
            }
        });
        Self {
            addr,
            state,
            stop,
            accept_thread: Some(accept_thread),
        }
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stats(&self) -> MockStats {
        MockStats {
            total_requests: self.state.total.load(Ordering::SeqCst),
            max_concurrent: self.state.high_water.load(Ordering::SeqCst),
        }
    }

    /// Requests seen so far, in arrival order.
    pub fn observed(&self) -> Vec<ObservedRequest> {
        self.state.observed.lock().expect("observed log poisoned").clone()
    }

    /// Arrival offsets since server start, in arrival order.
    pub fn arrival_offsets(&self) -> Vec<Duration> {
        self.observed().iter().map(|o| o.elapsed).collect()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
        let deadline = Instant::now() + Duration::from_secs(2);
        while self.state.in_flight.load(Ordering::SeqCst) > 0 && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}

fn handle(mut request: tiny_http::Request, state: Arc<MockState>) {
    let seen_so_far = state.total.fetch_add(1, Ordering::SeqCst);
    let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.high_water.fetch_max(now, Ordering::SeqCst);

    let mut body = String::new();
    let _ = request.as_reader().read_to_string(&mut body);
    let parsed: Result<IncomingRequest, _> = serde_json::from_str(&body);

    let (status, text, raw) = match parsed {
        Err(e) => (400, format!("unparseable request body: {e}"), false),
        Ok(incoming) => {
            let content = incoming
                .messages
                .first()
                .map(|m| m.content.clone())
                .unwrap_or_default();
            state
                .observed
                .lock()
                .expect("observed log poisoned")
                .push(ObservedRequest {
                    model: incoming.model.clone(),
                    content: content.clone(),
                    elapsed: state.started.elapsed(),
                });
            if (seen_so_far as u32) < state.script.fail_first {
                let code = if state.script.fail_status == 0 {
                    503
                } else {
                    state.script.fail_status
                };
                (code, "injected failure".to_string(), false)
            } else {
                respond(&state.script, &incoming.model, &content)
            }
        }
    };

    if state.script.delay_ms > 0 {
        std::thread::sleep(Duration::from_millis(state.script.delay_ms));
    }

    let payload = if raw {
        text
    } else if status == 200 {
        completion_body(&text)
    } else {
        format!("{{\"error\":{}}}", serde_json::to_string(&text).expect("string encodes"))
    };
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
        .expect("static header");
    let response = tiny_http::Response::from_string(payload)
        .with_status_code(status)
        .with_header(header);
    let _ = request.respond(response);
    state.in_flight.fetch_sub(1, Ordering::SeqCst);
}

fn respond(script: &MockScript, model: &str, content: &str) -> (u16, String, bool) {
    for rule in &script.rules {
        if rule.matches(model, content) {
            return (rule.status, rule.response.clone(), false);
        }
    }
    match &script.default {
        DefaultResponder::Fixed(s) => (200, s.clone(), false),
        DefaultResponder::Status(code, body) => (*code, body.clone(), false),
        DefaultResponder::RawBody(body) => (200, body.clone(), true),
        DefaultResponder::HashEcho => (200, hash_echo(model, content), false),
    }
}

fn completion_body(content: &str) -> String {
    serde_json::json!({
        "id": "mock-cmpl",
        "object": "chat.completion",
        "model": "mock",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop",
        }],
    })
    .to_string()
}

/// Deterministic default responder keyed by sha256(model, prompt).
fn hash_echo(model: &str, content: &str) -> String {
    if content.starts_with(DEFENDER_TEMPLATE) {
        return defend_echo(model, content);
    }
    let types = Taxonomy::builtin().canonical_attacks();
    let mut hasher = Sha256::new();
    hasher.update(model.as_bytes());
    hasher.update([0u8]);
    hasher.update(content.as_bytes());
    let digest = hasher.finalize();
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"));

    let count = 1 + (seed % 3) as usize;
    let mut picked: Vec<usize> = Vec::with_capacity(count);
    let mut cursor = seed;
    while picked.len() < count {
        cursor = cursor.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let idx = (cursor >> 33) as usize % types.len();
        if !picked.contains(&idx) {
            picked.push(idx);
        }
    }

    let scored = content.contains(CONFIDENCE_INSTRUCTION);
    picked
        .iter()
        .enumerate()
        .map(|(i, &idx)| {
            let name = &types[idx].display_name;
            if scored {
                let score = 1 + ((seed >> (8 + 4 * i)) % 10);
                format!("{name} - score: {score}")
            } else {
                name.clone()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn defend_echo(model: &str, content: &str) -> String {
    let original = content
        .split_once("\nOriginal Text: ")
        .map(|(_, rest)| rest)
        .and_then(|rest| rest.split("\nAttack:").next())
        .unwrap_or("")
        .trim();
    if original.is_empty() {
        return "Rewritten text.".to_string();
    }
    let mut hasher = Sha256::new();
    hasher.update(model.as_bytes());
    let digest = hasher.finalize();
    if digest[0] % 2 == 0 {
        original.replace('!', ".")
    } else {
        original.to_string()
    }
}
