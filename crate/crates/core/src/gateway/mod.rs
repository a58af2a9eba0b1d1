//! Uniform client for OpenAI-compatible chat-completion endpoints.
//!
//! One wire protocol for every route: POST `<base_url>/v1/chat/completions`
//! with a single user message. Credentials are read from the environment at
//! call time and never stored or logged.

pub mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::RenderedPrompt;

/// Routing entry for one logical model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRoute {
    pub model_id: String,
    pub base_url: String,
    /// Name of the environment variable holding the credential; empty for
    /// local endpoints that need none. Only the name is ever persisted.
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default)]
    pub default_temperature: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RouteTable {
    routes: std::collections::BTreeMap<String, ModelRoute>,
}

impl RouteTable {
    pub fn new(routes: Vec<ModelRoute>) -> Result<Self, GatewayError> {
        let mut table = std::collections::BTreeMap::new();
        for r in routes {
            url::Url::parse(&r.base_url)
                .map_err(|e| GatewayError::InvalidRequest(format!("bad base_url {:?}: {e}", r.base_url)))?;
            if !(0.0..=2.0).contains(&r.default_temperature) {
                return Err(GatewayError::InvalidRequest(format!(
                    "default_temperature {} out of [0, 2] for {:?}",
                    r.default_temperature, r.model_id
                )));
            }
            if table.insert(r.model_id.clone(), r).is_some() {
                return Err(GatewayError::InvalidRequest(
                    "duplicate model_id in route table".into(),
                ));
            }
        }
        Ok(Self { routes: table })
    }

    pub fn get(&self, model_id: &str) -> Option<&ModelRoute> {
        self.routes.get(model_id)
    }

    pub fn model_ids(&self) -> impl Iterator<Item = &str> {
        self.routes.keys().map(|s| s.as_str())
    }

    /// Point every route at `base_url` (used by the mock-endpoint toggle).
    pub fn rebase_all(&mut self, base_url: &str) {
        for r in self.routes.values_mut() {
            r.base_url = base_url.to_string();
            r.api_key_env.clear();
        }
    }
}

/// Retry and transport knobs. Backoff is deterministic (no jitter):
/// `initial_backoff_ms * multiplier^k` before retry k+1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatewaySettings {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub backoff_multiplier: f64,
    pub timeout_s: u64,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff_ms: 250,
            backoff_multiplier: 2.0,
            timeout_s: 120,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt: RenderedPrompt,
    pub temperature: f64,
    pub max_tokens: u32,
    pub request_id: String,
}

impl CompletionRequest {
    pub fn new(
        model_id: impl Into<String>,
        prompt: RenderedPrompt,
        temperature: f64,
        max_tokens: u32,
        request_id: impl Into<String>,
    ) -> Result<Self, GatewayError> {
        if !(0.0..=2.0).contains(&temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {temperature} out of [0, 2]"
            )));
        }
        if max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        Ok(Self {
            model_id: model_id.into(),
            prompt,
            temperature,
            max_tokens,
            request_id: request_id.into(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionResult {
    pub request_id: String,
    pub raw_text: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
    /// Model string echoed by the endpoint, when present.
    pub endpoint_model_name: String,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no route for model {0:?}")]
    UnknownModel(String),
    #[error("credential env var {env:?} named by the route is not set")]
    AuthMissing { env: String },
    #[error("endpoint unreachable after {attempts} attempt(s): {last_error}")]
    EndpointUnreachable { attempts: u32, last_error: String },
    #[error("malformed endpoint response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: Option<WireResponseMessage>,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    content: Option<String>,
}

/// Blocking, thread-safe client over a routing table.
pub struct Gateway {
    routes: RouteTable,
    settings: GatewaySettings,
    agent: ureq::Agent,
}

impl Gateway {
    pub fn new(routes: RouteTable, settings: GatewaySettings) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(settings.timeout_s.max(1)))
            .build();
        Self {
            routes,
            settings,
            agent,
        }
    }

    pub fn routes(&self) -> &RouteTable {
        &self.routes
    }

    /// Issue one chat-completion call, retrying transient failures
    /// (timeouts, 429, 5xx) with exponential backoff.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let route = self
            .routes
            .get(&request.model_id)
            .ok_or_else(|| GatewayError::UnknownModel(request.model_id.clone()))?;

        let bearer = if route.api_key_env.is_empty() {
            None
        } else {
            match std::env::var(&route.api_key_env) {
                Ok(v) if !v.is_empty() => Some(v),
                _ => {
                    return Err(GatewayError::AuthMissing {
                        env: route.api_key_env.clone(),
                    })
                }
            }
        };

        let url = format!(
            "{}/v1/chat/completions",
            route.base_url.trim_end_matches('/')
        );
        let body = serde_json::to_string(&WireRequest {
            model: &request.model_id,
            messages: [WireMessage {
                role: "user",
                content: &request.prompt.text,
            }],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        })
        .expect("wire request serializes");

        let started = Instant::now();
        let max_attempts = self.settings.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 1..=max_attempts {
            if attempt > 1 {
                let factor = self.settings.backoff_multiplier.max(1.0);
                let delay = self.settings.initial_backoff_ms as f64 * factor.powi(attempt as i32 - 2);
                std::thread::sleep(Duration::from_millis(delay as u64));
            }
            let mut call = self
                .agent
                .post(&url)
                .set("Content-Type", "application/json");
            if let Some(key) = &bearer {
                call = call.set("Authorization", &format!("Bearer {key}"));
            }
            match call.send_string(&body) {
                Ok(resp) => {
                    let text = resp.into_string().map_err(|e| {
                        GatewayError::MalformedResponse(format!("unreadable body: {e}"))
                    })?;
                    return self.parse_response(request, &text, attempt, started);
                }
                Err(ureq::Error::Status(code, resp)) => {
                    let detail = resp.into_string().unwrap_or_default();
                    last_error = format!("HTTP {code}: {}", truncate(&detail, 200));
                    let transient = code == 429 || (500..600).contains(&code);
                    if !transient {
                        return Err(GatewayError::EndpointUnreachable {
                            attempts: attempt,
                            last_error,
                        });
                    }
                    log::debug!(
                        "transient failure from {} (attempt {attempt}/{max_attempts}): {last_error}",
                        request.model_id
                    );
                }
                Err(ureq::Error::Transport(t)) => {
                    last_error = format!("transport: {t}");
                    log::debug!(
                        "transport failure for {} (attempt {attempt}/{max_attempts}): {last_error}",
                        request.model_id
                    );
                }
            }
        }
        Err(GatewayError::EndpointUnreachable {
            attempts: max_attempts,
            last_error,
        })
    }

    fn parse_response(
        &self,
        request: &CompletionRequest,
        body: &str,
        attempt: u32,
        started: Instant,
    ) -> Result<CompletionResult, GatewayError> {
        let wire: WireResponse = serde_json::from_str(body)
            .map_err(|e| GatewayError::MalformedResponse(format!("bad JSON: {e}")))?;
        let content = wire
            .choices
            .first()
            .and_then(|c| c.message.as_ref())
            .and_then(|m| m.content.clone())
            .ok_or_else(|| {
                GatewayError::MalformedResponse("body lacks choices[0].message.content".into())
            })?;
        Ok(CompletionResult {
            request_id: request.request_id.clone(),
            raw_text: content,
            latency_ms: started.elapsed().as_millis() as u64,
            attempt_count: attempt,
            endpoint_model_name: wire.model.unwrap_or_default(),
        })
    }

    /// Dispatch a batch with at most `parallelism` requests in flight.
    /// Results come back in input order; a failed request carries its error
    /// without aborting the rest.
    pub fn complete_batch(
        &self,
        requests: &[CompletionRequest],
        parallelism: usize,
    ) -> Vec<Result<CompletionResult, GatewayError>> {
        if requests.is_empty() {
            return Vec::new();
        }
        let workers = parallelism.max(1).min(requests.len());
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<CompletionResult, GatewayError>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= requests.len() {
                        break;
                    }
                    let outcome = self.complete(&requests[i]);
                    *slots[i].lock().expect("result slot poisoned") = Some(outcome);
                });
            }
        });

        slots
            .into_iter()
            .map(|slot| {
                slot.into_inner()
                    .expect("result slot poisoned")
                    .expect("every request slot filled")
            })
            .collect()
    }
}

fn truncate(s: &str, limit: usize) -> &str {
    match s.char_indices().nth(limit) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}
