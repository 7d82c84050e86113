//! Decision backends: scripted personalities for deterministic runs and an
//! OpenAI-style chat-completions HTTP client for live models.
//!
//! Every backend consumes a fully rendered prompt plus a structured context
//! summary and returns raw text. Scripted backends are pure functions of
//! that input (latency reported as 0 ms), so transcripts replay identically;
//! the HTTP client measures real latency and retries transient failures with
//! exponential backoff. Numeric fields are pulled out of responses with
//! [`extract_json_field`], which tolerates prose around the JSON object.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("auth: environment variable {0} is not set")]
    Auth(String),
    #[error("server returned status {status} after {attempts} attempt(s): {body}")]
    Status {
        status: u16,
        attempts: u32,
        body: String,
    },
    #[error("malformed response envelope: {0}")]
    Envelope(String),
    #[error("no JSON object found in response")]
    NoJsonObject,
    #[error("key {0:?} absent from every JSON object in response")]
    KeyAbsent(String),
    #[error("key {key:?} has non-numeric value {value}")]
    NonNumeric { key: String, value: String },
    #[error("unknown scripted backend {0:?}")]
    UnknownScripted(String),
}

/// Backend selection, as it appears in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// In-process deterministic backend.
    Scripted {
        name: String,
        #[serde(default)]
        params: serde_json::Map<String, Value>,
    },
    /// OpenAI-style chat-completions endpoint.
    Http {
        endpoint: String,
        model: String,
        /// Name of the environment variable holding the bearer token; keys
        /// never live in scenario files.
        #[serde(default)]
        auth_env: Option<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_max_retries")]
        max_retries: u32,
        #[serde(default)]
        temperature: f64,
    },
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_retries() -> u32 {
    2
}

impl BackendSpec {
    pub fn scripted(name: &str) -> Self {
        BackendSpec::Scripted {
            name: name.to_owned(),
            params: serde_json::Map::new(),
        }
    }

    pub fn scripted_with(name: &str, params: serde_json::Value) -> Self {
        let params = match params {
            Value::Object(m) => m,
            _ => serde_json::Map::new(),
        };
        BackendSpec::Scripted {
            name: name.to_owned(),
            params,
        }
    }

    pub fn is_http(&self) -> bool {
        matches!(self, BackendSpec::Http { .. })
    }

    /// Short label for audit records.
    pub fn label(&self) -> String {
        match self {
            BackendSpec::Scripted { name, .. } => format!("scripted:{name}"),
            BackendSpec::Http { model, .. } => format!("http:{model}"),
        }
    }
}

/// Structured summary handed to scripted backends alongside the prompt.
/// HTTP backends ignore it; the prompt carries everything they see.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum PromptContext {
    #[default]
    Raw,
    /// Gain retune request.
    KpTuning {
        current_kp: f64,
        current_kpi: f64,
        target_kpi: f64,
        /// `(kp, kpi)` pairs, most recent first.
        memory: Vec<(f64, f64)>,
    },
    /// One negotiation turn.
    Negotiation {
        own_goal: f64,
        round: u32,
        guardrail: Option<(f64, f64)>,
        mediator_last: Option<f64>,
        own_last: Option<f64>,
        others_last: Vec<f64>,
        /// Tenant bids this round, set only for the mediator turn.
        bids_this_round: Vec<f64>,
    },
}

/// A backend invocation: rendered prompt plus structured context.
#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub prompt: String,
    pub context: PromptContext,
}

impl CompletionRequest {
    pub fn raw(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            context: PromptContext::Raw,
        }
    }
}

/// One prompt/response exchange with measured latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub prompt: String,
    pub response: String,
    pub latency_ms: u64,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

/// Sends one completion request to the backend described by `spec`.
pub fn complete(spec: &BackendSpec, req: &CompletionRequest) -> Result<ChatExchange, BackendError> {
    match spec {
        BackendSpec::Scripted { name, params } => {
            let response = scripted_response(name, params, req)?;
            Ok(ChatExchange {
                prompt: req.prompt.clone(),
                response,
                latency_ms: 0,
                prompt_tokens: None,
                completion_tokens: None,
            })
        }
        BackendSpec::Http {
            endpoint,
            model,
            auth_env,
            timeout_ms,
            max_retries,
            temperature,
        } => http_complete(
            endpoint,
            model,
            auth_env.as_deref(),
            *timeout_ms,
            *max_retries,
            *temperature,
            req,
        ),
    }
}

// ---------------------------------------------------------------------------
// Scripted backends
// ---------------------------------------------------------------------------

fn param_f64(params: &serde_json::Map<String, Value>, key: &str, default: f64) -> f64 {
    params.get(key).and_then(Value::as_f64).unwrap_or(default)
}

fn bid_text(reason: &str, value: f64) -> String {
    format!("Reasoning: {reason} {{\"throughput\": {value}}}")
}

/// Dispatches to the named scripted personality.
///
/// Tenants: `greedy` opens at its goal and concedes a fraction of the gap to
/// the mediator each round; `cooperative` adopts the mediator's last
/// proposal; `compliant` projects its position onto the guard-rail interval.
/// `mediator` proposes the bid mean, clamped into the guard-rail when one is
/// active. `echo-json` returns its configured payload verbatim; `kp-echo`
/// answers gain requests with a fixed value.
fn scripted_response(
    name: &str,
    params: &serde_json::Map<String, Value>,
    req: &CompletionRequest,
) -> Result<String, BackendError> {
    match name {
        "echo-json" => Ok(params
            .get("payload")
            .map(|v| v.to_string())
            .unwrap_or_else(|| "{}".to_owned())),
        "kp-echo" => {
            let kp = param_f64(params, "kp", 1.0);
            Ok(format!("{{\"Kp\": {kp}}}"))
        }
        "greedy" | "cooperative" | "compliant" => {
            let ctx = match &req.context {
                PromptContext::Negotiation { .. } => &req.context,
                _ => {
                    return Err(BackendError::Envelope(format!(
                        "scripted tenant {name:?} needs negotiation context"
                    )))
                }
            };
            let PromptContext::Negotiation {
                own_goal,
                guardrail,
                mediator_last,
                own_last,
                ..
            } = ctx
            else {
                unreachable!()
            };
            let value = match name {
                "greedy" => {
                    let concession = param_f64(params, "concession", 0.2);
                    match (own_last, mediator_last) {
                        (Some(prev), Some(med)) => prev + concession * (med - prev),
                        _ => *own_goal,
                    }
                }
                "cooperative" => mediator_last.unwrap_or(*own_goal),
                "compliant" => {
                    let base = mediator_last.unwrap_or(*own_goal);
                    match guardrail {
                        Some((lo, hi)) => base.clamp(*lo, *hi),
                        None => base,
                    }
                }
                _ => unreachable!(),
            };
            let reason = match name {
                "greedy" => "Holding close to my own service goal.",
                "cooperative" => "Accepting the balancing proposal on the table.",
                "compliant" => "Staying inside the advised optimal interval.",
                _ => unreachable!(),
            };
            Ok(bid_text(reason, round3(value)))
        }
        "mediator" => {
            let PromptContext::Negotiation {
                guardrail,
                bids_this_round,
                ..
            } = &req.context
            else {
                return Err(BackendError::Envelope(
                    "scripted mediator needs negotiation context".to_owned(),
                ));
            };
            let mean = if bids_this_round.is_empty() {
                param_f64(params, "fallback", 50.0)
            } else {
                bids_this_round.iter().sum::<f64>() / bids_this_round.len() as f64
            };
            let value = match guardrail {
                Some((lo, hi)) => mean.clamp(*lo, *hi),
                None => mean,
            };
            Ok(bid_text(
                "Balancing all tenant positions fairly.",
                round3(value),
            ))
        }
        other => Err(BackendError::UnknownScripted(other.to_owned())),
    }
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

// ---------------------------------------------------------------------------
// HTTP chat-completions client
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

fn http_complete(
    endpoint: &str,
    model: &str,
    auth_env: Option<&str>,
    timeout_ms: u64,
    max_retries: u32,
    temperature: f64,
    req: &CompletionRequest,
) -> Result<ChatExchange, BackendError> {
    let token = match auth_env {
        Some(var) => Some(std::env::var(var).map_err(|_| BackendError::Auth(var.to_owned()))?),
        None => None,
    };
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_millis(timeout_ms))
        .build()
        .map_err(|e| BackendError::Transport(e.to_string()))?;
    let body = ChatRequest {
        model,
        messages: vec![ChatMessage {
            role: "user",
            content: &req.prompt,
        }],
        temperature,
    };

    let started = std::time::Instant::now();
    let mut attempt = 0;
    loop {
        attempt += 1;
        let mut http = client.post(endpoint).json(&body);
        if let Some(token) = &token {
            http = http.header("Authorization", format!("Bearer {token}"));
        }
        let result = http.send();
        match result {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    let parsed: ChatResponse = resp
                        .json()
                        .map_err(|e| BackendError::Envelope(e.to_string()))?;
                    let content = parsed
                        .choices
                        .into_iter()
                        .next()
                        .and_then(|c| c.message.content)
                        .ok_or_else(|| {
                            BackendError::Envelope("no choices in response".to_owned())
                        })?;
                    return Ok(ChatExchange {
                        prompt: req.prompt.clone(),
                        response: content,
                        latency_ms: started.elapsed().as_millis() as u64,
                        prompt_tokens: parsed.usage.as_ref().and_then(|u| u.prompt_tokens),
                        completion_tokens: parsed
                            .usage
                            .as_ref()
                            .and_then(|u| u.completion_tokens),
                    });
                }
                let transient = status.is_server_error() || status.as_u16() == 429;
                if !transient || attempt > max_retries {
                    let body_text = resp.text().unwrap_or_default();
                    return Err(BackendError::Status {
                        status: status.as_u16(),
                        attempts: attempt,
                        body: body_text,
                    });
                }
            }
            Err(e) => {
                if attempt > max_retries {
                    return Err(BackendError::Transport(e.to_string()));
                }
            }
        }
        std::thread::sleep(Duration::from_millis(100u64 << (attempt - 1).min(6)));
    }
}

// ---------------------------------------------------------------------------
// Structured-response extraction
// ---------------------------------------------------------------------------

/// Finds the first syntactically valid JSON object in `text` that contains
/// `key` (at any nesting depth) with a numeric value, and returns that
/// number. Prose before, between and after objects is tolerated.
pub fn extract_json_field(text: &str, key: &str) -> Result<f64, BackendError> {
    let mut saw_object = false;
    let mut saw_key_non_numeric: Option<String> = None;
    for (idx, _) in text.match_indices('{') {
        let Some(value) = parse_leading_json(&text[idx..]) else {
            continue;
        };
        if !value.is_object() {
            continue;
        }
        saw_object = true;
        if let Some(found) = find_key(&value, key) {
            match found.as_f64() {
                Some(num) => return Ok(num),
                None => {
                    saw_key_non_numeric.get_or_insert_with(|| found.to_string());
                }
            }
        }
    }
    if let Some(value) = saw_key_non_numeric {
        return Err(BackendError::NonNumeric {
            key: key.to_owned(),
            value,
        });
    }
    if saw_object {
        return Err(BackendError::KeyAbsent(key.to_owned()));
    }
    Err(BackendError::NoJsonObject)
}

/// Parses a JSON value from the start of `s`, ignoring trailing text.
fn parse_leading_json(s: &str) -> Option<Value> {
    let mut stream = serde_json::Deserializer::from_str(s).into_iter::<Value>();
    match stream.next() {
        Some(Ok(v)) => Some(v),
        _ => None,
    }
}

/// Depth-first search for `key` inside a JSON value, document order.
fn find_key<'a>(value: &'a Value, key: &str) -> Option<&'a Value> {
    match value {
        Value::Object(map) => {
            if let Some(v) = map.get(key) {
                return Some(v);
            }
            map.values().find_map(|v| find_key(v, key))
        }
        Value::Array(items) => items.iter().find_map(|v| find_key(v, key)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn extract_plain_object() {
        assert_eq!(extract_json_field("{\"Kp\": 0.9}", "Kp").unwrap(), 0.9);
    }

    #[test]
    fn extract_prose_wrapped() {
        let text = "Reasoning: balance all needs. {\"throughput\": 54}";
        assert_eq!(extract_json_field(text, "throughput").unwrap(), 54.0);
    }

    #[test]
    fn extract_first_matching_object_wins() {
        let text = "{\"other\": 1} then {\"Kp\": 0.5} and later {\"Kp\": 9.9}";
        assert_eq!(extract_json_field(text, "Kp").unwrap(), 0.5);
    }

    #[test]
    fn extract_nested_key() {
        let text = "{\"sla\": {\"throughput\": 42.5}}";
        assert_eq!(extract_json_field(text, "throughput").unwrap(), 42.5);
    }

    #[test]
    fn extract_skips_false_braces() {
        let text = "think {not json} ok {\"Kp\": 1.25}";
        assert_eq!(extract_json_field(text, "Kp").unwrap(), 1.25);
    }

    #[test]
    fn extract_errors_are_typed() {
        assert!(matches!(
            extract_json_field("throughput is fifty", "throughput"),
            Err(BackendError::NoJsonObject)
        ));
        assert!(matches!(
            extract_json_field("{\"kp\": \"high\"}", "Kp"),
            Err(BackendError::KeyAbsent(_))
        ));
        assert!(matches!(
            extract_json_field("{\"Kp\": \"high\"}", "Kp"),
            Err(BackendError::NonNumeric { .. })
        ));
    }

    #[test]
    fn scripted_echo_json_passthrough() {
        let spec = BackendSpec::scripted_with(
            "echo-json",
            serde_json::json!({"payload": {"throughput": 61}}),
        );
        let ex = complete(&spec, &CompletionRequest::raw("anything")).unwrap();
        assert_eq!(extract_json_field(&ex.response, "throughput").unwrap(), 61.0);
        assert_eq!(ex.latency_ms, 0);
    }

    #[test]
    fn scripted_unknown_name_errors() {
        let spec = BackendSpec::scripted("no-such-personality");
        assert!(matches!(
            complete(&spec, &CompletionRequest::raw("x")),
            Err(BackendError::UnknownScripted(_))
        ));
    }

    #[test]
    fn scripted_tenants_are_pure() {
        let ctx = PromptContext::Negotiation {
            own_goal: 80.0,
            round: 2,
            guardrail: Some((50.0, 60.0)),
            mediator_last: Some(55.0),
            own_last: Some(80.0),
            others_last: vec![10.0],
            bids_this_round: vec![],
        };
        let req = CompletionRequest {
            prompt: "p".into(),
            context: ctx,
        };
        for name in ["greedy", "cooperative", "compliant"] {
            let spec = BackendSpec::scripted(name);
            let a = complete(&spec, &req).unwrap();
            let b = complete(&spec, &req).unwrap();
            assert_eq!(a, b, "{name} must be deterministic");
        }
    }

    #[test]
    fn compliant_projects_into_guardrail() {
        let req = CompletionRequest {
            prompt: "p".into(),
            context: PromptContext::Negotiation {
                own_goal: 95.0,
                round: 1,
                guardrail: Some((50.0, 60.0)),
                mediator_last: None,
                own_last: None,
                others_last: vec![],
                bids_this_round: vec![],
            },
        };
        let ex = complete(&BackendSpec::scripted("compliant"), &req).unwrap();
        let v = extract_json_field(&ex.response, "throughput").unwrap();
        assert_eq!(v, 60.0);
    }

    proptest! {
        #[test]
        fn extractor_never_panics(text in ".{0,400}") {
            let _ = extract_json_field(&text, "throughput");
        }
    }
}
