//! OpenAI-compatible chat-completions backend.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::trace::{request_key, TraceEntry};
use super::{AgentError, AgentPolicy, Completion, GenerationParams, PolicyDescriptor, TurnContext};
use crate::prompt::FORMAT_REMINDER;
use crate::record::TokenUsage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: role.into(),
            content: content.into(),
        }
    }
}

/// The message list sent for one turn: the rendered role prompt, plus the
/// rejected reply and a format reminder on a repair attempt.
pub fn build_messages(ctx: &TurnContext, rejected: Option<&str>) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::new("user", ctx.prompt())];
    if let Some(bad) = rejected {
        messages.push(ChatMessage::new("assistant", bad));
        messages.push(ChatMessage::new("user", FORMAT_REMINDER));
    }
    messages
}

fn default_temperature() -> f64 {
    GenerationParams::default().temperature
}
fn default_max_tokens() -> u32 {
    GenerationParams::default().max_output_tokens
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    1_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionEndpointConfig {
    #[serde(default)]
    pub name: Option<String>,
    /// Server root; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First backoff delay; doubles per retry, jittered by 20%.
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    /// Environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Append every request/response pair to this line-delimited file.
    #[serde(default)]
    pub trace_path: Option<PathBuf>,
}

impl CompletionEndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        CompletionEndpointConfig {
            name: None,
            base_url: base_url.into(),
            model_name: model_name.into(),
            temperature: default_temperature(),
            max_output_tokens: default_max_tokens(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_ms(),
            api_key_env: None,
            trace_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let fail = |m: &str| Err(AgentError::Config(format!("endpoint {}: {m}", self.base_url)));
        if self.base_url.trim().is_empty() {
            return fail("empty base_url");
        }
        if self.timeout_ms == 0 {
            return fail("timeout must be positive");
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return fail("temperature must be a non-negative number");
        }
        if self.max_output_tokens == 0 {
            return fail("max_output_tokens must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
    /// Relative jitter; delays are scaled by a uniform factor in `1 ± jitter`.
    pub jitter: f64,
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let nominal = self.base.as_secs_f64() * 2f64.powi(retry as i32);
        let factor = if self.jitter > 0.0 {
            rng.gen_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        Duration::from_secs_f64(nominal * factor)
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Retryable(String),
    Fatal(String),
}

pub struct HttpPolicy {
    descriptor: PolicyDescriptor,
    config: CompletionEndpointConfig,
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
    retry: RetryPolicy,
    trace: Option<Mutex<BufWriter<File>>>,
}

impl HttpPolicy {
    pub fn new(config: CompletionEndpointConfig) -> Result<Self, AgentError> {
        config.validate()?;
        let token = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| AgentError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let trace = match &config.trace_path {
            Some(path) => {
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
                Some(Mutex::new(BufWriter::new(f)))
            }
            None => None,
        };
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build();
        Ok(HttpPolicy {
            descriptor: PolicyDescriptor {
                name: config
                    .name
                    .clone()
                    .unwrap_or_else(|| format!("http:{}", config.model_name)),
                kind: "http".into(),
                params: Some(GenerationParams {
                    temperature: config.temperature,
                    max_output_tokens: config.max_output_tokens,
                }),
            },
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            retry: RetryPolicy {
                max_retries: config.max_retries,
                base: Duration::from_millis(config.backoff_base_ms),
                jitter: 0.2,
            },
            config,
            token,
            agent: ureq::Agent::new_with_config(agent_config),
            trace,
        })
    }

    fn attempt(&self, body: &ChatRequest) -> Result<(String, Option<TokenUsage>), Attempt> {
        let mut req = self.agent.post(&self.url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e @ (ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed | ureq::Error::Io(_))) => {
                return Err(Attempt::Retryable(e.to_string()))
            }
            Err(e) => return Err(Attempt::Fatal(e.to_string())),
        };
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err(Attempt::Retryable(format!("HTTP {status}")));
        }
        if status >= 400 {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Attempt::Fatal(format!("HTTP {status}: {detail}")));
        }
        let parsed: ChatResponse = resp.body_mut().read_json().map_err(|e| match e {
            ureq::Error::Timeout(_) | ureq::Error::Io(_) => Attempt::Retryable(e.to_string()),
            _ => Attempt::Fatal(format!("bad response body: {e}")),
        })?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal("response has no message content".into()))?;
        let usage = parsed.usage.map(|u| TokenUsage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        });
        Ok((text, usage))
    }

    fn log_trace(&self, entry: &TraceEntry) {
        let Some(trace) = &self.trace else { return };
        let mut w = trace.lock().unwrap_or_else(|p| p.into_inner());
        let line = serde_json::to_string(entry).expect("trace entries serialize");
        if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
            log::warn!("trace write failed: {e}");
        }
    }
}

impl AgentPolicy for HttpPolicy {
    fn descriptor(&self) -> &PolicyDescriptor {
        &self.descriptor
    }

    fn reports_latency(&self) -> bool {
        true
    }

    fn complete(&self, ctx: &TurnContext, rejected: Option<&str>) -> Result<Completion, AgentError> {
        let messages = build_messages(ctx, rejected);
        let body = ChatRequest {
            model: &self.config.model_name,
            messages: &messages,
            temperature: self.config.temperature,
            max_tokens: self.config.max_output_tokens,
        };
        let start = Instant::now();
        let mut retries = 0u32;
        let mut rng = rand::thread_rng();
        loop {
            match self.attempt(&body) {
                Ok((text, usage)) => {
                    self.log_trace(&TraceEntry {
                        key: request_key(&messages),
                        model: self.config.model_name.clone(),
                        messages: messages.clone(),
                        response: text.clone(),
                        usage,
                    });
                    return Ok(Completion {
                        text,
                        latency_ms: Some(start.elapsed().as_millis() as u64),
                        retry_count: retries,
                        usage,
                    });
                }
                Err(Attempt::Retryable(msg)) if retries < self.retry.max_retries => {
                    let wait = self.retry.delay(retries, &mut rng);
                    log::warn!("{}: {msg}; retrying in {wait:?}", self.descriptor.name);
                    std::thread::sleep(wait);
                    retries += 1;
                }
                Err(Attempt::Retryable(message) | Attempt::Fatal(message)) => {
                    return Err(AgentError::BackendUnavailable {
                        policy: self.descriptor.name.clone(),
                        attempts: retries + 1,
                        message,
                    })
                }
            }
        }
    }
}
