//! Turn-generation policies and the generate-parse-repair loop around them.

mod http;
mod scripted;
mod trace;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::persona::{Persona, PublicPersona};
use crate::prompt::{build_rec_prompt, build_user_prompt};
use crate::protocol::{parse_turn, ActionKind, ProtocolError, Role, Turn};
use crate::record::{RecordedTurn, TokenUsage, TurnMeta};

pub use http::{build_messages, ChatMessage, CompletionEndpointConfig, HttpPolicy, RetryPolicy};
pub use scripted::{AcceptRule, RecOrder, RuleRecommender, RuleUser, ScriptedQueue};
pub use trace::{request_key, TraceEntry, TraceReplayPolicy};

/// What a policy is allowed to see for one turn.
#[derive(Debug, Clone, Copy)]
pub enum RoleView<'a> {
    User(&'a Persona),
    Recommender(&'a PublicPersona),
}

#[derive(Debug, Clone, Copy)]
pub struct TurnContext<'a> {
    pub view: RoleView<'a>,
    pub history: &'a [Turn],
    pub dialogue_id: &'a str,
    pub seed: u64,
}

impl TurnContext<'_> {
    pub fn role(&self) -> Role {
        match self.view {
            RoleView::User(_) => Role::User,
            RoleView::Recommender(_) => Role::Recommender,
        }
    }

    /// Rendered role prompt for this turn.
    pub fn prompt(&self) -> String {
        match self.view {
            RoleView::User(p) => build_user_prompt(p, self.history),
            RoleView::Recommender(p) => build_rec_prompt(p, self.history),
        }
    }

    /// Turns this policy's role has already produced.
    pub fn own_turns(&self) -> usize {
        let role = self.role();
        self.history.iter().filter(|t| t.role == role).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.7,
            max_output_tokens: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDescriptor {
    pub name: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<GenerationParams>,
}

/// One raw backend reply.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Completion {
    pub text: String,
    pub latency_ms: Option<u64>,
    pub retry_count: u32,
    pub usage: Option<TokenUsage>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Completion {
        Completion {
            text: text.into(),
            ..Completion::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("{policy}: backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable {
        policy: String,
        attempts: u32,
        message: String,
    },
    #[error("{policy}: output failed to parse twice ({error}): {raw:?}")]
    PersistentFormatViolation {
        policy: String,
        raw: String,
        error: ProtocolError,
    },
    #[error("{policy}: {role} may not produce <{action}>")]
    RoleViolation {
        policy: String,
        role: Role,
        action: ActionKind,
    },
    #[error("{policy}: script has no {role} turn #{index}")]
    ScriptExhausted { policy: String, role: Role, index: usize },
    #[error("{policy}: no trace entry for request {key}")]
    TraceMiss { policy: String, key: String },
    #[error("{policy}: configured for {expected} turns, asked for a {got} turn")]
    WrongRole { policy: String, expected: Role, got: Role },
    #[error("{0}")]
    Config(String),
}

/// A turn generator. Implementations must be deterministic given their
/// configuration and the context, except for live backends.
pub trait AgentPolicy: Send + Sync {
    fn descriptor(&self) -> &PolicyDescriptor;

    /// Produces raw turn text. `rejected` carries the previous output when
    /// the caller is asking for a format repair.
    fn complete(&self, ctx: &TurnContext, rejected: Option<&str>) -> Result<Completion, AgentError>;

    fn name(&self) -> &str {
        &self.descriptor().name
    }

    /// Whether turns from this policy carry backend latency.
    fn reports_latency(&self) -> bool {
        false
    }
}

fn sum_usage(a: Option<TokenUsage>, b: Option<TokenUsage>) -> Option<TokenUsage> {
    match (a, b) {
        (None, None) => None,
        (a, b) => {
            let (a, b) = (a.unwrap_or_default(), b.unwrap_or_default());
            Some(TokenUsage {
                prompt_tokens: a.prompt_tokens + b.prompt_tokens,
                completion_tokens: a.completion_tokens + b.completion_tokens,
            })
        }
    }
}

/// Calls the policy, parses its output, re-prompts once on a format
/// violation and checks role legality.
pub fn generate_turn(policy: &dyn AgentPolicy, ctx: &TurnContext) -> Result<RecordedTurn, AgentError> {
    let role = ctx.role();
    let first = policy.complete(ctx, None)?;
    let (turn, completion, reprompted) = match parse_turn(&first.text, role) {
        Ok(turn) => (turn, first, false),
        Err(_) => {
            log::debug!("{}: format violation, re-prompting", policy.name());
            let second = policy.complete(ctx, Some(&first.text))?;
            let turn = parse_turn(&second.text, role).map_err(|error| AgentError::PersistentFormatViolation {
                policy: policy.name().to_string(),
                raw: second.text.clone(),
                error,
            })?;
            let merged = Completion {
                latency_ms: match (first.latency_ms, second.latency_ms) {
                    (None, None) => None,
                    (a, b) => Some(a.unwrap_or(0) + b.unwrap_or(0)),
                },
                retry_count: first.retry_count + second.retry_count,
                usage: sum_usage(first.usage, second.usage),
                text: second.text,
            };
            (turn, merged, true)
        }
    };
    if !turn.action.is_legal_for(role) {
        return Err(AgentError::RoleViolation {
            policy: policy.name().to_string(),
            role,
            action: turn.action,
        });
    }
    Ok(RecordedTurn {
        turn,
        meta: TurnMeta {
            policy: policy.name().to_string(),
            generated: true,
            latency_ms: if policy.reports_latency() {
                completion.latency_ms
            } else {
                None
            },
            retry_count: completion.retry_count,
            reprompted,
            usage: completion.usage,
        },
    })
}

/// Per-turn seed derived from the run seed, the dialogue and the turn index.
pub fn derive_seed(seed: u64, dialogue_id: &str, turn_index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((dialogue_id.len() as u64).to_le_bytes());
    h.update(dialogue_id.as_bytes());
    h.update((turn_index as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Serializable policy description, as stored in policy spec files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicySpec {
    /// Fixed list of raw turns, replayed in order for every dialogue.
    Queue {
        #[serde(default)]
        name: Option<String>,
        turns: Vec<String>,
    },
    RuleUser {
        #[serde(default)]
        name: Option<String>,
        accept: AcceptRule,
    },
    RuleRecommender {
        #[serde(default)]
        name: Option<String>,
        candidates: Vec<String>,
        #[serde(default)]
        order: RecOrder,
        #[serde(default)]
        inquire_first: bool,
    },
    Http(CompletionEndpointConfig),
    TraceReplay {
        #[serde(default)]
        name: Option<String>,
        path: PathBuf,
    },
}

impl PolicySpec {
    pub fn build(&self, role: Role) -> Result<Box<dyn AgentPolicy>, AgentError> {
        Ok(match self {
            PolicySpec::Queue { name, turns } => Box::new(ScriptedQueue::new(
                name.clone().unwrap_or_else(|| format!("queue-{role}")),
                role,
                turns.clone(),
            )),
            PolicySpec::RuleUser { name, accept } => {
                if role != Role::User {
                    return Err(AgentError::Config("rule-user policies play the user role".into()));
                }
                Box::new(RuleUser::new(
                    name.clone().unwrap_or_else(|| "rule-user".into()),
                    accept.clone(),
                ))
            }
            PolicySpec::RuleRecommender {
                name,
                candidates,
                order,
                inquire_first,
            } => {
                if role != Role::Recommender {
                    return Err(AgentError::Config(
                        "rule-recommender policies play the recommender role".into(),
                    ));
                }
                Box::new(RuleRecommender::new(
                    name.clone().unwrap_or_else(|| "rule-recommender".into()),
                    candidates.clone(),
                    *order,
                    *inquire_first,
                )?)
            }
            PolicySpec::Http(config) => Box::new(HttpPolicy::new(config.clone())?),
            PolicySpec::TraceReplay { name, path } => Box::new(TraceReplayPolicy::load(
                name.clone().unwrap_or_else(|| format!("trace:{}", path.display())),
                path,
            )?),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<PolicySpec, AgentError> {
        let text = std::fs::read_to_string(path).map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))
    }
}
