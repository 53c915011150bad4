//! Request/response traces and offline replay from them.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::http::{build_messages, ChatMessage};
use super::{AgentError, AgentPolicy, Completion, PolicyDescriptor, TurnContext};
use crate::record::TokenUsage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// [`request_key`] of `messages`.
    pub key: String,
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
}

/// SHA-256 over the JSON encoding of the message list.
pub fn request_key(messages: &[ChatMessage]) -> String {
    let json = serde_json::to_vec(messages).expect("messages serialize");
    hex::encode(Sha256::digest(&json))
}

/// Answers requests from a trace file. The first entry per key wins.
pub struct TraceReplayPolicy {
    descriptor: PolicyDescriptor,
    entries: HashMap<String, TraceEntry>,
}

impl TraceReplayPolicy {
    pub fn new(name: impl Into<String>, entries: impl IntoIterator<Item = TraceEntry>) -> Self {
        let mut map = HashMap::new();
        for e in entries {
            map.entry(e.key.clone()).or_insert(e);
        }
        TraceReplayPolicy {
            descriptor: PolicyDescriptor {
                name: name.into(),
                kind: "trace-replay".into(),
                params: None,
            },
            entries: map,
        }
    }

    pub fn load(name: impl Into<String>, path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path).map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: TraceEntry = serde_json::from_str(line)
                .map_err(|e| AgentError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            entries.push(e);
        }
        Ok(TraceReplayPolicy::new(name, entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl AgentPolicy for TraceReplayPolicy {
    fn descriptor(&self) -> &PolicyDescriptor {
        &self.descriptor
    }

    fn complete(&self, ctx: &TurnContext, rejected: Option<&str>) -> Result<Completion, AgentError> {
        let key = request_key(&build_messages(ctx, rejected));
        let entry = self.entries.get(&key).ok_or_else(|| AgentError::TraceMiss {
            policy: self.descriptor.name.clone(),
            key,
        })?;
        Ok(Completion {
            text: entry.response.clone(),
            latency_ms: None,
            retry_count: 0,
            usage: entry.usage,
        })
    }
}
