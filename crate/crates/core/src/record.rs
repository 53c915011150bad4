//! Dialogue records: the interchange format between the engine, metrics,
//! the evaluation server and the UI. One record per line.

use serde::{Deserialize, Serialize};

use crate::persona::{GroundTruth, Persona};
use crate::protocol::{Role, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Provenance of one turn in a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnMeta {
    /// Policy descriptor name; `recorded` for played-back turns, `human` for chat.
    pub policy: String,
    /// False for turns copied verbatim from a recording.
    pub generated: bool,
    /// Backend latency; absent for policies that do not call a backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
    #[serde(default)]
    pub retry_count: u32,
    #[serde(default)]
    pub reprompted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
}

impl TurnMeta {
    pub fn recorded() -> TurnMeta {
        TurnMeta {
            policy: "recorded".into(),
            generated: false,
            latency_ms: None,
            retry_count: 0,
            reprompted: false,
            usage: None,
        }
    }

    pub fn human() -> TurnMeta {
        TurnMeta {
            policy: "human".into(),
            generated: false,
            ..TurnMeta::recorded()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedTurn {
    pub turn: Turn,
    pub meta: TurnMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The user accepted a recommendation.
    Accept,
    /// The turn cap was reached.
    MaxTurns,
    /// A replay ran out of recorded turns.
    Exhausted,
    /// A single-turn sample was produced.
    Completed,
    /// An agent failed; the partial record is kept.
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueOutcome {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted_title: Option<String>,
    pub terminated_by: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Which protocol produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordMode {
    /// Both sides generated live.
    Simulated,
    /// Recommender turns played back, user turns generated.
    Replay,
    /// Recorded prefix plus one generated user turn.
    UserSingleTurn,
    /// Recorded prefix plus one generated recommender turn at the position
    /// where the ground truth was originally recommended.
    RecAtGroundTruth,
    /// A human playing the user against a recommender policy.
    Chat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyNames {
    pub user: String,
    pub recommender: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub dialogue_id: String,
    pub mode: RecordMode,
    pub persona: Persona,
    pub ground_truth: GroundTruth,
    pub policies: PolicyNames,
    pub turns: Vec<RecordedTurn>,
    pub outcome: DialogueOutcome,
    pub seed: u64,
    /// Recorded reference text for single-turn samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

impl DialogueRecord {
    pub fn plain_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().map(|t| &t.turn)
    }

    /// Generated turns of one role.
    pub fn generated_turns(&self, role: Role) -> impl Iterator<Item = &Turn> {
        self.turns
            .iter()
            .filter(move |t| t.meta.generated && t.turn.role == role)
            .map(|t| &t.turn)
    }

    pub fn is_error(&self) -> bool {
        self.outcome.terminated_by == Termination::Error
    }
}

/// Most recent recommended title among `turns`.
pub fn last_recommended_title<'a>(turns: impl IntoIterator<Item = &'a Turn>) -> Option<String> {
    turns
        .into_iter()
        .filter(|t| t.is_recommend())
        .last()
        .and_then(|t| t.title().map(str::to_string))
}
