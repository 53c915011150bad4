//! Live chat: a human plays the user against a configured recommender.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Mutex;

use crsim_core::agents::{derive_seed, generate_turn, AgentPolicy, PolicySpec, RoleView, TurnContext};
use crsim_core::io::{write_jsonl, Header};
use crsim_core::persona::{GroundTruth, Persona};
use crsim_core::protocol::{ActionKind, Role, Turn};
use crsim_core::record::{
    last_recommended_title, DialogueOutcome, DialogueRecord, PolicyNames, RecordMode, RecordedTurn, Termination,
    TurnMeta,
};

use crate::bench::TurnView;

/// Policy name stored for the human side of a chat record.
pub const HUMAN_POLICY: &str = "human";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChatError {
    #[error("unknown chat session `{0}`")]
    UnknownSession(String),
    #[error("no recommender named `{0}` is configured")]
    UnknownRecommender(String),
    #[error("chat session `{0}` has ended")]
    SessionEnded(String),
    #[error("the user may not produce <{0}>")]
    IllegalAction(ActionKind),
    #[error("invalid turn: {0}")]
    InvalidTurn(String),
    #[error("recommender backend failed: {0}")]
    BackendUnavailable(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartChat {
    pub recommender: String,
    pub persona: Persona,
    #[serde(default)]
    pub ground_truth: Option<GroundTruth>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanTurn {
    pub text: String,
    /// Defaults to `feedback`; ignored when `accept` is set.
    #[serde(default)]
    pub action: Option<ActionKind>,
    #[serde(default)]
    pub accept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatState {
    pub chat_id: String,
    pub recommender: String,
    pub turns: Vec<TurnView>,
    pub max_turns: usize,
    pub closed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminated_by: Option<Termination>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted_title: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub user_turn: TurnView,
    /// Absent when the human turn ended the session.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommender_turn: Option<TurnView>,
    pub n_turns: usize,
    pub max_turns: usize,
    pub closed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminated_by: Option<Termination>,
}

fn view(t: &Turn) -> TurnView {
    TurnView {
        role: t.role,
        action: t.action,
        text: t.response_text.clone(),
        title: t.title().map(str::to_string),
    }
}

struct ChatSession {
    chat_id: String,
    recommender: String,
    policy: Arc<dyn AgentPolicy>,
    persona: Persona,
    ground_truth: GroundTruth,
    seed: u64,
    turns: Vec<RecordedTurn>,
    outcome: Option<DialogueOutcome>,
}

impl ChatSession {
    fn record(&self) -> Option<DialogueRecord> {
        Some(DialogueRecord {
            dialogue_id: self.chat_id.clone(),
            mode: RecordMode::Chat,
            persona: self.persona.clone(),
            ground_truth: self.ground_truth.clone(),
            policies: PolicyNames {
                user: HUMAN_POLICY.into(),
                recommender: self.policy.name().to_string(),
            },
            turns: self.turns.clone(),
            outcome: self.outcome.clone()?,
            seed: self.seed,
            reference: None,
        })
    }

    fn state(&self, max_turns: usize) -> ChatState {
        ChatState {
            chat_id: self.chat_id.clone(),
            recommender: self.recommender.clone(),
            turns: self.turns.iter().map(|t| view(&t.turn)).collect(),
            max_turns,
            closed: self.outcome.is_some(),
            terminated_by: self.outcome.as_ref().map(|o| o.terminated_by),
            accepted_title: self.outcome.as_ref().and_then(|o| o.accepted_title.clone()),
        }
    }
}

/// Open and finished chat sessions. Finished transcripts are written to
/// `<data_dir>/chats/<chat_id>.jsonl`.
pub struct ChatStore {
    dir: PathBuf,
    max_turns: usize,
    policies: BTreeMap<String, Arc<dyn AgentPolicy>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<ChatSession>>>>,
}

impl ChatStore {
    pub fn new(
        data_dir: &Path,
        recommenders: &BTreeMap<String, PolicySpec>,
        max_turns: usize,
    ) -> Result<ChatStore, ChatError> {
        let mut policies = BTreeMap::new();
        for (name, spec) in recommenders {
            let policy = spec
                .build(Role::Recommender)
                .map_err(|e| ChatError::InvalidTurn(format!("recommender `{name}`: {e}")))?;
            policies.insert(name.clone(), Arc::from(policy));
        }
        Ok(ChatStore::with_policies(data_dir, policies, max_turns))
    }

    pub fn with_policies(
        data_dir: &Path,
        policies: BTreeMap<String, Arc<dyn AgentPolicy>>,
        max_turns: usize,
    ) -> ChatStore {
        ChatStore {
            dir: data_dir.join("chats"),
            max_turns,
            policies,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn recommenders(&self) -> Vec<String> {
        self.policies.keys().cloned().collect()
    }

    pub fn max_turns(&self) -> usize {
        self.max_turns
    }

    pub fn record_path(&self, chat_id: &str) -> PathBuf {
        self.dir.join(format!("{chat_id}.jsonl"))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<ChatSession>>, ChatError> {
        self.sessions
            .read()
            .expect("chat map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ChatError::UnknownSession(id.to_string()))
    }

    pub fn start(&self, req: StartChat) -> Result<ChatState, ChatError> {
        let policy = self
            .policies
            .get(&req.recommender)
            .cloned()
            .ok_or_else(|| ChatError::UnknownRecommender(req.recommender.clone()))?;
        let chat_id = format!("chat-{:016x}", rand::random::<u64>());
        let session = ChatSession {
            chat_id: chat_id.clone(),
            recommender: req.recommender,
            policy,
            persona: req.persona,
            ground_truth: req.ground_truth.unwrap_or(GroundTruth {
                item_id: String::new(),
                title: String::new(),
            }),
            seed: req.seed.unwrap_or_else(rand::random),
            turns: Vec::new(),
            outcome: None,
        };
        let state = session.state(self.max_turns);
        self.sessions
            .write()
            .expect("chat map poisoned")
            .insert(chat_id, Arc::new(Mutex::new(session)));
        Ok(state)
    }

    pub async fn state(&self, id: &str) -> Result<ChatState, ChatError> {
        let s = self.session(id)?;
        let s = s.lock().await;
        Ok(s.state(self.max_turns))
    }

    /// The persisted record of a finished chat.
    pub async fn record(&self, id: &str) -> Result<Option<DialogueRecord>, ChatError> {
        let s = self.session(id)?;
        let s = s.lock().await;
        Ok(s.record())
    }

    fn close(&self, s: &mut ChatSession, terminated_by: Termination) -> Result<(), ChatError> {
        let accepted_title = match terminated_by {
            Termination::Accept => last_recommended_title(s.turns.iter().map(|t| &t.turn)),
            _ => None,
        };
        s.outcome = Some(DialogueOutcome {
            accepted_title,
            terminated_by,
            error: None,
        });
        let record = s.record().expect("outcome just set");
        let header = Header::new("chat", &s.recommender, Some(s.seed));
        write_jsonl(&self.record_path(&s.chat_id), Some(&header), [&record])
            .map_err(|e| ChatError::Storage(e.to_string()))
    }

    /// Appends one human turn and, unless it ends the chat, one recommender
    /// turn. A backend failure leaves the transcript untouched.
    pub async fn step(&self, id: &str, human: HumanTurn) -> Result<ChatReply, ChatError> {
        let handle = self.session(id)?;
        let mut s = handle.lock().await;
        if s.outcome.is_some() {
            return Err(ChatError::SessionEnded(id.to_string()));
        }
        let action = if human.accept {
            ActionKind::Accept
        } else {
            human.action.unwrap_or(ActionKind::Feedback)
        };
        if !action.is_legal_for(Role::User) {
            return Err(ChatError::IllegalAction(action));
        }
        if action != ActionKind::Accept && human.text.trim().is_empty() {
            return Err(ChatError::InvalidTurn("empty message".into()));
        }
        let user_turn =
            Turn::plain(Role::User, action, human.text.trim()).map_err(|e| ChatError::InvalidTurn(e.to_string()))?;
        let user_view = view(&user_turn);
        let user_recorded = RecordedTurn {
            turn: user_turn,
            meta: TurnMeta::human(),
        };

        let ends = action == ActionKind::Accept || s.turns.len() + 1 >= self.max_turns;
        if ends {
            s.turns.push(user_recorded);
            let by = if action == ActionKind::Accept {
                Termination::Accept
            } else {
                Termination::MaxTurns
            };
            self.close(&mut s, by)?;
            return Ok(ChatReply {
                user_turn: user_view,
                recommender_turn: None,
                n_turns: s.turns.len(),
                max_turns: self.max_turns,
                closed: true,
                terminated_by: Some(by),
            });
        }

        let mut history: Vec<Turn> = s.turns.iter().map(|t| t.turn.clone()).collect();
        history.push(user_recorded.turn.clone());
        let policy = s.policy.clone();
        let public = s.persona.public();
        let chat_id = s.chat_id.clone();
        let seed = derive_seed(s.seed, &chat_id, history.len());
        let generated = tokio::task::spawn_blocking(move || {
            let ctx = TurnContext {
                view: RoleView::Recommender(&public),
                history: &history,
                dialogue_id: &chat_id,
                seed,
            };
            generate_turn(policy.as_ref(), &ctx)
        })
        .await
        .map_err(|e| ChatError::BackendUnavailable(e.to_string()))?
        .map_err(|e| ChatError::BackendUnavailable(e.to_string()))?;

        let rec_view = view(&generated.turn);
        s.turns.push(user_recorded);
        s.turns.push(generated);
        let mut terminated_by = None;
        if s.turns.len() >= self.max_turns {
            self.close(&mut s, Termination::MaxTurns)?;
            terminated_by = Some(Termination::MaxTurns);
        }
        Ok(ChatReply {
            user_turn: user_view,
            recommender_turn: Some(rec_view),
            n_turns: s.turns.len(),
            max_turns: self.max_turns,
            closed: terminated_by.is_some(),
            terminated_by,
        })
    }
}
