//! Dialogue loops: two live policies talking, multi-turn replay
//! against recorded recommender turns, and single-turn sampling.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{generate_turn, AgentError, AgentPolicy, RoleView, TurnContext};
use crate::corpus::SourceDialogue;
use crate::metrics::titles::{titles_match, TitleMode};
use crate::parallel::ordered_map;
use crate::persona::{build_persona, GroundTruth, Persona, PersonaError, Redaction};
use crate::prompt::rec_context;
use crate::protocol::{parse_turn, ProtocolError, Role, Turn};
use crate::record::{
    last_recommended_title, DialogueOutcome, DialogueRecord, PolicyNames, RecordMode, RecordedTurn, Termination,
    TurnMeta,
};

pub const DEFAULT_MAX_TURNS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Cap on total turns, both roles counted.
    pub max_turns: usize,
    pub seed: u64,
    /// Dialogues in flight at once.
    pub jobs: usize,
    /// Replay: keep generating user turns after the first accept.
    pub score_all_turns: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            max_turns: DEFAULT_MAX_TURNS,
            seed: 0,
            jobs: 1,
            score_all_turns: false,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.max_turns < 2 {
            return Err(EngineError::Config(format!(
                "max_turns must be at least 2, got {}",
                self.max_turns
            )));
        }
        if self.jobs == 0 {
            return Err(EngineError::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("{0}")]
    Config(String),
    #[error("dialogue {dialogue_id}: turn {index} is not a user turn")]
    IndexNotUserTurn { dialogue_id: String, index: usize },
    #[error("dialogue {dialogue_id}: turn {index} out of range ({len} turns)")]
    IndexOutOfRange {
        dialogue_id: String,
        index: usize,
        len: usize,
    },
    #[error("dialogue {dialogue_id}: the ground truth is never recommended in the recording")]
    NoGroundTruthTurn { dialogue_id: String },
    #[error("dialogue {dialogue_id}: {source}")]
    Persona {
        dialogue_id: String,
        #[source]
        source: PersonaError,
    },
    #[error("dialogue {dialogue_id}: recorded turn {index} does not parse: {source}")]
    Recording {
        dialogue_id: String,
        index: usize,
        #[source]
        source: ProtocolError,
    },
}

/// A persona paired with its hidden ground truth, ready to simulate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationTask {
    pub dialogue_id: String,
    pub persona: Persona,
    pub ground_truth: GroundTruth,
}

impl SimulationTask {
    pub fn from_source(source: &SourceDialogue) -> Result<SimulationTask, EngineError> {
        let persona = build_persona(&source.persona, &source.ground_truth, Redaction::Enabled).map_err(|e| {
            EngineError::Persona {
                dialogue_id: source.dialogue_id.clone(),
                source: e,
            }
        })?;
        Ok(SimulationTask {
            dialogue_id: source.dialogue_id.clone(),
            persona,
            ground_truth: source.ground_truth.clone(),
        })
    }
}

/// One persona preamble as handed to the recommender side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditedContext {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub context: String,
}

/// Collects every recommender-side persona context the engine renders, for
/// offline leak scanning.
#[derive(Debug, Default)]
pub struct ContextAudit {
    entries: Mutex<Vec<AuditedContext>>,
}

impl ContextAudit {
    pub fn new() -> Self {
        ContextAudit::default()
    }

    fn push(&self, dialogue_id: &str, turn_index: usize, context: String) {
        self.entries
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(AuditedContext {
                dialogue_id: dialogue_id.to_string(),
                turn_index,
                context,
            });
    }

    /// Entries sorted by dialogue then turn, independent of scheduling.
    pub fn into_entries(self) -> Vec<AuditedContext> {
        let mut v = self.entries.into_inner().unwrap_or_else(|p| p.into_inner());
        v.sort_by(|a, b| (&a.dialogue_id, a.turn_index).cmp(&(&b.dialogue_id, b.turn_index)));
        v
    }
}

struct Rollout<'a> {
    task: &'a SimulationTask,
    seed: u64,
    audit: Option<&'a ContextAudit>,
    turns: Vec<RecordedTurn>,
    plain: Vec<Turn>,
}

impl<'a> Rollout<'a> {
    fn new(task: &'a SimulationTask, seed: u64, audit: Option<&'a ContextAudit>) -> Self {
        Rollout {
            task,
            seed,
            audit,
            turns: Vec::new(),
            plain: Vec::new(),
        }
    }

    fn generate(&mut self, policy: &dyn AgentPolicy, role: Role) -> Result<&Turn, AgentError> {
        let public;
        let view = match role {
            Role::User => RoleView::User(&self.task.persona),
            Role::Recommender => {
                public = self.task.persona.public();
                if let Some(audit) = self.audit {
                    audit.push(&self.task.dialogue_id, self.plain.len(), rec_context(&public));
                }
                RoleView::Recommender(&public)
            }
        };
        let ctx = TurnContext {
            view,
            history: &self.plain,
            dialogue_id: &self.task.dialogue_id,
            seed: self.seed,
        };
        let t = generate_turn(policy, &ctx)?;
        self.push(t);
        Ok(self.plain.last().expect("just pushed"))
    }

    fn push(&mut self, t: RecordedTurn) {
        self.plain.push(t.turn.clone());
        self.turns.push(t);
    }

    fn finish(
        self,
        mode: RecordMode,
        policies: PolicyNames,
        terminated_by: Termination,
        error: Option<String>,
        reference: Option<String>,
    ) -> DialogueRecord {
        let accepted_title = match terminated_by {
            Termination::Accept => accepted_title(&self.plain),
            _ => None,
        };
        DialogueRecord {
            dialogue_id: self.task.dialogue_id.clone(),
            mode,
            persona: self.task.persona.clone(),
            ground_truth: self.task.ground_truth.clone(),
            policies,
            turns: self.turns,
            outcome: DialogueOutcome {
                accepted_title,
                terminated_by,
                error,
            },
            seed: self.seed,
            reference,
        }
    }
}

/// Title of the recommendation preceding the first user accept.
fn accepted_title(turns: &[Turn]) -> Option<String> {
    let first_accept = turns.iter().position(|t| t.role == Role::User && t.is_accept())?;
    last_recommended_title(&turns[..first_accept])
}

fn names(user: Option<&dyn AgentPolicy>, rec: Option<&dyn AgentPolicy>) -> PolicyNames {
    let name = |p: Option<&dyn AgentPolicy>| p.map_or_else(|| "recorded".to_string(), |p| p.name().to_string());
    PolicyNames {
        user: name(user),
        recommender: name(rec),
    }
}

/// Alternates user and recommender turns, user first, until the user
/// accepts or `max_turns` turns exist. Agent failures end the dialogue with
/// `terminated_by = error` and keep the partial transcript.
pub fn run_dialogue(
    user: &dyn AgentPolicy,
    rec: &dyn AgentPolicy,
    task: &SimulationTask,
    config: &SimulationConfig,
    audit: Option<&ContextAudit>,
) -> DialogueRecord {
    let policies = names(Some(user), Some(rec));
    let mut r = Rollout::new(task, config.seed, audit);
    while r.plain.len() < config.max_turns {
        let role = if r.plain.len().is_multiple_of(2) {
            Role::User
        } else {
            Role::Recommender
        };
        let policy = if role == Role::User { user } else { rec };
        match r.generate(policy, role) {
            Ok(t) if role == Role::User && t.is_accept() => {
                return r.finish(RecordMode::Simulated, policies, Termination::Accept, None, None)
            }
            Ok(_) => {}
            Err(e) => {
                return r.finish(
                    RecordMode::Simulated,
                    policies,
                    Termination::Error,
                    Some(e.to_string()),
                    None,
                )
            }
        }
    }
    r.finish(RecordMode::Simulated, policies, Termination::MaxTurns, None, None)
}

fn parse_recording(source: &SourceDialogue) -> Result<Vec<Turn>, EngineError> {
    source
        .turns
        .iter()
        .enumerate()
        .map(|(i, t)| {
            parse_turn(&t.text, t.role).map_err(|e| EngineError::Recording {
                dialogue_id: source.dialogue_id.clone(),
                index: i,
                source: e,
            })
        })
        .collect()
}

fn recorded(turn: Turn) -> RecordedTurn {
    RecordedTurn {
        turn,
        meta: TurnMeta::recorded(),
    }
}

/// Plays the recorded recommender turns back verbatim and generates the
/// user side. Stops at the first accept unless `score_all_turns` is set, or
/// when the recording runs out.
pub fn replay_multi_turn(
    user: &dyn AgentPolicy,
    source: &SourceDialogue,
    config: &SimulationConfig,
) -> Result<DialogueRecord, EngineError> {
    let task = SimulationTask::from_source(source)?;
    let recording = parse_recording(source)?;
    let policies = names(Some(user), None);
    let mut r = Rollout::new(&task, config.seed, None);
    let mut accepted = false;
    let rec_turns = recording.into_iter().filter(|t| t.role == Role::Recommender);
    let finish = |r: Rollout, accepted: bool, err: Option<AgentError>| match err {
        Some(e) => r.finish(
            RecordMode::Replay,
            policies.clone(),
            Termination::Error,
            Some(e.to_string()),
            None,
        ),
        None if accepted => r.finish(RecordMode::Replay, policies.clone(), Termination::Accept, None, None),
        None => r.finish(RecordMode::Replay, policies.clone(), Termination::Exhausted, None, None),
    };
    for rec_turn in rec_turns {
        if r.plain.last().is_none_or(|t| t.role != Role::User) {
            match r.generate(user, Role::User) {
                Ok(t) if t.is_accept() => {
                    accepted = true;
                    if !config.score_all_turns {
                        return Ok(finish(r, true, None));
                    }
                }
                Ok(_) => {}
                Err(e) => return Ok(finish(r, accepted, Some(e))),
            }
        }
        r.push(recorded(rec_turn));
    }
    if r.plain.last().is_some_and(|t| t.role == Role::Recommender) {
        match r.generate(user, Role::User) {
            Ok(t) if t.is_accept() => accepted = true,
            Ok(_) => {}
            Err(e) => return Ok(finish(r, accepted, Some(e))),
        }
    }
    Ok(finish(r, accepted, None))
}

/// Generates one user turn at recorded position `index` (0-based), given
/// the recorded prefix. The recorded turn is kept as the record's reference.
pub fn generate_single_turn(
    user: &dyn AgentPolicy,
    source: &SourceDialogue,
    index: usize,
    config: &SimulationConfig,
) -> Result<DialogueRecord, EngineError> {
    let recording = parse_recording(source)?;
    let target = recording.get(index).ok_or_else(|| EngineError::IndexOutOfRange {
        dialogue_id: source.dialogue_id.clone(),
        index,
        len: recording.len(),
    })?;
    if target.role != Role::User {
        return Err(EngineError::IndexNotUserTurn {
            dialogue_id: source.dialogue_id.clone(),
            index,
        });
    }
    let reference = target.response_text.clone();
    let task = SimulationTask::from_source(source)?;
    Ok(single_turn(
        user,
        Role::User,
        &task,
        recording,
        index,
        reference,
        config,
        None,
    ))
}

/// Generates the recommender turn at the position where the recording
/// first recommends the ground truth.
pub fn generate_rec_at_ground_truth(
    rec: &dyn AgentPolicy,
    source: &SourceDialogue,
    config: &SimulationConfig,
    audit: Option<&ContextAudit>,
) -> Result<DialogueRecord, EngineError> {
    let recording = parse_recording(source)?;
    let index = ground_truth_position(&recording, &source.ground_truth.title).ok_or_else(|| {
        EngineError::NoGroundTruthTurn {
            dialogue_id: source.dialogue_id.clone(),
        }
    })?;
    let reference = recording[index].response_text.clone();
    let task = SimulationTask::from_source(source)?;
    Ok(single_turn(
        rec,
        Role::Recommender,
        &task,
        recording,
        index,
        reference,
        config,
        audit,
    ))
}

/// Index of the first recorded recommendation of the ground-truth title.
pub fn ground_truth_position(recording: &[Turn], gt_title: &str) -> Option<usize> {
    recording.iter().position(|t| {
        t.role == Role::Recommender
            && t.is_recommend()
            && titles_match(t.title().unwrap_or_default(), gt_title, TitleMode::Strict)
    })
}

#[allow(clippy::too_many_arguments)]
fn single_turn(
    policy: &dyn AgentPolicy,
    role: Role,
    task: &SimulationTask,
    mut recording: Vec<Turn>,
    index: usize,
    reference: String,
    config: &SimulationConfig,
    audit: Option<&ContextAudit>,
) -> DialogueRecord {
    recording.truncate(index);
    let (mode, policies) = match role {
        Role::User => (RecordMode::UserSingleTurn, names(Some(policy), None)),
        Role::Recommender => (RecordMode::RecAtGroundTruth, names(None, Some(policy))),
    };
    let mut r = Rollout::new(task, config.seed, audit);
    for t in recording {
        r.push(recorded(t));
    }
    match r.generate(policy, role) {
        Ok(_) => r.finish(mode, policies, Termination::Completed, None, Some(reference)),
        Err(e) => r.finish(mode, policies, Termination::Error, Some(e.to_string()), Some(reference)),
    }
}

/// Live dialogues over many personas, `config.jobs` at a time. Output order
/// follows input order.
pub fn simulate_batch(
    user: &dyn AgentPolicy,
    rec: &dyn AgentPolicy,
    tasks: Vec<SimulationTask>,
    config: &SimulationConfig,
    audit: Option<&ContextAudit>,
) -> Vec<DialogueRecord> {
    ordered_map(tasks, config.jobs, |_, task| {
        run_dialogue(user, rec, &task, config, audit)
    })
}

pub fn replay_batch(
    user: &dyn AgentPolicy,
    sources: Vec<SourceDialogue>,
    config: &SimulationConfig,
) -> Vec<Result<DialogueRecord, EngineError>> {
    ordered_map(sources, config.jobs, |_, s| replay_multi_turn(user, &s, config))
}

/// Single-turn samples at every recorded user turn of every dialogue.
pub fn single_turn_batch(
    user: &dyn AgentPolicy,
    sources: Vec<SourceDialogue>,
    config: &SimulationConfig,
) -> Vec<Result<DialogueRecord, EngineError>> {
    let jobs: Vec<(SourceDialogue, usize)> = sources
        .into_iter()
        .flat_map(|s| {
            let idx: Vec<usize> = (0..s.turns.len()).filter(|&i| s.turns[i].role == Role::User).collect();
            idx.into_iter().map(move |i| (s.clone(), i))
        })
        .collect();
    ordered_map(jobs, config.jobs, |_, (s, i)| generate_single_turn(user, &s, i, config))
}

pub fn rec_at_ground_truth_batch(
    rec: &dyn AgentPolicy,
    sources: Vec<SourceDialogue>,
    config: &SimulationConfig,
    audit: Option<&ContextAudit>,
) -> Vec<Result<DialogueRecord, EngineError>> {
    ordered_map(sources, config.jobs, |_, s| {
        generate_rec_at_ground_truth(rec, &s, config, audit)
    })
}
