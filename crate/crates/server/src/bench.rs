//! Blinded pairwise evaluation: sessions, judgments, de-blinded results.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crsim_core::io::{atomic_write, read_jsonl};
use crsim_core::metrics::winratio::{win_ratio, Judgment, Winner, ALPHA};
use crsim_core::persona::HistoryMovie;
use crsim_core::protocol::{ActionKind, Role};
use crsim_core::record::DialogueRecord;

/// The six judging criteria, in presentation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    UserControl,
    Expertise,
    SpecificityOfPreferences,
    Relevance,
    ConversationalFlow,
    Consistency,
}

impl Criterion {
    pub const ALL: [Criterion; 6] = [
        Criterion::UserControl,
        Criterion::Expertise,
        Criterion::SpecificityOfPreferences,
        Criterion::Relevance,
        Criterion::ConversationalFlow,
        Criterion::Consistency,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Criterion::UserControl => "user control",
            Criterion::Expertise => "expertise",
            Criterion::SpecificityOfPreferences => "specificity of preferences",
            Criterion::Relevance => "relevance",
            Criterion::ConversationalFlow => "conversational flow",
            Criterion::Consistency => "consistency",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Criterion {
    type Err = BenchError;

    /// Accepts the label in any case, with spaces, hyphens or underscores.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .chars()
            .map(|c| {
                if c == '-' || c == '_' {
                    ' '
                } else {
                    c.to_ascii_lowercase()
                }
            })
            .collect();
        Criterion::ALL
            .into_iter()
            .find(|c| c.label() == key)
            .ok_or_else(|| BenchError::InvalidCriterion(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Left,
    Right,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("n_pairs must be at least 1")]
    InvalidPairCount,
    #[error("requested {requested} pairs but only {available} personas appear in both record files")]
    InsufficientMatchedPairs { requested: usize, available: usize },
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("`{0}` is not one of the six criteria")]
    InvalidCriterion(String),
    #[error("pair index {index} out of range (session has {n_pairs} pairs)")]
    InvalidPairIndex { index: usize, n_pairs: usize },
    #[error("no judgments recorded")]
    NoJudgments,
    #[error("{0}")]
    Records(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

/// One evaluated pair with its hidden side assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAssignment {
    pub persona_id: String,
    pub dialogue_a: DialogueRecord,
    pub dialogue_b: DialogueRecord,
    /// True when system A's dialogue is shown on the left.
    pub a_on_left: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSession {
    pub session_id: String,
    pub judge_id: String,
    pub system_a: String,
    pub system_b: String,
    pub seed: u64,
    pub created_unix: u64,
    pub pairs: Vec<PairAssignment>,
}

fn by_persona(records: &[DialogueRecord]) -> Vec<(&str, &DialogueRecord)> {
    let mut seen = HashSet::new();
    records
        .iter()
        .filter(|r| seen.insert(r.persona.user_id.as_str()))
        .map(|r| (r.persona.user_id.as_str(), r))
        .collect()
}

/// Samples `n_pairs` persona-matched pairs and a random side assignment for
/// each, deterministically in `seed`. Only the first record per persona id
/// in each file takes part.
pub fn pair_records(
    a: &[DialogueRecord],
    b: &[DialogueRecord],
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<PairAssignment>, BenchError> {
    if n_pairs == 0 {
        return Err(BenchError::InvalidPairCount);
    }
    let b_index: HashMap<&str, &DialogueRecord> = by_persona(b).into_iter().collect();
    let mut matched: Vec<(&DialogueRecord, &DialogueRecord)> = by_persona(a)
        .into_iter()
        .filter_map(|(id, ra)| b_index.get(id).map(|rb| (ra, *rb)))
        .collect();
    if matched.len() < n_pairs {
        return Err(BenchError::InsufficientMatchedPairs {
            requested: n_pairs,
            available: matched.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    matched.shuffle(&mut rng);
    Ok(matched
        .into_iter()
        .take(n_pairs)
        .map(|(ra, rb)| PairAssignment {
            persona_id: ra.persona.user_id.clone(),
            dialogue_a: ra.clone(),
            dialogue_b: rb.clone(),
            a_on_left: rng.gen_bool(0.5),
        })
        .collect())
}

/// A turn as shown to judges: no policy names, ids or timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnView {
    pub role: Role,
    pub action: ActionKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaView {
    pub general_preferences: String,
    pub history: Vec<HistoryMovie>,
    pub target_attributes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionInfo {
    pub id: Criterion,
    pub label: String,
}

/// Judge-facing payload for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairView {
    pub session_id: String,
    pub pair_index: usize,
    pub n_pairs: usize,
    pub persona: PersonaView,
    pub left: Vec<TurnView>,
    pub right: Vec<TurnView>,
    pub criteria: Vec<CriterionInfo>,
    /// Current choices for this pair, so a reloaded page can resume.
    pub judgments: BTreeMap<Criterion, Choice>,
}

fn turn_views(record: &DialogueRecord) -> Vec<TurnView> {
    record
        .plain_turns()
        .map(|t| TurnView {
            role: t.role,
            action: t.action,
            text: t.response_text.clone(),
            title: t.title().map(str::to_string),
        })
        .collect()
}

pub fn criteria_info() -> Vec<CriterionInfo> {
    Criterion::ALL
        .iter()
        .map(|&c| CriterionInfo {
            id: c,
            label: c.label().to_string(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentEntry {
    /// Position in the session's log, from 0.
    pub seq: u64,
    pub session_id: String,
    pub pair_index: usize,
    pub criterion: Criterion,
    pub choice: Choice,
    pub judge_id: String,
    pub timestamp_ms: u64,
    /// `seq` of the entry this one supersedes, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replaces: Option<u64>,
}

/// Append-only judgment history; the latest entry per (pair, criterion)
/// is the effective one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JudgmentLog {
    entries: Vec<JudgmentEntry>,
}

impl JudgmentLog {
    pub fn entries(&self) -> &[JudgmentEntry] {
        &self.entries
    }

    pub fn effective(&self) -> BTreeMap<(usize, Criterion), &JudgmentEntry> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            out.insert((e.pair_index, e.criterion), e);
        }
        out
    }

    fn latest(&self, pair_index: usize, criterion: Criterion) -> Option<u64> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.pair_index == pair_index && e.criterion == criterion)
            .map(|e| e.seq)
    }
}

/// Maps effective judgments back to systems A and B.
pub fn deblind(session: &EvalSession, log: &JudgmentLog) -> Vec<(Criterion, Winner)> {
    log.effective()
        .into_iter()
        .map(|((pair, criterion), e)| {
            let a_left = session.pairs[pair].a_on_left;
            let winner = match (e.choice, a_left) {
                (Choice::Tie, _) => Winner::Tie,
                (Choice::Left, true) | (Choice::Right, false) => Winner::A,
                (Choice::Left, false) | (Choice::Right, true) => Winner::B,
            };
            (criterion, winner)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub criterion: Criterion,
    pub label: String,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    pub n: usize,
    /// Share of non-tie judgments won by system A; absent when undefined
    /// (no judgments, or ties only).
    pub ratio: Option<f64>,
    pub p_value: Option<f64>,
    /// p < alpha.
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsReport {
    pub sessions: Vec<String>,
    /// Absent when the aggregated sessions name different systems.
    pub system_a: Option<String>,
    pub system_b: Option<String>,
    pub test: String,
    pub alpha: f64,
    pub n_judgments: usize,
    pub expected_judgments: usize,
    pub complete: bool,
    pub criteria: Vec<CriterionReport>,
}

pub const TEST_NAME: &str = "exact two-sided binomial test against p = 0.5 on non-tie judgments";

pub fn results(sessions: &[(&EvalSession, &JudgmentLog)]) -> Result<ResultsReport, BenchError> {
    let mut judgments = Vec::new();
    for (s, log) in sessions {
        for (criterion, winner) in deblind(s, log) {
            judgments.push(Judgment {
                criterion: criterion.label().to_string(),
                winner,
            });
        }
    }
    if judgments.is_empty() {
        return Err(BenchError::NoJudgments);
    }
    let computed = win_ratio(&judgments);
    let criteria = Criterion::ALL
        .iter()
        .map(|&c| {
            let r = computed.iter().find(|r| r.criterion == c.label());
            CriterionReport {
                criterion: c,
                label: c.label().to_string(),
                wins_a: r.map_or(0, |r| r.wins_a),
                wins_b: r.map_or(0, |r| r.wins_b),
                ties: r.map_or(0, |r| r.ties),
                n: r.map_or(0, |r| r.n),
                ratio: r.and_then(|r| r.ratio),
                p_value: r.and_then(|r| r.p_value),
                significant: r.is_some_and(|r| r.significant),
            }
        })
        .collect();
    let uniform = |f: fn(&EvalSession) -> &String| {
        let first = f(sessions[0].0);
        sessions.iter().all(|(s, _)| f(s) == first).then(|| first.clone())
    };
    let expected: usize = sessions.iter().map(|(s, _)| s.pairs.len() * Criterion::ALL.len()).sum();
    Ok(ResultsReport {
        sessions: sessions.iter().map(|(s, _)| s.session_id.clone()).collect(),
        system_a: uniform(|s| &s.system_a),
        system_b: uniform(|s| &s.system_b),
        test: TEST_NAME.into(),
        alpha: ALPHA,
        n_judgments: judgments.len(),
        expected_judgments: expected,
        complete: judgments.len() == expected,
        criteria,
    })
}

fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

struct Slot {
    session: EvalSession,
    log: Mutex<JudgmentLog>,
}

/// Sessions and judgments, persisted under `<data_dir>/sessions/<id>/`.
///
/// Judgment files are rewritten through a temp file and an atomic rename
/// on every submission, so a crash leaves either the old or the new log.
pub struct SessionStore {
    root: PathBuf,
    slots: RwLock<HashMap<String, Arc<Slot>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewSession {
    pub judge_id: String,
    pub system_a: String,
    pub system_b: String,
    pub n_pairs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub judge_id: String,
    pub n_pairs: usize,
    pub criteria: Vec<CriterionInfo>,
    pub n_judgments: usize,
    pub expected_judgments: usize,
    /// First pair with a criterion still unjudged.
    pub next_pair: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub seq: u64,
    pub replaced: bool,
}

fn storage(e: impl fmt::Display) -> BenchError {
    BenchError::Storage(e.to_string())
}

impl SessionStore {
    /// Opens the store, loading every session already on disk.
    pub fn open(data_dir: &Path) -> Result<SessionStore, BenchError> {
        let root = data_dir.join("sessions");
        std::fs::create_dir_all(&root).map_err(storage)?;
        let mut slots = HashMap::new();
        for entry in std::fs::read_dir(&root).map_err(storage)? {
            let dir = entry.map_err(storage)?.path();
            let file = dir.join("session.json");
            if !file.is_file() {
                continue;
            }
            let session: EvalSession =
                serde_json::from_slice(&std::fs::read(&file).map_err(storage)?).map_err(storage)?;
            let log_path = dir.join("judgments.jsonl");
            let entries = if log_path.is_file() {
                read_jsonl::<JudgmentEntry>(&log_path).map_err(storage)?.1
            } else {
                Vec::new()
            };
            slots.insert(
                session.session_id.clone(),
                Arc::new(Slot {
                    session,
                    log: Mutex::new(JudgmentLog { entries }),
                }),
            );
        }
        Ok(SessionStore {
            root,
            slots: RwLock::new(slots),
        })
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, BenchError> {
        self.slots
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| BenchError::UnknownSession(id.to_string()))
    }

    pub fn create(
        &self,
        records_a: &[DialogueRecord],
        records_b: &[DialogueRecord],
        req: &NewSession,
    ) -> Result<EvalSession, BenchError> {
        let pairs = pair_records(records_a, records_b, req.n_pairs, req.seed)?;
        let session = EvalSession {
            session_id: format!("s-{:016x}", rand::random::<u64>()),
            judge_id: req.judge_id.clone(),
            system_a: req.system_a.clone(),
            system_b: req.system_b.clone(),
            seed: req.seed,
            created_unix: now_ms() / 1000,
            pairs,
        };
        let dir = self.root.join(&session.session_id);
        let json = serde_json::to_vec(&session).map_err(storage)?;
        atomic_write(&dir.join("session.json"), &json).map_err(storage)?;
        atomic_write(&dir.join("judgments.jsonl"), b"").map_err(storage)?;
        self.slots.write().expect("session map poisoned").insert(
            session.session_id.clone(),
            Arc::new(Slot {
                session: session.clone(),
                log: Mutex::new(JudgmentLog::default()),
            }),
        );
        Ok(session)
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .slots
            .read()
            .expect("session map poisoned")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    pub fn summary(&self, id: &str) -> Result<SessionSummary, BenchError> {
        let slot = self.slot(id)?;
        let log = slot.log.lock().expect("judgment log poisoned");
        let effective = log.effective();
        let n_pairs = slot.session.pairs.len();
        let next_pair = (0..n_pairs).find(|&p| Criterion::ALL.iter().any(|&c| !effective.contains_key(&(p, c))));
        Ok(SessionSummary {
            session_id: slot.session.session_id.clone(),
            judge_id: slot.session.judge_id.clone(),
            n_pairs,
            criteria: criteria_info(),
            n_judgments: effective.len(),
            expected_judgments: n_pairs * Criterion::ALL.len(),
            next_pair,
        })
    }

    pub fn pair_view(&self, id: &str, index: usize) -> Result<PairView, BenchError> {
        let slot = self.slot(id)?;
        let n_pairs = slot.session.pairs.len();
        let pair = slot
            .session
            .pairs
            .get(index)
            .ok_or(BenchError::InvalidPairIndex { index, n_pairs })?;
        let (left, right) = if pair.a_on_left {
            (&pair.dialogue_a, &pair.dialogue_b)
        } else {
            (&pair.dialogue_b, &pair.dialogue_a)
        };
        let persona = &pair.dialogue_a.persona;
        let log = slot.log.lock().expect("judgment log poisoned");
        let judgments = log
            .effective()
            .into_iter()
            .filter(|((p, _), _)| *p == index)
            .map(|((_, c), e)| (c, e.choice))
            .collect();
        Ok(PairView {
            session_id: id.to_string(),
            pair_index: index,
            n_pairs,
            persona: PersonaView {
                general_preferences: persona.general_preferences.clone(),
                history: persona.history.to_vec(),
                target_attributes: persona.target_attributes.clone(),
            },
            left: turn_views(left),
            right: turn_views(right),
            criteria: criteria_info(),
            judgments,
        })
    }

    /// Records one judgment. Re-judging a (pair, criterion) appends a new
    /// entry pointing at the one it replaces.
    pub fn submit(&self, id: &str, pair_index: usize, criterion: &str, choice: Choice) -> Result<Ack, BenchError> {
        let criterion: Criterion = criterion.parse()?;
        let slot = self.slot(id)?;
        let n_pairs = slot.session.pairs.len();
        if pair_index >= n_pairs {
            return Err(BenchError::InvalidPairIndex {
                index: pair_index,
                n_pairs,
            });
        }
        let mut log = slot.log.lock().expect("judgment log poisoned");
        let replaces = log.latest(pair_index, criterion);
        let entry = JudgmentEntry {
            seq: log.entries.len() as u64,
            session_id: id.to_string(),
            pair_index,
            criterion,
            choice,
            judge_id: slot.session.judge_id.clone(),
            timestamp_ms: now_ms(),
            replaces,
        };
        let mut body = Vec::new();
        for e in log.entries.iter().chain(std::iter::once(&entry)) {
            serde_json::to_writer(&mut body, e).map_err(storage)?;
            body.push(b'\n');
        }
        atomic_write(&self.root.join(id).join("judgments.jsonl"), &body).map_err(storage)?;
        let ack = Ack {
            seq: entry.seq,
            replaced: replaces.is_some(),
        };
        log.entries.push(entry);
        Ok(ack)
    }

    /// Full judgment history of a session, superseded entries included.
    pub fn audit(&self, id: &str) -> Result<Vec<JudgmentEntry>, BenchError> {
        let slot = self.slot(id)?;
        let log = slot.log.lock().expect("judgment log poisoned");
        Ok(log.entries.clone())
    }

    pub fn session(&self, id: &str) -> Result<EvalSession, BenchError> {
        Ok(self.slot(id)?.session.clone())
    }

    /// Results for one session, or for every session when `id` is `None`.
    pub fn results(&self, id: Option<&str>) -> Result<ResultsReport, BenchError> {
        let slots: Vec<Arc<Slot>> = match id {
            Some(id) => vec![self.slot(id)?],
            None => {
                let map = self.slots.read().expect("session map poisoned");
                let mut all: Vec<Arc<Slot>> = map.values().cloned().collect();
                all.sort_by(|a, b| a.session.session_id.cmp(&b.session.session_id));
                all
            }
        };
        if slots.is_empty() {
            return Err(BenchError::NoJudgments);
        }
        let logs: Vec<JudgmentLog> = slots
            .iter()
            .map(|s| s.log.lock().expect("judgment log poisoned").clone())
            .collect();
        let pairs: Vec<(&EvalSession, &JudgmentLog)> = slots.iter().zip(&logs).map(|(s, l)| (&s.session, l)).collect();
        results(&pairs)
    }
}
