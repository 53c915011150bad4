//! Dataset ingestion, filtering, and export of role-masked training views.
//!
//! Each source dialogue yields two views over the same message sequence.
//! The user view flags user messages for loss; the recommender view flags
//! recommender messages. Loss flags are per message, and the consuming
//! trainer expands them to token masks with its own tokenizer.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::LineResult;
use crate::metrics::titles::{normalize_title, TitleMode};
use crate::parallel::ordered_map;
use crate::persona::{build_persona, GroundTruth, PersonaError, PersonaSource, Redaction};
use crate::prompt::{rec_context, user_context};
use crate::protocol::{parse_turn, title_spans, ProtocolError, Role};
use crate::text::contains_ci;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceTurn {
    pub role: Role,
    pub text: String,
}

/// One dataset conversation, one per line in source files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDialogue {
    pub dialogue_id: String,
    #[serde(flatten)]
    pub persona: PersonaSource,
    pub ground_truth: GroundTruth,
    #[serde(default)]
    pub turns: Vec<SourceTurn>,
}

/// A catalog line: `{"item_id": ..., "title": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub item_id: String,
    pub title: String,
}

/// Known items, looked up by id or by strictly normalized title.
#[derive(Debug, Clone, Default)]
pub struct CatalogIndex {
    ids: HashSet<String>,
    titles: HashMap<String, String>,
}

impl CatalogIndex {
    pub fn new(entries: impl IntoIterator<Item = CatalogEntry>) -> Self {
        let mut index = CatalogIndex::default();
        for e in entries {
            index
                .titles
                .entry(normalize_title(&e.title, TitleMode::Strict))
                .or_insert_with(|| e.item_id.clone());
            index.ids.insert(e.item_id);
        }
        index
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn contains_title(&self, title: &str) -> bool {
        self.titles.contains_key(&normalize_title(title, TitleMode::Strict))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    /// A turn with no text.
    EmptyTurn,
    /// A conversation with no turns at all.
    ZeroTurns,
    /// Mentions a movie the catalog does not know.
    OffCatalog,
    /// Undecodable line or duplicate dialogue id.
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropEntry {
    /// Dialogue id, or `line N` when the record could not be decoded.
    pub record: String,
    pub reason: DropReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total: usize,
    pub kept: usize,
    pub dropped_empty_turn: usize,
    pub dropped_zero_turns: usize,
    pub dropped_off_catalog: usize,
    pub dropped_malformed: usize,
    /// dropped / total; 0 for an empty input.
    pub filtered_fraction: f64,
    pub drops: Vec<DropEntry>,
}

fn check_dialogue(d: &SourceDialogue, catalog: &CatalogIndex) -> Result<(), (DropReason, String)> {
    if d.turns.is_empty() {
        return Err((DropReason::ZeroTurns, "conversation has no turns".into()));
    }
    if let Some(i) = d.turns.iter().position(|t| t.text.trim().is_empty()) {
        return Err((DropReason::EmptyTurn, format!("turn {} is empty", i + 1)));
    }
    let gt = &d.ground_truth;
    if !catalog.contains_id(&gt.item_id) && !catalog.contains_title(&gt.title) {
        return Err((
            DropReason::OffCatalog,
            format!("ground truth `{}` not in catalog", gt.title),
        ));
    }
    for movie in &d.persona.history {
        if !catalog.contains_title(&movie.title) {
            return Err((
                DropReason::OffCatalog,
                format!("history movie `{}` not in catalog", movie.title),
            ));
        }
    }
    for turn in &d.turns {
        for title in title_spans(&turn.text) {
            if !catalog.contains_title(title) {
                return Err((
                    DropReason::OffCatalog,
                    format!("mentioned movie `{title}` not in catalog"),
                ));
            }
        }
    }
    Ok(())
}

/// Drops dialogues with empty turns (or no turns), dialogues mentioning
/// movies outside `catalog`, and malformed records. Order is preserved.
pub fn filter_corpus(
    entries: impl IntoIterator<Item = LineResult<SourceDialogue>>,
    catalog: &CatalogIndex,
) -> (Vec<SourceDialogue>, FilterReport) {
    let mut kept = Vec::new();
    let mut drops = Vec::new();
    let mut seen = HashSet::new();
    let mut total = 0;
    for entry in entries {
        total += 1;
        let dialogue = match entry {
            Ok(d) => d,
            Err((line, message)) => {
                drops.push(DropEntry {
                    record: format!("line {line}"),
                    reason: DropReason::Malformed,
                    detail: message,
                });
                continue;
            }
        };
        if !seen.insert(dialogue.dialogue_id.clone()) {
            drops.push(DropEntry {
                record: dialogue.dialogue_id.clone(),
                reason: DropReason::Malformed,
                detail: "duplicate dialogue id".into(),
            });
            continue;
        }
        match check_dialogue(&dialogue, catalog) {
            Ok(()) => kept.push(dialogue),
            Err((reason, detail)) => drops.push(DropEntry {
                record: dialogue.dialogue_id.clone(),
                reason,
                detail,
            }),
        }
    }
    let count = |r: DropReason| drops.iter().filter(|d| d.reason == r).count();
    let report = FilterReport {
        total,
        kept: kept.len(),
        dropped_empty_turn: count(DropReason::EmptyTurn),
        dropped_zero_turns: count(DropReason::ZeroTurns),
        dropped_off_catalog: count(DropReason::OffCatalog),
        dropped_malformed: count(DropReason::Malformed),
        filtered_fraction: if total == 0 {
            0.0
        } else {
            drops.len() as f64 / total as f64
        },
        drops,
    };
    (kept, report)
}

/// Convenience wrapper for already-decoded dialogues.
pub fn filter_dialogues(
    dialogues: impl IntoIterator<Item = SourceDialogue>,
    catalog: &CatalogIndex,
) -> (Vec<SourceDialogue>, FilterReport) {
    filter_corpus(dialogues.into_iter().map(Ok), catalog)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewMessage {
    pub role: Role,
    pub text: String,
    pub loss: bool,
}

/// A dialogue rendered for training one role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedView {
    pub dialogue_id: String,
    pub view_role: Role,
    pub context: String,
    pub messages: Vec<ViewMessage>,
}

impl MaskedView {
    /// 1-based indices of loss-flagged messages.
    pub fn loss_positions(&self) -> Vec<usize> {
        self.messages
            .iter()
            .enumerate()
            .filter(|(_, m)| m.loss)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("dialogue {dialogue_id}: turn {index} does not parse: {source}")]
    UnparseableTurn {
        dialogue_id: String,
        index: usize,
        #[source]
        source: ProtocolError,
    },
    #[error("dialogue {dialogue_id}: {source}")]
    Persona {
        dialogue_id: String,
        #[source]
        source: PersonaError,
    },
    #[error("dialogue {dialogue_id}: recommender context leaks {what}")]
    OracleLeak { dialogue_id: String, what: String },
}

/// Merges consecutive same-role turns with a newline join.
fn merged_messages(turns: &[SourceTurn]) -> Vec<(Role, String)> {
    let mut out: Vec<(Role, String)> = Vec::new();
    for t in turns {
        match out.last_mut() {
            Some((role, text)) if *role == t.role => {
                text.push('\n');
                text.push_str(&t.text);
            }
            _ => out.push((t.role, t.text.clone())),
        }
    }
    out
}

/// Target-side strings found in a recommender context, if any.
pub fn rec_context_leaks(context: &str, ground_truth: &GroundTruth, target_attributes: &str) -> Vec<String> {
    let mut leaks = Vec::new();
    if !ground_truth.title.trim().is_empty() && contains_ci(context, ground_truth.title.trim()) {
        leaks.push(format!("ground-truth title `{}`", ground_truth.title));
    }
    let attrs = target_attributes.trim();
    if !attrs.is_empty() && contains_ci(context, attrs) {
        leaks.push("target attributes".to_string());
    }
    leaks
}

/// Renders the user-view and recommender-view of one dialogue.
pub fn export_masked_views(dialogue: &SourceDialogue) -> Result<(MaskedView, MaskedView), CorpusError> {
    for (i, t) in dialogue.turns.iter().enumerate() {
        parse_turn(&t.text, t.role).map_err(|source| CorpusError::UnparseableTurn {
            dialogue_id: dialogue.dialogue_id.clone(),
            index: i + 1,
            source,
        })?;
    }
    let persona = build_persona(&dialogue.persona, &dialogue.ground_truth, Redaction::Enabled).map_err(|source| {
        CorpusError::Persona {
            dialogue_id: dialogue.dialogue_id.clone(),
            source,
        }
    })?;
    let rec_ctx = rec_context(&persona.public());
    let leaks = rec_context_leaks(&rec_ctx, &dialogue.ground_truth, &persona.target_attributes);
    if !leaks.is_empty() {
        return Err(CorpusError::OracleLeak {
            dialogue_id: dialogue.dialogue_id.clone(),
            what: leaks.join(", "),
        });
    }
    let messages = merged_messages(&dialogue.turns);
    let view = |role: Role, context: String| MaskedView {
        dialogue_id: dialogue.dialogue_id.clone(),
        view_role: role,
        context,
        messages: messages
            .iter()
            .map(|(r, text)| ViewMessage {
                role: *r,
                text: text.clone(),
                loss: *r == role,
            })
            .collect(),
    };
    Ok((
        view(Role::User, user_context(&persona)),
        view(Role::Recommender, rec_ctx),
    ))
}

/// Exports every dialogue on up to `jobs` workers, in input order.
pub fn export_all(dialogues: Vec<SourceDialogue>, jobs: usize) -> Vec<Result<(MaskedView, MaskedView), CorpusError>> {
    ordered_map(dialogues, jobs, |_, d| export_masked_views(&d))
}
