//! User personas: preference summary, three watched movies with reviews, and
//! title-free target attributes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::find_ci;

/// Replacement for a withheld title.
pub const TITLE_PLACEHOLDER: &str = "this movie";

/// Number of history movies carried by every persona.
pub const HISTORY_LEN: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryMovie {
    pub title: String,
    pub review: String,
}

/// Item the user was originally steered towards; used only for evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundTruth {
    pub item_id: String,
    pub title: String,
}

/// Raw persona fields as they appear in a dataset record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaSource {
    pub user_id: String,
    pub general_preferences: String,
    pub history: Vec<HistoryMovie>,
    pub target_attributes: String,
}

/// Full user-side context. Only the user simulator ever sees this type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub user_id: String,
    pub general_preferences: String,
    pub history: [HistoryMovie; HISTORY_LEN],
    pub target_attributes: String,
}

/// The persona with target attributes removed. This is all the recommender
/// side is ever handed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicPersona {
    pub user_id: String,
    pub general_preferences: String,
    pub history: [HistoryMovie; HISTORY_LEN],
}

impl Persona {
    pub fn public(&self) -> PublicPersona {
        PublicPersona {
            user_id: self.user_id.clone(),
            general_preferences: self.general_preferences.clone(),
            history: self.history.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PersonaError {
    #[error("persona {user_id} has {found} history movies, need {HISTORY_LEN}")]
    InsufficientHistory { user_id: String, found: usize },
    #[error("persona {user_id}: history entry {index} has an empty title or review")]
    EmptyHistoryEntry { user_id: String, index: usize },
    #[error("persona {user_id}: target attributes reveal the ground-truth title `{title}`")]
    LeakedTitle { user_id: String, title: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Redaction {
    /// Replace leaked titles with the placeholder.
    #[default]
    Enabled,
    /// Reject records whose attributes mention the title.
    Disabled,
}

/// Strips a trailing `(YYYY)` release-year parenthetical, if any.
pub fn strip_year(title: &str) -> &str {
    let trimmed = title.trim_end();
    let bytes = trimmed.as_bytes();
    if bytes.len() >= 6
        && bytes[bytes.len() - 1] == b')'
        && bytes[bytes.len() - 6] == b'('
        && bytes[bytes.len() - 5..bytes.len() - 1].iter().all(u8::is_ascii_digit)
    {
        trimmed[..trimmed.len() - 6].trim_end()
    } else {
        trimmed
    }
}

/// Title variants that must never appear in title-free text.
fn title_variants(title: &str) -> Vec<&str> {
    let full = title.trim();
    let bare = strip_year(full);
    let mut variants = vec![full];
    if bare != full && !bare.is_empty() {
        variants.push(bare);
    }
    variants.retain(|v| !v.is_empty());
    variants
}

/// True if `text` mentions `title` (or its year-less form), ignoring case.
pub fn mentions_title(text: &str, title: &str) -> bool {
    title_variants(title).into_iter().any(|v| !find_ci(text, v).is_empty())
}

fn redact_once(text: &str, variants: &[&str]) -> String {
    // Existing placeholders are left untouched so a title that overlaps the
    // placeholder text cannot be re-expanded on a second pass.
    let protected = find_ci(text, TITLE_PLACEHOLDER);
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    let mut segments: Vec<(std::ops::Range<usize>, bool)> = Vec::new();
    for p in protected {
        if p.start > cursor {
            segments.push((cursor..p.start, false));
        }
        segments.push((p.clone(), true));
        cursor = p.end;
    }
    if cursor < text.len() {
        segments.push((cursor..text.len(), false));
    }
    for (range, is_placeholder) in segments {
        let segment = &text[range];
        if is_placeholder {
            out.push_str(segment);
        } else {
            out.push_str(&redact_segment(segment, variants));
        }
    }
    out
}

fn redact_segment(segment: &str, variants: &[&str]) -> String {
    // Leftmost-longest over all variants, so "Heat (1995)" is replaced whole
    // rather than as "Heat" followed by a stray year.
    let mut hits: Vec<_> = variants.iter().flat_map(|v| find_ci(segment, v)).collect();
    hits.sort_by_key(|r| (r.start, std::cmp::Reverse(r.end)));
    let mut out = String::with_capacity(segment.len());
    let mut cursor = 0;
    for r in hits {
        if r.start < cursor {
            continue;
        }
        out.push_str(&segment[cursor..r.start]);
        out.push_str(TITLE_PLACEHOLDER);
        cursor = r.end;
    }
    out.push_str(&segment[cursor..]);
    out
}

/// Replaces every case-insensitive occurrence of `title`, and of `title`
/// without its trailing year, with [`TITLE_PLACEHOLDER`]. Idempotent.
pub fn redact_title(text: &str, title: &str) -> String {
    let variants = title_variants(title);
    if variants.is_empty() {
        return text.to_string();
    }
    let mut current = text.to_string();
    // A single pass can expose new matches only for titles that overlap the
    // placeholder itself; iterate to the fixpoint.
    for _ in 0..8 {
        let next = redact_once(&current, &variants);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

/// Builds the persona for one dataset record.
///
/// History order is kept as given (the first three entries are used). With
/// redaction enabled, the ground-truth title is scrubbed from the target
/// attributes; otherwise a mention is rejected.
pub fn build_persona(
    source: &PersonaSource,
    ground_truth: &GroundTruth,
    redaction: Redaction,
) -> Result<Persona, PersonaError> {
    if source.history.len() < HISTORY_LEN {
        return Err(PersonaError::InsufficientHistory {
            user_id: source.user_id.clone(),
            found: source.history.len(),
        });
    }
    for (index, movie) in source.history.iter().take(HISTORY_LEN).enumerate() {
        if movie.title.trim().is_empty() || movie.review.trim().is_empty() {
            return Err(PersonaError::EmptyHistoryEntry {
                user_id: source.user_id.clone(),
                index,
            });
        }
    }
    let leaked = || PersonaError::LeakedTitle {
        user_id: source.user_id.clone(),
        title: ground_truth.title.clone(),
    };
    let target_attributes = match redaction {
        Redaction::Enabled => redact_title(&source.target_attributes, &ground_truth.title),
        Redaction::Disabled => {
            if mentions_title(&source.target_attributes, &ground_truth.title) {
                return Err(leaked());
            }
            source.target_attributes.clone()
        }
    };
    if mentions_title(&target_attributes, &ground_truth.title) {
        return Err(leaked());
    }
    let history: [HistoryMovie; HISTORY_LEN] = [
        source.history[0].clone(),
        source.history[1].clone(),
        source.history[2].clone(),
    ];
    Ok(Persona {
        user_id: source.user_id.clone(),
        general_preferences: source.general_preferences.clone(),
        history,
        target_attributes,
    })
}
